//! Executable checks of the global safety bound for perfect-perception
//! shields: the tight worst-case system, the entrapment family, the bound
//! itself on random models, and the occupancy-vector lemmas behind it.

use std::collections::BTreeSet;
use std::fmt::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::mdp::{
    bounded_reach, enumerate_path_prob, make_absorbing, path_marginals, step_occupancy, ActionId, ExplicitMdp,
    MdpBuilder, OccupancyVector, Opt, PolicyMemoryless, StateId,
};
use crate::shield::{synth_sigma, SigmaTable};

/// Numerical slack allowed on top of the bound.
pub const BOUND_TOLERANCE: f64 = 1e-12;

/// `1 - (1 - λ)^{n'}`.
pub fn safety_bound(lambda: f64, n_prime: usize) -> f64 {
    1.0 - (1.0 - lambda).powi(n_prime as i32)
}

/// Two states: `s0` unsafe and absorbing, `s1` initial with a safe self-loop
/// `a0` and a risky `a1` that fails with probability λ.
pub fn build_worst_case(lambda: f64) -> Result<ExplicitMdp> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    MdpBuilder::new(2, ["a0", "a1"])
        .self_loop(0, 0)
        .self_loop(1, 0)
        .transition(1, 1, &[(0, lambda), (1, 1.0 - lambda)])
        .label("unsafe", [0])
        .initial(StateId(1))
        .build()
}

/// Index of the tempting action in [`build_entrapment`] models.
pub const TEMPT: ActionId = ActionId(1);

/// A start state with a safe self-loop (`stay`) and a tempting action that
/// enters a chain `c1 .. cn` with probability `x = λ/(λ+ε)` and otherwise
/// stays put. The chain runs deterministically forward (`go`); from `cn` the
/// system fails with probability `λ+ε` and otherwise reaches a safe sink.
///
/// Every chain action has unsafety `λ+ε > λ`, so the chain is stuck, while
/// the tempting action has unsafety exactly `x(λ+ε) = λ` and is allowed.
///
/// States: `0` unsafe, `1` start, `2..=n+1` the chain, `n+2` sink.
pub fn build_entrapment(lambda: f64, epsilon: f64, n: usize) -> Result<ExplicitMdp> {
    if !(epsilon > 0.0 && lambda >= 0.0 && lambda + epsilon <= 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < epsilon and lambda + epsilon <= 1 (lambda={lambda}, epsilon={epsilon})"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("chain length must be at least 1"));
    }
    let risk = lambda + epsilon;
    let x = lambda / risk;
    let start = 1;
    let sink = n + 2;
    let mut names = vec!["unsafe".to_string(), "start".to_string()];
    names.extend((1..=n).map(|i| format!("c{i}")));
    names.push("sink".to_string());
    let mut b = MdpBuilder::new(n + 3, ["stay", "tempt", "go"])
        .names(names)
        .self_loop(0, 0)
        .self_loop(start, 0)
        .self_loop(sink, 0)
        .label("unsafe", [0])
        .initial(StateId(start));
    let mut tempt = vec![(StateId(2), x)];
    if x < 1.0 {
        tempt.push((StateId(start), 1.0 - x));
    }
    b.add(StateId(start), TEMPT, tempt);
    for c in 2..=n {
        b.add(StateId(c), ActionId(2), [(StateId(c + 1), 1.0)]);
    }
    let mut last = vec![(StateId(0), risk)];
    if risk < 1.0 {
        last.push((StateId(sink), 1.0 - risk));
    }
    b.add(StateId(n + 1), ActionId(2), last);
    b.build()
}

/// Probability of landing in a stuck state with one step of `a` from `s`.
pub fn one_step_stuck(m: &ExplicitMdp, st: &SigmaTable, lambda: f64, s: StateId, a: ActionId) -> Result<f64> {
    let stuck = st.view(lambda).classify_states().s_nabla;
    let row = m
        .row(s, a)
        .ok_or_else(|| Error::invalid(format!("action {a} not available in state {s}")))?;
    Ok(row.iter().filter(|(t, _)| stuck.contains(t)).map(|&(_, p)| p).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Report {
    pub initially_safe: bool,
    pub no_stuck: bool,
    pub lambda: f64,
    pub lookahead: usize,
    pub horizon: usize,
    pub max_unsafe: f64,
    pub bound: f64,
    pub satisfied: bool,
}

impl Theorem1Report {
    pub fn assumptions_hold(&self) -> bool {
        self.initially_safe && self.no_stuck
    }

    /// `name=... value=... bound=... pass|fail`.
    pub fn to_line(&self, name: &str) -> String {
        report_line(name, self.max_unsafe, self.bound, self.satisfied)
    }
}

pub fn report_line(name: &str, value: f64, bound: f64, pass: bool) -> String {
    format!(
        "name={name} value={} bound={} {}",
        g17(value),
        g17(bound),
        if pass { "pass" } else { "fail" }
    )
}

/// Synthesise the shield at lookahead `n`, check the two assumptions and
/// compute the largest unsafe probability within `n_prime` steps over all
/// shielded (time-varying) policies. States with an empty shield keep all
/// their actions.
pub fn verify_theorem1(
    m: &ExplicitMdp,
    unsafe_states: &BTreeSet<StateId>,
    lambda: f64,
    n: usize,
    n_prime: usize,
) -> Result<Theorem1Report> {
    let st = synth_sigma(m, unsafe_states, n)?;
    Ok(verify_with_table(m, &st, lambda, n_prime))
}

fn verify_with_table(m: &ExplicitMdp, st: &SigmaTable, lambda: f64, n_prime: usize) -> Theorem1Report {
    let view = st.view(lambda);
    let part = view.classify_states();
    let initially_safe = part.s_delta.contains(&m.initial());
    let no_stuck = view.reachable_under_shield(m).is_disjoint(&part.s_nabla);
    let restricted = view.restrict(m);
    let max_unsafe = bounded_reach(&restricted, st.unsafe_states(), n_prime, Opt::Max).at(m.initial());
    let bound = safety_bound(lambda, n_prime);
    let satisfied = !(initially_safe && no_stuck) || max_unsafe <= bound + BOUND_TOLERANCE;
    Theorem1Report {
        initially_safe,
        no_stuck,
        lambda,
        lookahead: st.lookahead(),
        horizon: n_prime,
        max_unsafe,
        bound,
        satisfied,
    }
}

/// Shape of the random models used by the sweeps.
#[derive(Clone, Copy, Debug)]
pub struct RandomMdpSpec {
    pub max_states: usize,
    pub actions: usize,
    /// Largest number of successors per row.
    pub max_support: usize,
}

impl Default for RandomMdpSpec {
    fn default() -> Self {
        RandomMdpSpec {
            max_states: 4,
            actions: 2,
            max_support: 3,
        }
    }
}

/// A random model with 2 to `max_states` states, every action available
/// everywhere, state 0 labelled `unsafe` and a random non-zero initial state.
/// Rows put random weights on a random support; about a third of the rows
/// are deterministic.
pub fn random_mdp(spec: RandomMdpSpec, seed: u64) -> ExplicitMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=spec.max_states.max(2));
    let actions: Vec<String> = (0..spec.actions).map(|a| format!("a{a}")).collect();
    let mut b = MdpBuilder::new(n, actions).label("unsafe", [0]);
    for s in 0..n {
        for a in 0..spec.actions {
            let support = if rng.random::<f64>() < 1.0 / 3.0 {
                1
            } else {
                rng.random_range(1..=spec.max_support.min(n))
            };
            let mut targets: Vec<usize> = (0..n).collect();
            for i in 0..support {
                let j = rng.random_range(i..n);
                targets.swap(i, j);
            }
            let weights: Vec<f64> = (0..support).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            b.add(
                StateId(s),
                ActionId(a),
                targets[..support]
                    .iter()
                    .zip(&weights)
                    .map(|(&t, &w)| (StateId(t), w / total)),
            );
        }
    }
    b.initial(StateId(rng.random_range(1..n)))
        .build()
        .expect("random rows are stochastic")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: usize,
    pub lambda: f64,
    pub n: usize,
    pub n_prime: usize,
    pub max_unsafe: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    /// Models drawn in total and models kept.
    pub drawn: usize,
    pub kept: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,n,n_prime,max_unsafe,bound,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                g17(r.lambda),
                r.n,
                r.n_prime,
                g17(r.max_unsafe),
                g17(r.bound),
                r.pass
            );
        }
        out
    }
}

/// Draw random models with seeds `seed, seed+1, ...` and keep those for which
/// the assumptions hold at every `(λ, n)` of the grid, until `count` are kept
/// (or `100 * count` have been drawn). Every kept model is checked at every
/// grid point and every horizon in `n_primes`.
pub fn theorem1_sweep(
    spec: RandomMdpSpec,
    count: usize,
    seed: u64,
    lambdas: &[f64],
    ns: &[usize],
    n_primes: &[usize],
) -> SweepReport {
    let limit = 100 * count.max(1);
    let mut kept = Vec::new();
    let mut drawn = 0;
    // draw in batches so the filter can run in parallel
    while kept.len() < count && drawn < limit {
        let batch = (count - kept.len()).max(16).min(limit - drawn);
        let results: Vec<Option<Vec<SweepRow>>> = (drawn..drawn + batch)
            .into_par_iter()
            .map(|i| sweep_one(spec, i, seed.wrapping_add(i as u64), lambdas, ns, n_primes))
            .collect();
        drawn += batch;
        for rows in results.into_iter().flatten() {
            if kept.len() < count {
                kept.push(rows);
            }
        }
    }
    SweepReport {
        drawn,
        kept: kept.len(),
        rows: kept.into_iter().flatten().collect(),
    }
}

fn sweep_one(
    spec: RandomMdpSpec,
    index: usize,
    seed: u64,
    lambdas: &[f64],
    ns: &[usize],
    n_primes: &[usize],
) -> Option<Vec<SweepRow>> {
    let m = random_mdp(spec, seed);
    let unsafe_states = m.label("unsafe").ok()?.clone();
    let mut rows = Vec::new();
    for &n in ns {
        let st = synth_sigma(&m, &unsafe_states, n).ok()?;
        for &lambda in lambdas {
            for &n_prime in n_primes {
                let r = verify_with_table(&m, &st, lambda, n_prime);
                if !r.assumptions_hold() {
                    return None;
                }
                rows.push(SweepRow {
                    model: index,
                    lambda,
                    n,
                    n_prime,
                    max_unsafe: r.max_unsafe,
                    bound: r.bound,
                    pass: r.satisfied,
                });
            }
        }
    }
    Some(rows)
}

/// Largest residuals of the three occupancy-vector lemmas.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LemmaReport {
    /// Occupancy iteration vs path-enumeration marginals.
    pub occupancy: f64,
    /// Unsafe-hit probability on the model vs its absorbing transform.
    pub absorbing: f64,
    /// Hit probability vs final unsafe mass on the absorbing transform.
    pub final_mass: f64,
    pub checks: usize,
}

impl LemmaReport {
    pub fn max_residual(&self) -> f64 {
        self.occupancy.max(self.absorbing).max(self.final_mass)
    }

    pub fn merge(&mut self, other: &LemmaReport) {
        self.occupancy = self.occupancy.max(other.occupancy);
        self.absorbing = self.absorbing.max(other.absorbing);
        self.final_mass = self.final_mass.max(other.final_mass);
        self.checks += other.checks;
    }

    pub fn to_lines(&self, name: &str, tolerance: f64) -> Vec<String> {
        [
            ("occupancy", self.occupancy),
            ("absorbing", self.absorbing),
            ("final_mass", self.final_mass),
        ]
        .iter()
        .map(|&(lemma, v)| report_line(&format!("{name}.{lemma}"), v, tolerance, v <= tolerance))
        .collect()
    }
}

/// Default largest horizon for [`check_lemmas`].
pub const LEMMA_HORIZON: usize = 6;

/// Compare occupancy iteration against path enumeration for `trials` random
/// memoryless policies (trial `i` uses seed `seed + i`) at horizons
/// `0..=LEMMA_HORIZON`.
pub fn check_lemmas(
    m: &ExplicitMdp,
    unsafe_states: &BTreeSet<StateId>,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    check_lemmas_to(m, unsafe_states, trials, seed, LEMMA_HORIZON)
}

pub fn check_lemmas_to(
    m: &ExplicitMdp,
    unsafe_states: &BTreeSet<StateId>,
    trials: usize,
    seed: u64,
    max_horizon: usize,
) -> Result<LemmaReport> {
    let absorbing = make_absorbing(m, unsafe_states);
    let mut report = LemmaReport::default();
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let choice = m
            .states()
            .map(|s| {
                let cs = m.choices(s);
                cs[rng.random_range(0..cs.len())].action
            })
            .collect();
        let pi = PolicyMemoryless::new(m, choice)?;
        let pi_abs = pi.adapted_to(&absorbing);
        let mut d = OccupancyVector::point(m.state_count(), m.initial());
        let mut d_abs = d.clone();
        for h in 0..=max_horizon {
            let marginals = path_marginals(m, &pi, m.initial(), h)?;
            let l1 = d
                .entries()
                .iter()
                .zip(&marginals)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let hit = enumerate_path_prob(m, &pi, m.initial(), h, unsafe_states)?;
            let hit_abs = enumerate_path_prob(&absorbing, &pi_abs, m.initial(), h, unsafe_states)?;
            report.merge(&LemmaReport {
                occupancy: l1,
                absorbing: (hit - hit_abs).abs(),
                final_mass: (hit_abs - d_abs.mass(unsafe_states)).abs(),
                checks: 1,
            });
            d = step_occupancy(m, &pi, &d);
            d_abs = step_occupancy(&absorbing, &pi_abs, &d_abs);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shield::synth_sigma_for_label;

    #[test]
    fn worst_case_is_tight() {
        let m = build_worst_case(0.2).unwrap();
        let r = verify_theorem1(&m, m.label("unsafe").unwrap(), 0.2, 3, 5).unwrap();
        assert!(r.initially_safe && r.no_stuck && r.satisfied);
        assert!((r.max_unsafe - 0.67232).abs() < 1e-12);
        assert!((r.bound - 0.67232).abs() < 1e-12);
    }

    #[test]
    fn worst_case_policies() {
        let m = build_worst_case(0.3).unwrap();
        let unsafe_states = m.label("unsafe").unwrap();
        let risky = PolicyMemoryless::new(&m, vec![ActionId(0), ActionId(1)]).unwrap();
        let safe = PolicyMemoryless::first_available(&m);
        for h in 0..=8 {
            let p = enumerate_path_prob(&m, &risky, m.initial(), h, unsafe_states).unwrap();
            assert!((1.0 - p - 0.7f64.powi(h as i32)).abs() < 1e-12);
            assert_eq!(
                enumerate_path_prob(&m, &safe, m.initial(), h, unsafe_states).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn zero_threshold_means_zero_risk() {
        for seed in 0..50 {
            let m = random_mdp(RandomMdpSpec::default(), seed);
            let r = verify_theorem1(&m, m.label("unsafe").unwrap(), 0.0, 2, 6).unwrap();
            if r.assumptions_hold() {
                assert_eq!(r.max_unsafe, 0.0);
            }
        }
    }

    #[test]
    fn entrapment() {
        let lambda = 0.3;
        let mut last = 0.0;
        for eps in [0.1, 0.01, 0.001] {
            let m = build_entrapment(lambda, eps, 3).unwrap();
            let st = synth_sigma_for_label(&m, "unsafe", 3).unwrap();
            assert!((st.sigma(m.initial(), TEMPT).unwrap() - lambda).abs() < 1e-12);
            let p = one_step_stuck(&m, &st, lambda, m.initial(), TEMPT).unwrap();
            assert!((p - lambda / (lambda + eps)).abs() < 1e-12);
            assert!(p > last);
            last = p;
            let part = st.view(lambda).classify_states();
            assert!(part.s_delta.contains(&m.initial()));
            assert_eq!(part.s_nabla, (2..=4).map(StateId).collect());
            let r = verify_theorem1(&m, m.label("unsafe").unwrap(), lambda, 3, 4).unwrap();
            assert!(r.initially_safe && !r.no_stuck);
        }
    }

    #[test]
    fn full_grid_keeps_enough_models() {
        let r = theorem1_sweep(
            RandomMdpSpec::default(),
            200,
            1,
            &[0.1, 0.2, 0.3],
            &[1, 2, 3, 4],
            &[1, 8],
        );
        println!("drawn {} kept {}", r.drawn, r.kept);
        assert_eq!(r.kept, 200);
    }

    #[test]
    fn small_sweep_passes() {
        let r = theorem1_sweep(RandomMdpSpec::default(), 20, 7, &[0.1, 0.3], &[1, 2], &[1, 4, 8]);
        assert_eq!(r.kept, 20);
        assert!(r.all_pass());
        assert!(r.to_csv().starts_with("lambda,n,n_prime,max_unsafe,bound,pass\n"));
    }

    #[test]
    fn lemmas_on_a_cycle_are_exact() {
        let m = MdpBuilder::new(3, ["a"])
            .transition(0, 0, &[(1, 1.0)])
            .transition(1, 0, &[(2, 1.0)])
            .transition(2, 0, &[(0, 1.0)])
            .build()
            .unwrap();
        let r = check_lemmas(&m, &BTreeSet::from([StateId(2)]), 3, 1).unwrap();
        assert_eq!(r.max_residual(), 0.0);
        assert!(r.checks > 0);
    }

    #[test]
    fn lemmas_on_the_worst_case() {
        let m = build_worst_case(0.3).unwrap();
        let r = check_lemmas_to(&m, m.label("unsafe").unwrap(), 4, 9, 10).unwrap();
        assert!(r.final_mass <= 1e-12);
        assert!(r.max_residual() <= 1e-12);
    }
}
