//! Absolute shields from a finite-lookahead unsafety table.
//!
//! `σ(s, a)` is the best-case (minimising) probability of reaching the unsafe
//! states within `n` steps after taking `a` in `s`. A shield at threshold λ
//! allows exactly the actions with `σ(s, a) ≤ λ`; over a set of candidate
//! states it allows the actions every candidate allows.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::fmt::{g17, round12};
use crate::mdp::{bounded_reach, mask, ActionId, ExplicitMdp, Opt, StateId};
use crate::stateset::StateSet;

/// Default shield lookahead.
pub const DEFAULT_LOOKAHEAD: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaTable {
    lookahead: usize,
    unsafe_states: BTreeSet<StateId>,
    unsafe_label: String,
    /// Per state, `(action, σ)` for the available actions in action order.
    sigma: Vec<Vec<(ActionId, f64)>>,
}

/// Compute the unsafety table for lookahead `n ≥ 1`.
pub fn synth_sigma(m: &ExplicitMdp, unsafe_states: &BTreeSet<StateId>, n: usize) -> Result<SigmaTable> {
    synth_sigma_labelled(m, unsafe_states, n, "unsafe")
}

/// [`synth_sigma`] with the unsafe set taken from a model label.
pub fn synth_sigma_for_label(m: &ExplicitMdp, label: &str, n: usize) -> Result<SigmaTable> {
    let unsafe_states = m.label(label)?.clone();
    synth_sigma_labelled(m, &unsafe_states, n, label)
}

fn synth_sigma_labelled(
    m: &ExplicitMdp,
    unsafe_states: &BTreeSet<StateId>,
    n: usize,
    label: &str,
) -> Result<SigmaTable> {
    if n == 0 {
        return Err(Error::invalid("shield lookahead must be at least 1"));
    }
    if let Some(bad) = unsafe_states.iter().find(|s| s.0 >= m.state_count()) {
        return Err(Error::invalid(format!("unsafe state {bad} does not exist")));
    }
    let v_min = bounded_reach(m, unsafe_states, n, Opt::Min).values;
    let sigma = m
        .states()
        .map(|s| {
            m.choices(s)
                .iter()
                .map(|c| {
                    let v = c.successors.iter().fold(0.0, |acc, &(t, p)| acc + p * v_min[t.0]);
                    (c.action, v.clamp(0.0, 1.0))
                })
                .collect()
        })
        .collect();
    Ok(SigmaTable {
        lookahead: n,
        unsafe_states: unsafe_states.clone(),
        unsafe_label: label.to_string(),
        sigma,
    })
}

impl SigmaTable {
    pub fn lookahead(&self) -> usize {
        self.lookahead
    }

    pub fn unsafe_states(&self) -> &BTreeSet<StateId> {
        &self.unsafe_states
    }

    pub fn unsafe_label(&self) -> &str {
        &self.unsafe_label
    }

    pub fn state_count(&self) -> usize {
        self.sigma.len()
    }

    pub fn entries(&self, s: StateId) -> &[(ActionId, f64)] {
        &self.sigma[s.0]
    }

    /// `None` when `a` is not available in `s`.
    pub fn sigma(&self, s: StateId, a: ActionId) -> Option<f64> {
        self.sigma[s.0]
            .binary_search_by_key(&a, |&(b, _)| b)
            .ok()
            .map(|i| self.sigma[s.0][i].1)
    }

    pub fn view(&self, lambda: f64) -> ShieldView<'_> {
        ShieldView {
            table: self,
            lambda,
            lambda_key: round12(lambda),
        }
    }

    /// Check that the table was synthesised for a model with these states and
    /// available actions.
    pub fn check_matches(&self, m: &ExplicitMdp) -> Result<()> {
        if self.sigma.len() != m.state_count() {
            return Err(Error::invalid(format!(
                "sigma table has {} states, model has {}",
                self.sigma.len(),
                m.state_count()
            )));
        }
        for s in m.states() {
            let ours: Vec<ActionId> = self.sigma[s.0].iter().map(|&(a, _)| a).collect();
            let theirs: Vec<ActionId> = m.available(s).collect();
            if ours != theirs {
                return Err(Error::invalid(format!(
                    "sigma table actions for state {s} do not match the model"
                )));
            }
        }
        Ok(())
    }

    /// CSV with a metadata comment line, header `state,action,sigma` and
    /// 17-significant-digit probabilities.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# lookahead={} unsafe_label={}\nstate,action,sigma\n",
            self.lookahead, self.unsafe_label
        );
        for (s, row) in self.sigma.iter().enumerate() {
            for &(a, v) in row {
                let _ = writeln!(out, "{s},{a},{}", g17(v));
            }
        }
        out
    }

    /// Parse the CSV form back. The unsafe set is re-derived from `m`'s
    /// label named in the metadata line.
    pub fn from_csv(text: &str, origin: &str, m: &ExplicitMdp) -> Result<SigmaTable> {
        let mut lookahead = None;
        let mut label = None;
        let mut rows: Vec<Vec<(ActionId, f64)>> = vec![Vec::new(); m.state_count()];
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("lookahead", v)) => {
                            lookahead = Some(
                                v.parse::<usize>()
                                    .map_err(|_| Error::format(origin, lineno, format!("bad lookahead `{v}`")))?,
                            )
                        }
                        Some(("unsafe_label", v)) => label = Some(v.to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "state,action,sigma" {
                    return Err(Error::format(origin, lineno, "expected header `state,action,sigma`"));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [s, a, v] = fields.as_slice() else {
                return Err(Error::format(origin, lineno, "expected 3 fields"));
            };
            let bad = |what: &str| Error::format(origin, lineno, format!("bad {what}"));
            let s: usize = s.parse().map_err(|_| bad("state"))?;
            let a: usize = a.parse().map_err(|_| bad("action"))?;
            let v: f64 = v.parse().map_err(|_| bad("sigma"))?;
            if s >= rows.len() {
                return Err(Error::format(origin, lineno, format!("state {s} out of range")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::format(origin, lineno, "sigma outside [0, 1]"));
            }
            rows[s].push((ActionId(a), v));
        }
        let lookahead = lookahead.ok_or_else(|| Error::format(origin, 1, "missing lookahead metadata"))?;
        let label = label.ok_or_else(|| Error::format(origin, 1, "missing unsafe_label metadata"))?;
        for row in &mut rows {
            row.sort_by_key(|&(a, _)| a);
        }
        let table = SigmaTable {
            lookahead,
            unsafe_states: m.label(&label)?.clone(),
            unsafe_label: label,
            sigma: rows,
        };
        table.check_matches(m)?;
        Ok(table)
    }
}

/// A shield at threshold λ, viewed over a fixed table.
#[derive(Clone, Copy, Debug)]
pub struct ShieldView<'a> {
    table: &'a SigmaTable,
    lambda: f64,
    lambda_key: f64,
}

/// States with a non-empty shield, stuck states and unsafe states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatePartition {
    pub s_delta: BTreeSet<StateId>,
    pub s_nabla: BTreeSet<StateId>,
    pub s_unsafe: BTreeSet<StateId>,
}

impl<'a> ShieldView<'a> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn table(&self) -> &'a SigmaTable {
        self.table
    }

    /// Whether an unsafety value passes the threshold.
    pub fn allows_sigma(&self, sigma: f64) -> bool {
        round12(sigma) <= self.lambda_key
    }

    fn allows(&self, sigma: f64) -> bool {
        self.allows_sigma(sigma)
    }

    /// Available actions of `s` with `σ(s, a) ≤ λ`.
    pub fn shield_actions(&self, s: StateId) -> BTreeSet<ActionId> {
        self.table.sigma[s.0]
            .iter()
            .filter(|&&(_, v)| self.allows(v))
            .map(|&(a, _)| a)
            .collect()
    }

    pub fn is_empty_at(&self, s: StateId) -> bool {
        !self.table.sigma[s.0].iter().any(|&(_, v)| self.allows(v))
    }

    /// Actions allowed in every state of `sbar` (empty for an empty set).
    pub fn lifted_shield(&self, sbar: &StateSet) -> BTreeSet<ActionId> {
        let mut states = sbar.iter();
        let Some(first) = states.next() else {
            return BTreeSet::new();
        };
        let mut allowed = self.shield_actions(first);
        for s in states {
            if allowed.is_empty() {
                break;
            }
            allowed.retain(|&a| self.table.sigma(s, a).is_some_and(|v| self.allows(v)));
        }
        allowed
    }

    /// The lifted-shield action minimising the worst σ over `sbar`; ties go
    /// to the smallest action. `None` when the lifted shield is empty.
    pub fn safest_action(&self, sbar: &StateSet) -> Option<ActionId> {
        self.lifted_shield(sbar)
            .into_iter()
            .map(|a| {
                let worst = sbar
                    .iter()
                    .map(|s| round12(self.table.sigma(s, a).expect("shielded action is available")))
                    .fold(0.0, f64::max);
                (a, worst)
            })
            .fold(None, |best: Option<(ActionId, f64)>, (a, w)| match best {
                Some((_, bw)) if bw <= w => best,
                _ => Some((a, w)),
            })
            .map(|(a, _)| a)
    }

    /// Unsafe states are never counted in `s_delta`, so the three sets
    /// partition the state space.
    pub fn classify_states(&self) -> StatePartition {
        let s_unsafe = self.table.unsafe_states.clone();
        let mut s_delta = BTreeSet::new();
        let mut s_nabla = BTreeSet::new();
        for s in (0..self.table.state_count()).map(StateId) {
            if s_unsafe.contains(&s) {
                continue;
            }
            if self.is_empty_at(s) {
                s_nabla.insert(s);
            } else {
                s_delta.insert(s);
            }
        }
        StatePartition {
            s_delta,
            s_nabla,
            s_unsafe,
        }
    }

    /// `m` with every state's actions cut down to its shield; states with an
    /// empty shield keep all their actions.
    pub fn restrict(&self, m: &ExplicitMdp) -> ExplicitMdp {
        m.restrict(|s, a| self.table.sigma(s, a).is_some_and(|v| self.allows(v)))
    }

    /// States reachable from `m`'s initial state when only shielded actions
    /// are taken; exploration stops at unsafe states and at states whose
    /// shield is empty (those are reported but not expanded).
    pub fn reachable_under_shield(&self, m: &ExplicitMdp) -> BTreeSet<StateId> {
        let unsafe_mask = mask(m.state_count(), &self.table.unsafe_states);
        let mut seen = BTreeSet::from([m.initial()]);
        let mut stack = vec![m.initial()];
        while let Some(s) = stack.pop() {
            if unsafe_mask[s.0] {
                continue;
            }
            for a in self.shield_actions(s) {
                for &(t, p) in m.row(s, a).expect("shielded action is available") {
                    if p > 0.0 && seen.insert(t) {
                        stack.push(t);
                    }
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpBuilder;

    /// s0 unsafe and absorbing; s1 has a safe self-loop a0 and a risky a1.
    fn worst_case(lambda: f64) -> ExplicitMdp {
        MdpBuilder::new(2, ["a0", "a1"])
            .self_loop(0, 0)
            .self_loop(1, 0)
            .transition(1, 1, &[(0, lambda), (1, 1.0 - lambda)])
            .label("unsafe", [0])
            .initial(StateId(1))
            .build()
            .unwrap()
    }

    #[test]
    fn sure_outcomes() {
        let m = MdpBuilder::new(3, ["a"])
            .transition(0, 0, &[(1, 1.0)])
            .self_loop(1, 0)
            .transition(2, 0, &[(2, 1.0)])
            .build()
            .unwrap();
        let t = synth_sigma(&m, &BTreeSet::from([StateId(1)]), 3).unwrap();
        assert_eq!(t.sigma(StateId(0), ActionId(0)), Some(1.0));
        assert_eq!(t.sigma(StateId(2), ActionId(0)), Some(0.0));
    }

    #[test]
    fn worst_case_sigma_for_any_lookahead() {
        for lambda in [0.1, 0.2, 0.3] {
            let m = worst_case(lambda);
            for n in 1..=6 {
                let t = synth_sigma_for_label(&m, "unsafe", n).unwrap();
                assert_eq!(t.sigma(StateId(1), ActionId(0)), Some(0.0));
                assert_eq!(t.sigma(StateId(1), ActionId(1)), Some(lambda));
                // boundary σ = λ is admitted
                let view = t.view(lambda);
                assert_eq!(
                    view.shield_actions(StateId(1)),
                    BTreeSet::from([ActionId(0), ActionId(1)])
                );
                let part = view.classify_states();
                assert_eq!(part.s_delta, BTreeSet::from([StateId(1)]));
                assert!(part.s_nabla.is_empty());
            }
        }
    }

    #[test]
    fn zero_lookahead_rejected() {
        assert!(synth_sigma(&worst_case(0.2), &BTreeSet::new(), 0).is_err());
    }

    fn table(rows: Vec<Vec<(usize, f64)>>) -> SigmaTable {
        SigmaTable {
            lookahead: 1,
            unsafe_states: BTreeSet::new(),
            unsafe_label: "unsafe".into(),
            sigma: rows
                .into_iter()
                .map(|r| r.into_iter().map(|(a, v)| (ActionId(a), v)).collect())
                .collect(),
        }
    }

    fn set(states: &[usize]) -> StateSet {
        states.iter().map(|&s| StateId(s)).collect()
    }

    fn actions(a: &[usize]) -> BTreeSet<ActionId> {
        a.iter().map(|&a| ActionId(a)).collect()
    }

    #[test]
    fn thresholds_at_extremes() {
        let t = table(vec![vec![(0, 0.2), (1, 0.9)], vec![(0, 0.3)]]);
        assert_eq!(t.view(1.0).shield_actions(StateId(0)), actions(&[0, 1]));
        assert!(t.view(0.0).shield_actions(StateId(1)).is_empty());
        assert!(t.view(1.0).classify_states().s_nabla.is_empty());
    }

    #[test]
    fn lifting_intersects() {
        // shields {0,1} and {1,2}
        let t = table(vec![
            vec![(0, 0.1), (1, 0.1), (2, 0.9)],
            vec![(0, 0.9), (1, 0.1), (2, 0.1)],
            vec![(0, 0.9)],
        ]);
        let v = t.view(0.5);
        assert_eq!(v.lifted_shield(&set(&[0])), v.shield_actions(StateId(0)));
        assert_eq!(v.lifted_shield(&set(&[0, 1])), actions(&[1]));
        assert!(v.lifted_shield(&set(&[0, 2])).is_empty());
        assert_eq!(v.safest_action(&set(&[0, 2])), None);
    }

    #[test]
    fn safest_minimises_the_worst_member() {
        let t = table(vec![vec![(0, 0.1), (1, 0.4)], vec![(0, 0.5), (1, 0.2)]]);
        let v = t.view(0.6);
        // maxima are 0.5 for a0 and 0.4 for a1
        assert_eq!(v.safest_action(&set(&[0, 1])), Some(ActionId(1)));
        assert_eq!(v.safest_action(&set(&[0])), Some(ActionId(0)));
        let tied = table(vec![vec![(0, 0.2), (1, 0.2)]]);
        assert_eq!(tied.view(0.5).safest_action(&set(&[0])), Some(ActionId(0)));
    }

    #[test]
    fn csv_round_trip() {
        let m = worst_case(0.3);
        let t = synth_sigma_for_label(&m, "unsafe", 5).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("# lookahead=5 unsafe_label=unsafe\nstate,action,sigma\n"));
        assert!(csv.contains("1,1,0.29999999999999999\n"));
        assert_eq!(SigmaTable::from_csv(&csv, "t", &m).unwrap(), t);
        assert!(SigmaTable::from_csv("state,action,sigma\n", "t", &m).is_err());
    }
}
