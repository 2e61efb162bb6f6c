//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cshield::abstraction::{compile, normalize_confusion, EmptyPolicy, Variant};
use cshield::case_study::{taxi_profile, TAXI_SHARPNESS, TAXI_STATES};
use cshield::checker::check_properties;
use cshield::conformal::{build_set_confusion, calibrate, ScoredSample};
use cshield::experiment::{complement, run_grid, trend_violations, GridSpec, ALPHA_PRIMES, LAMBDA_PRIMES};
use cshield::mdp::{bounded_reach, enumerate_path_prob, Opt, PolicyMemoryless};
use cshield::model::{emit_model, parse_model, ModelSource};
use cshield::shield::{synth_sigma_for_label, DEFAULT_LOOKAHEAD};
use cshield::sim::{gen_scores, gen_stratified, rollout, Perception, RolloutConfig};
use cshield::theorem::{
    build_entrapment, build_worst_case, check_lemmas, one_step_stuck, random_mdp, theorem1_sweep, verify_theorem1,
    RandomMdpSpec, BOUND_TOLERANCE, TEMPT,
};
use cshield::{ExplicitMdp, StateId};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAXI_MODEL: &str = include_str!("../../../models/taxi.pm");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let e = start.elapsed();
    (e < limit, format!("{:.2}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn taxi() -> ExplicitMdp {
    parse_model(&ModelSource::new(TAXI_MODEL, "models/taxi.pm")).expect("case-study model parses")
}

fn bound_holds_on_random_models() -> Outcome {
    let start = Instant::now();
    let ns: Vec<usize> = (1..=4).collect();
    let n_primes: Vec<usize> = (1..=8).collect();
    let report = theorem1_sweep(RandomMdpSpec::default(), 200, 0, &[0.1, 0.2, 0.3], &ns, &n_primes);
    let worst_slack = report
        .rows
        .iter()
        .map(|r| r.max_unsafe - r.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let (fast, time) = within(start, Duration::from_secs(10));
    outcome(
        report.kept == 200 && report.all_pass() && fast,
        format!(
            "{} models kept of {} drawn, {} checks, largest excess over bound {worst_slack:.3e}, {time}",
            report.kept,
            report.drawn,
            report.rows.len()
        ),
    )
}

fn bound_is_tight() -> Outcome {
    let mut gap = 0.0f64;
    for lambda in [0.1, 0.3] {
        let m = build_worst_case(lambda).unwrap();
        let unsafe_states = m.label("unsafe").unwrap().clone();
        for n in 1..=5 {
            for np in 1..=10 {
                let r = verify_theorem1(&m, &unsafe_states, lambda, n, np).unwrap();
                if !r.assumptions_hold() {
                    return outcome(false, format!("assumptions fail at lambda={lambda} n={n}"));
                }
                gap = gap.max((r.max_unsafe - r.bound).abs());
            }
        }
    }
    outcome(
        gap <= BOUND_TOLERANCE,
        format!("largest |max_unsafe - bound| = {gap:.3e}"),
    )
}

fn entrapment_limit() -> Outcome {
    let lambda = 0.3;
    let mut values = Vec::new();
    let mut pass = true;
    for eps in [0.1, 0.01, 0.001] {
        let m = build_entrapment(lambda, eps, 3).unwrap();
        let st = synth_sigma_for_label(&m, "unsafe", 3).unwrap();
        let p = one_step_stuck(&m, &st, lambda, m.initial(), TEMPT).unwrap();
        pass &= (p - lambda / (lambda + eps)).abs() <= 1e-12;
        pass &= values.last().is_none_or(|&last| p > last);
        values.push(p);
    }
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
    outcome(pass, format!("stuck probabilities {}", shown.join(", ")))
}

/// Random models with 2..=`max_states` states and `actions` actions, drawn
/// until every state count has been seen `per_size` times.
fn models_by_size(max_states: usize, actions: usize, per_size: usize) -> Vec<ExplicitMdp> {
    let spec = RandomMdpSpec {
        max_states,
        actions,
        max_support: 3,
    };
    let mut seen = vec![0usize; max_states + 1];
    let mut out = Vec::new();
    let mut seed = 0;
    while (2..=max_states).any(|n| seen[n] < per_size) {
        let m = random_mdp(spec, seed * 31 + actions as u64);
        seed += 1;
        let n = m.state_count();
        if seen[n] < per_size {
            seen[n] += 1;
            out.push(m);
        }
    }
    out
}

fn reach_matches_enumeration() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for max_states in [5] {
        for actions in 1..=3 {
            for m in models_by_size(max_states, actions, 6) {
                let last = StateId(m.state_count() - 1);
                let targets = [m.label("unsafe").unwrap().clone(), BTreeSet::from([StateId(0), last])];
                for pi in PolicyMemoryless::enumerate(&m) {
                    let chain = m.under_policy(&pi);
                    for target in &targets {
                        for h in 0..=5 {
                            let dp = bounded_reach(&chain, target, h, Opt::Max);
                            for s in m.states() {
                                let brute = enumerate_path_prob(&m, &pi, s, h, target).unwrap();
                                worst = worst.max((dp.at(s) - brute).abs());
                                checks += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    outcome(
        worst <= 1e-12 && fast,
        format!("{checks} comparisons, largest difference {worst:.3e}, {time}"),
    )
}

fn lemmas_hold() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let m = random_mdp(RandomMdpSpec::default(), 1000 + seed);
        let unsafe_states = m.label("unsafe").unwrap().clone();
        worst = worst.max(check_lemmas(&m, &unsafe_states, 4, seed).unwrap().max_residual());
    }
    outcome(worst <= 1e-12, format!("largest residual {worst:.3e} over 50 models"))
}

fn draw(count: usize, seed: u64) -> Vec<ScoredSample> {
    let profile = taxi_profile(0.85, TAXI_SHARPNESS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = StateId(rng.random_range(0..TAXI_STATES));
            ScoredSample::new(s, gen_scores(&profile, s, &mut rng)).unwrap()
        })
        .collect()
}

fn conformal_coverage() -> Outcome {
    let cal = draw(10_000, 11);
    let test = draw(10_000, 12);
    let models: Vec<_> = ALPHA_PRIMES
        .iter()
        .map(|&ap| calibrate(&cal, complement(ap)).unwrap())
        .collect();
    let coverage = models[0].coverage(&test).coverage;
    let nested = test.iter().all(|t| {
        let sets: Vec<_> = models.iter().map(|m| m.predict_set(&t.scores)).collect();
        sets.windows(2).all(|w| w[0].is_subset(&w[1]))
    });
    outcome(
        (0.94..=0.96).contains(&coverage) && nested,
        format!("coverage {coverage:.4} at alpha'=0.95, nested on every sample: {nested}"),
    )
}

fn case_study_samples() -> (Vec<ScoredSample>, Vec<ScoredSample>) {
    let profile = taxi_profile(0.85, TAXI_SHARPNESS).unwrap();
    (gen_stratified(&profile, 700, 1), gen_stratified(&profile, 10_000, 2))
}

fn case_study_trends() -> Outcome {
    let m = taxi();
    let st = synth_sigma_for_label(&m, "fail", DEFAULT_LOOKAHEAD).unwrap();
    let (cal, test) = case_study_samples();
    let horizons: Vec<usize> = (1..=30).collect();
    let spec = GridSpec {
        alpha_primes: &ALPHA_PRIMES,
        lambda_primes: &LAMBDA_PRIMES,
        variants: &Variant::ALL,
        horizons: &horizons,
        empty_policy: EmptyPolicy::Error,
    };
    let cells = run_grid(&m, &st, &cal, &test, &spec).unwrap();
    let bad = trend_violations(&cells, &[Variant::Worst, Variant::Random], 30);
    let safest = trend_violations(&cells, &[Variant::Safest], 30);
    let mut detail = format!("worst and random variants plus baseline: {} violations", bad.len());
    for b in &bad {
        detail.push_str(&format!("; {b}"));
    }
    if !safest.is_empty() {
        detail.push_str(&format!(" (safest variant, not gated: {})", safest.join("; ")));
    }
    outcome(bad.is_empty(), detail)
}

fn checker_matches_monte_carlo() -> Outcome {
    let start = Instant::now();
    let m = taxi();
    let st = synth_sigma_for_label(&m, "fail", DEFAULT_LOOKAHEAD).unwrap();
    let profile = taxi_profile(0.85, TAXI_SHARPNESS).unwrap();
    let (cal, test) = case_study_samples();
    let cm = calibrate(&cal, complement(0.95)).unwrap();
    let nu = normalize_confusion(&build_set_confusion(&cm, &test), EmptyPolicy::Error);
    let mut pass = true;
    let mut parts = Vec::new();
    for lp in [0.7, 0.9] {
        let lambda = complement(lp);
        let am = compile(&m, &st, lambda, &nu, Variant::Random).unwrap();
        let exact = check_properties(&am.mdp, &[30]).unwrap()[0].clone();
        let cfg = RolloutConfig {
            lambda,
            policy: Variant::Random,
            episodes: 100_000,
            horizon: 30,
            seed: 7,
            record_steps: false,
        };
        let (_, sim) = rollout(&m, &st, &Perception::Conformal(&cm), &profile, &cfg).unwrap();
        let z = |simulated: f64, checked: f64, se: f64| {
            let diff = (simulated - checked).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / se
            }
        };
        let zs = [
            z(sim.p_fail, exact.p_fail, sim.se_fail),
            z(sim.p_stuck, exact.p_stuck, sim.se_stuck),
            z(sim.p_success, exact.p_success, sim.se_success),
        ];
        pass &= zs.iter().all(|&z| z <= 3.0);
        parts.push(format!(
            "lambda'={lp}: fail {:.4}/{:.4} stuck {:.4}/{:.4} success {:.4}/{:.4} (max {:.2} se)",
            sim.p_fail,
            exact.p_fail,
            sim.p_stuck,
            exact.p_stuck,
            sim.p_success,
            exact.p_success,
            zs.iter().copied().fold(0.0, f64::max)
        ));
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    outcome(pass && fast, format!("simulated/checked {}, {time}", parts.join("; ")))
}

fn model_round_trip() -> Outcome {
    let m = taxi();
    let non_terminal = m.states().filter(|&s| !m.is_terminal(s)).count();
    let again = parse_model(&ModelSource::inline(emit_model(&m))).unwrap();
    let unsafe_states = m.label("fail").unwrap();
    let mut worst = 0.0f64;
    let same_shape = again.state_count() == m.state_count() && again.action_count() == m.action_count();
    if same_shape {
        for h in 1..=10 {
            for opt in [Opt::Max, Opt::Min] {
                let a = bounded_reach(&m, unsafe_states, h, opt);
                let b = bounded_reach(&again, again.label("fail").unwrap(), h, opt);
                for s in m.states() {
                    worst = worst.max((a.at(s) - b.at(s)).abs());
                }
            }
        }
    }
    outcome(
        non_terminal == 15 && m.action_count() == 3 && same_shape && worst <= 1e-12,
        format!(
            "{non_terminal} non-terminal states, {} actions, round-trip difference {worst:.3e}",
            m.action_count()
        ),
    )
}

/// Runs the binary in `dir`; paths in `args` are relative to it.
fn run(dir: &Path, args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cshield"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn cli_is_deterministic() -> Outcome {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = std::fs::remove_dir_all(&root);
    let steps: [&[&str]; 15] = [
        &["gen-data", "--per-state", "300", "--seed", "1", "--out", "cal.csv"],
        &["gen-data", "--per-state", "1000", "--seed", "2", "--out", "test.csv"],
        &[
            "gen-data",
            "--model",
            "taxi.pm",
            "--episodes",
            "50",
            "--seed",
            "3",
            "--out",
            "explore.csv",
        ],
        &["synth", "--model", "taxi.pm", "--out", "sigma.csv"],
        &[
            "calibrate",
            "--samples",
            "cal.csv",
            "--alpha-prime",
            "0.95",
            "--out",
            "cm.txt",
        ],
        &[
            "evaluate",
            "--samples",
            "test.csv",
            "--conformal",
            "cm.txt",
            "--out",
            "cov.txt",
            "--confusion",
            "conf.csv",
        ],
        &[
            "evaluate",
            "--samples",
            "test.csv",
            "--out",
            "acc.txt",
            "--confusion",
            "point.csv",
        ],
        &[
            "compile",
            "--model",
            "taxi.pm",
            "--sigma",
            "sigma.csv",
            "--confusion",
            "conf.csv",
            "--lambda-prime",
            "0.9",
            "--alpha-prime",
            "0.95",
            "--variant",
            "worst",
            "--out",
            "worst.pm",
        ],
        &[
            "compile",
            "--model",
            "taxi.pm",
            "--confusion",
            "point.csv",
            "--lambda-prime",
            "0.9",
            "--baseline",
            "--variant",
            "random",
            "--out",
            "baseline.pm",
        ],
        &["check", "--model", "worst.pm", "--out", "worst.csv"],
        &[
            "check",
            "--model",
            "baseline.pm",
            "--horizons",
            "1..10",
            "--out",
            "baseline.csv",
        ],
        &[
            "simulate",
            "--model",
            "taxi.pm",
            "--conformal",
            "cm.txt",
            "--lambda-prime",
            "0.8",
            "--episodes",
            "3000",
            "--seed",
            "5",
            "--logs",
            "logs.csv",
            "--out",
            "sim.csv",
        ],
        &[
            "simulate",
            "--model",
            "taxi.pm",
            "--lambda-prime",
            "0.8",
            "--variant",
            "safest",
            "--episodes",
            "3000",
            "--out",
            "sim_point.csv",
        ],
        &[
            "theorem1",
            "--count",
            "20",
            "--seed",
            "4",
            "--out",
            "theorem.txt",
            "--csv",
            "theorem.csv",
        ],
        &[
            "sweep",
            "--model",
            "taxi.pm",
            "--calibration",
            "cal.csv",
            "--test",
            "test.csv",
            "--horizons",
            "1..10",
            "--out",
            "sweep",
        ],
    ];
    let mut runs = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let dir = root.join(format!("run{i}"));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("taxi.pm"), TAXI_MODEL).unwrap();
        for args in &steps {
            if let Err(e) = run(&dir, args, threads) {
                return outcome(false, e);
            }
        }
        runs.push(dir);
    }
    let (a, b) = (files_under(&runs[0]), files_under(&runs[1]));
    let rel = |d: &Path, fs: &[PathBuf]| {
        fs.iter()
            .map(|f| f.strip_prefix(d).unwrap().to_path_buf())
            .collect::<Vec<_>>()
    };
    if rel(&runs[0], &a) != rel(&runs[1], &b) {
        return outcome(false, "the two runs produced different file sets");
    }
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.strip_prefix(&runs[0]).unwrap().display().to_string())
        .collect();
    let manifests = a
        .iter()
        .filter(|f| f.file_name().is_some_and(|n| n != "taxi.pm"))
        .all(|f| {
            let text = std::fs::read_to_string(f).unwrap();
            text.starts_with("# cshield ") || text.starts_with("// cshield ")
        });
    outcome(
        differing.is_empty() && manifests,
        format!(
            "{} subcommand runs, {} files identical across runs with 1 and 4 threads, manifests on every output: {manifests}{}",
            steps.len(),
            a.len(),
            if differing.is_empty() { String::new() } else { format!(", differing: {}", differing.join(", ")) }
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("global safety bound on random models", bound_holds_on_random_models),
        ("bound is attained by the worst-case model", bound_is_tight),
        ("stuck probability of the entrapment model", entrapment_limit),
        (
            "bounded reachability matches path enumeration",
            reach_matches_enumeration,
        ),
        ("occupancy lemmas", lemmas_hold),
        ("conformal coverage and nestedness", conformal_coverage),
        ("case-study trends", case_study_trends),
        ("model checking matches Monte-Carlo", checker_matches_monte_carlo),
        ("case-study model round trip", model_round_trip),
        ("CLI determinism", cli_is_deterministic),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
