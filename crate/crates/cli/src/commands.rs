use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::Path;
use std::time::Instant;

use cshield::abstraction::{compile_baseline, compile_with, normalize_confusion, CompileOptions, EmptyPolicy, Variant};
use cshield::case_study::taxi_profile;
use cshield::checker::{check_properties, results_rows, RESULTS_HEADER};
use cshield::conformal::{
    build_set_confusion, calibrate as conformal_calibrate, point_confusion, read_samples, write_samples,
    ConformalModel, SetConfusion,
};
use cshield::experiment::{complement, run_grid, GridSpec, ALPHA_PRIMES, LAMBDA_PRIMES};
use cshield::fmt::g17;
use cshield::model::{parse_model, ModelSource};
use cshield::shield::{synth_sigma_for_label, SigmaTable};
use cshield::sim::{
    gen_calibration, gen_stratified, logs_csv, rollout, Perception, PerceptionProfile, RolloutConfig, SUMMARY_HEADER,
};
use cshield::theorem::{
    build_entrapment, build_worst_case, check_lemmas, one_step_stuck, random_mdp, report_line, safety_bound,
    theorem1_sweep, verify_theorem1, RandomMdpSpec, BOUND_TOLERANCE, TEMPT,
};
use cshield::{ExplicitMdp, StateId};

use crate::error::{CliError, CliResult};
use crate::manifest::{write_output, Input, Manifest};
use crate::{
    CalibrateArgs, CheckArgs, CompileArgs, EvaluateArgs, GenDataArgs, ProfileArgs, ShieldArgs, SimulateArgs, SweepArgs,
    SynthArgs, Theorem1Args,
};

fn load_model(input: &Input) -> CliResult<ExplicitMdp> {
    parse_model(&ModelSource::new(input.text.clone(), input.origin.clone()))
        .map_err(|diags| cshield::Error::Model(diags).into())
}

fn check_level(name: &str, x: f64, open: bool) -> CliResult<()> {
    let ok = if open {
        x > 0.0 && x < 1.0
    } else {
        (0.0..=1.0).contains(&x)
    };
    if ok {
        Ok(())
    } else {
        let range = if open { "(0, 1)" } else { "[0, 1]" };
        Err(CliError::invalid(format!("--{name} must lie in {range}, got {x}")))
    }
}

/// The perfect-perception model and its unsafety table, read from `sigma`
/// or synthesised.
struct Shielded {
    model_input: Input,
    sigma_input: Option<Input>,
    model: ExplicitMdp,
    table: SigmaTable,
}

impl Shielded {
    fn load(args: &ShieldArgs, sigma: Option<&Path>) -> CliResult<Shielded> {
        let model_input = Input::read("model", &args.model)?;
        let model = load_model(&model_input)?;
        let (table, sigma_input) = match sigma {
            Some(path) => {
                let input = Input::read("sigma", path)?;
                let table = SigmaTable::from_csv(&input.text, &input.origin, &model)?;
                (table, Some(input))
            }
            None => (synth_sigma_for_label(&model, &args.unsafe_label, args.lookahead)?, None),
        };
        Ok(Shielded {
            model_input,
            sigma_input,
            model,
            table,
        })
    }

    fn manifest(&self, subcommand: &'static str) -> Manifest {
        let mut m = Manifest::new(subcommand).input(&self.model_input);
        if let Some(s) = &self.sigma_input {
            m = m.input(s);
        }
        m.param("unsafe_label", self.table.unsafe_label())
            .param("lookahead", self.table.lookahead())
    }
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let sh = Shielded::load(&a.shield, None)?;
    let out = sh.manifest("synth").line("#") + &sh.table.to_csv();
    write_output(&a.out, &out)
}

pub fn calibrate(a: CalibrateArgs) -> CliResult<()> {
    check_level("alpha-prime", a.alpha_prime, true)?;
    let input = Input::read("samples", &a.samples)?;
    let samples = read_samples(&input.text, &input.origin)?;
    let alpha = complement(a.alpha_prime);
    let cm = conformal_calibrate(&samples, alpha)?;
    let manifest = Manifest::new("calibrate")
        .input(&input)
        .level("alpha_prime", "alpha", a.alpha_prime, alpha);
    write_output(&a.out, &(manifest.line("#") + &cm.to_text()))
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let input = Input::read("samples", &a.samples)?;
    let samples = read_samples(&input.text, &input.origin)?;
    let mut manifest = Manifest::new("evaluate").input(&input);
    let (report, confusion) = match &a.conformal {
        Some(path) => {
            let cm_input = Input::read("conformal", path)?;
            let cm = ConformalModel::from_text(&cm_input.text, &cm_input.origin)?;
            manifest = manifest.input(&cm_input).param("alpha", cm.alpha);
            (cm.coverage(&samples).to_text(), build_set_confusion(&cm, &samples))
        }
        None => {
            manifest = manifest.param("estimate", "argmax");
            let hits = samples.iter().filter(|s| s.argmax() == s.true_state).count();
            let accuracy = hits as f64 / samples.len().max(1) as f64;
            (
                format!("samples={}\naccuracy={}\n", samples.len(), g17(accuracy)),
                point_confusion(&samples),
            )
        }
    };
    let line = manifest.line("#");
    write_output(&a.out, &(line.clone() + &report))?;
    write_output(&a.confusion, &(line + &confusion.to_csv()))
}

pub fn compile(a: CompileArgs) -> CliResult<()> {
    check_level("lambda-prime", a.lambda_prime, false)?;
    if let Some(ap) = a.alpha_prime {
        check_level("alpha-prime", ap, true)?;
    }
    if a.baseline == a.alpha_prime.is_some() {
        return Err(CliError::usage("give exactly one of --alpha-prime and --baseline"));
    }
    let sh = Shielded::load(&a.shield, a.sigma.as_deref())?;
    let conf_input = Input::read("confusion", &a.confusion)?;
    let confusion = SetConfusion::from_csv(&conf_input.text, &conf_input.origin)?;
    let policy = if a.exact_unobserved {
        EmptyPolicy::Point
    } else {
        EmptyPolicy::Error
    };
    let nu = normalize_confusion(&confusion, policy);
    let lambda = complement(a.lambda_prime);
    let am = match a.alpha_prime {
        Some(ap) => {
            let opts = CompileOptions {
                alpha: Some(complement(ap)),
                ..CompileOptions::new(a.variant)
            };
            compile_with(&sh.model, &sh.table, lambda, &nu, opts)?
        }
        None => compile_baseline(&sh.model, &sh.table, lambda, &nu, a.variant)?,
    };
    let mut manifest = sh
        .manifest("compile")
        .input(&conf_input)
        .level("lambda_prime", "lambda", a.lambda_prime, lambda)
        .param("variant", a.variant);
    manifest = match a.alpha_prime {
        Some(ap) => manifest.level("alpha_prime", "alpha", ap, complement(ap)),
        None => manifest.param("baseline", true),
    };
    if am.initial_stuck {
        eprintln!("warning: the initial state has an empty shield");
    }
    write_output(&a.out, &am.to_model_text(&[manifest.body()]))
}

/// `variant`, `alpha` and `lambda` from the provenance comment of a compiled
/// model. A model without conformal sets is reported as the baseline.
fn provenance(text: &str, origin: &str) -> CliResult<(String, String, f64)> {
    for line in text.lines() {
        let Some(comment) = line.trim().strip_prefix("//").map(str::trim_start) else {
            continue;
        };
        if !comment.starts_with("variant=") {
            continue;
        }
        let fields: Vec<(&str, &str)> = comment.split_whitespace().filter_map(|kv| kv.split_once('=')).collect();
        let get = |key: &str| fields.iter().find(|(k, _)| *k == key).map(|&(_, v)| v);
        let (Some(variant), Some(alpha), Some(lambda)) = (get("variant"), get("alpha"), get("lambda")) else {
            continue;
        };
        let lambda: f64 = lambda
            .parse()
            .map_err(|_| CliError::invalid(format!("{origin}: bad lambda `{lambda}` in provenance")))?;
        let variant = if alpha == "none" { "baseline" } else { variant };
        return Ok((variant.to_string(), alpha.to_string(), lambda));
    }
    Err(CliError::invalid(format!(
        "{origin}: no provenance line; was the model produced by `compile`?"
    )))
}

pub fn check(a: CheckArgs) -> CliResult<()> {
    let input = Input::read("model", &a.model)?;
    let (variant, alpha, lambda) = provenance(&input.text, &input.origin)?;
    let model = load_model(&input)?;
    let start = Instant::now();
    let results = check_properties(&model, &a.horizons.values)?;
    let wall_ms = if a.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let manifest = Manifest::new("check").input(&input).param("horizons", &a.horizons.text);
    let out = manifest.line("#") + RESULTS_HEADER + "\n" + &results_rows(&variant, &alpha, lambda, &results, wall_ms);
    write_output(&a.out, &out)
}

fn profile(p: &ProfileArgs) -> CliResult<(PerceptionProfile, String)> {
    Ok(match p.classes {
        Some(k) => (
            PerceptionProfile::new(p.accuracy, p.sharpness, k)?,
            format!("uniform:{k}"),
        ),
        None => (taxi_profile(p.accuracy, p.sharpness)?, "taxi".to_string()),
    })
}

fn profile_params(m: Manifest, p: &ProfileArgs, name: &str) -> Manifest {
    m.param("profile", name)
        .param("accuracy", p.accuracy)
        .param("sharpness", p.sharpness)
}

pub fn simulate(a: SimulateArgs) -> CliResult<()> {
    check_level("lambda-prime", a.lambda_prime, false)?;
    let sh = Shielded::load(&a.shield, a.sigma.as_deref())?;
    let (prof, prof_name) = profile(&a.profile)?;
    let cm = match &a.conformal {
        Some(path) => {
            let input = Input::read("conformal", path)?;
            Some((ConformalModel::from_text(&input.text, &input.origin)?, input))
        }
        None => None,
    };
    let perception = match &cm {
        Some((cm, _)) => Perception::Conformal(cm),
        None => Perception::Point,
    };
    let lambda = complement(a.lambda_prime);
    let cfg = RolloutConfig {
        lambda,
        policy: a.variant,
        episodes: a.episodes,
        horizon: a.horizon,
        seed: a.seed,
        record_steps: a.logs.is_some(),
    };
    let (logs, summary) = rollout(&sh.model, &sh.table, &perception, &prof, &cfg)?;
    let mut manifest = sh.manifest("simulate");
    if let Some((_, input)) = &cm {
        manifest = manifest.input(input);
    }
    let manifest = profile_params(manifest, &a.profile, &prof_name)
        .level("lambda_prime", "lambda", a.lambda_prime, lambda)
        .param("policy", a.variant)
        .param("episodes", a.episodes)
        .param("horizon", a.horizon)
        .param("seed", a.seed);
    let line = manifest.line("#");
    write_output(&a.out, &format!("{line}{SUMMARY_HEADER}\n{}\n", summary.csv_row()))?;
    if let Some(path) = &a.logs {
        write_output(path, &(line + &logs_csv(&logs)))?;
    }
    Ok(())
}

pub const THEOREM_LAMBDAS: [f64; 3] = [0.1, 0.2, 0.3];

pub fn theorem1(a: Theorem1Args) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::invalid("--count must be at least 1"));
    }
    let mut lines = Vec::new();

    let ns: Vec<usize> = (1..=4).collect();
    let n_primes: Vec<usize> = (1..=8).collect();
    let sweep = theorem1_sweep(
        RandomMdpSpec::default(),
        a.count,
        a.seed,
        &THEOREM_LAMBDAS,
        &ns,
        &n_primes,
    );
    lines.push(report_line(
        "bound.models_kept",
        sweep.kept as f64,
        a.count as f64,
        sweep.kept == a.count,
    ));
    for &lambda in &THEOREM_LAMBDAS {
        for &np in &n_primes {
            let rows = sweep.rows.iter().filter(|r| r.lambda == lambda && r.n_prime == np);
            let (worst, pass) = rows.fold((0.0f64, true), |(w, p), r| (w.max(r.max_unsafe), p && r.pass));
            let name = format!("bound.lambda{lambda}.n_prime{np}");
            lines.push(report_line(&name, worst, safety_bound(lambda, np), pass));
        }
    }

    for lambda in [0.1, 0.3] {
        let m = build_worst_case(lambda)?;
        let unsafe_states = m.label("unsafe")?.clone();
        let mut gap = 0.0f64;
        for n in 1..=5 {
            for np in 1..=10 {
                let r = verify_theorem1(&m, &unsafe_states, lambda, n, np)?;
                gap = gap.max((r.max_unsafe - r.bound).abs());
            }
        }
        lines.push(report_line(
            &format!("tightness.lambda{lambda}"),
            gap,
            BOUND_TOLERANCE,
            gap <= BOUND_TOLERANCE,
        ));
    }

    let lambda = 0.3;
    let mut last = 0.0;
    for eps in [0.1, 0.01, 0.001] {
        let m = build_entrapment(lambda, eps, 3)?;
        let st = synth_sigma_for_label(&m, "unsafe", 3)?;
        let p = one_step_stuck(&m, &st, lambda, m.initial(), TEMPT)?;
        let expected = lambda / (lambda + eps);
        let pass = (p - expected).abs() <= BOUND_TOLERANCE && p > last;
        last = p;
        lines.push(report_line(
            &format!("entrapment.lambda{lambda}.eps{eps}"),
            p,
            expected,
            pass,
        ));
    }

    let mut lemmas = cshield::theorem::LemmaReport::default();
    for i in 0..50u64 {
        let seed = a.seed.wrapping_add(i);
        let m = random_mdp(RandomMdpSpec::default(), seed);
        let unsafe_states: BTreeSet<StateId> = m.label("unsafe")?.clone();
        lemmas.merge(&check_lemmas(&m, &unsafe_states, 4, seed)?);
    }
    lines.extend(lemmas.to_lines("lemmas", BOUND_TOLERANCE));

    let manifest = Manifest::new("theorem1").param("seed", a.seed).param("count", a.count);
    let line = manifest.line("#");
    let mut report = line.clone();
    for l in &lines {
        let _ = writeln!(report, "{l}");
    }
    write_output(&a.out, &report)?;
    if let Some(path) = &a.csv {
        write_output(path, &(line + &sweep.to_csv()))?;
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let sh = Shielded::load(&a.shield, None)?;
    let cal_input = Input::read("calibration", &a.calibration)?;
    let test_input = Input::read("test", &a.test)?;
    let cal = read_samples(&cal_input.text, &cal_input.origin)?;
    let test = read_samples(&test_input.text, &test_input.origin)?;
    let spec = GridSpec {
        alpha_primes: &ALPHA_PRIMES,
        lambda_primes: &LAMBDA_PRIMES,
        variants: &Variant::ALL,
        horizons: &a.horizons.values,
        empty_policy: if a.exact_unobserved {
            EmptyPolicy::Point
        } else {
            EmptyPolicy::Error
        },
    };
    let cells = run_grid(&sh.model, &sh.table, &cal, &test, &spec)?;
    std::fs::create_dir_all(&a.out).map_err(|source| CliError::Io {
        path: a.out.clone(),
        source,
    })?;
    let base = sh
        .manifest("sweep")
        .input(&cal_input)
        .input(&test_input)
        .param("horizons", &a.horizons.text);
    let mut merged = base.line("#") + RESULTS_HEADER + "\n";
    for cell in &cells {
        let lambda = complement(cell.lambda_prime);
        let alpha = cell.alpha_prime.map(complement);
        let alpha_text = alpha.map_or_else(|| "none".to_string(), g17);
        let wall_ms = if a.timing { cell.wall_ms } else { 0 };
        let rows = results_rows(cell.label(), &alpha_text, lambda, &cell.results, wall_ms);
        merged.push_str(&rows);
        if let (Some(ap), Some(alpha)) = (cell.alpha_prime, alpha) {
            let manifest = sh
                .manifest("sweep")
                .input(&cal_input)
                .input(&test_input)
                .param("horizons", &a.horizons.text)
                .level("alpha_prime", "alpha", ap, alpha)
                .level("lambda_prime", "lambda", cell.lambda_prime, lambda)
                .param("variant", cell.label());
            let name = format!("results_ap{ap}_lp{}_{}.csv", cell.lambda_prime, cell.label());
            let text = manifest.line("#") + RESULTS_HEADER + "\n" + &rows;
            write_output(&a.out.join(name), &text)?;
        }
    }
    write_output(&a.out.join("merged.csv"), &merged)
}

pub fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let (prof, prof_name) = profile(&a.profile)?;
    let manifest = profile_params(Manifest::new("gen-data"), &a.profile, &prof_name).param("seed", a.seed);
    let (samples, manifest) = match (a.per_state, a.episodes, &a.model) {
        (Some(per), None, _) => (gen_stratified(&prof, per, a.seed), manifest.param("per_state", per)),
        (None, Some(episodes), Some(path)) => {
            let input = Input::read("model", path)?;
            let model = load_model(&input)?;
            let samples = gen_calibration(&model, &prof, episodes, a.horizon, a.seed)?;
            let manifest = manifest
                .input(&input)
                .param("episodes", episodes)
                .param("horizon", a.horizon);
            (samples, manifest)
        }
        _ => return Err(CliError::usage("give --per-state, or --episodes with --model")),
    };
    write_output(&a.out, &(manifest.line("#") + &write_samples(&samples)))
}
