//! Seeded Monte-Carlo: synthetic classifier scores, calibration data from
//! random exploration, and rollouts of the shielded system with perception
//! in the loop.
//!
//! Every episode draws from its own ChaCha stream (`seed`, stream = episode
//! index), so results do not depend on how episodes are spread over threads.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::abstraction::Variant;
use crate::conformal::{ConformalModel, ScoredSample};
use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::mdp::{mask, ActionId, ExplicitMdp, StateId};
use crate::shield::SigmaTable;
use crate::stateset::StateSet;

/// Gamma shapes for the raw scores of a state's usual confusion targets and
/// of every other class.
const CONFUSABLE_SHAPE: f64 = 3.0;
const PLAIN_SHAPE: f64 = 0.05;

/// A stand-in for a trained classifier over `classes` states.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionProfile {
    /// Chance that the argmax is the true state.
    pub accuracy: f64,
    /// Exponent applied to the raw draws; larger is more peaked.
    pub sharpness: f64,
    /// Likely mistakes per true state. States without an entry are confused
    /// uniformly with every other class.
    pub confusion_bias: BTreeMap<StateId, Vec<StateId>>,
    pub classes: usize,
}

impl PerceptionProfile {
    pub fn new(accuracy: f64, sharpness: f64, classes: usize) -> Result<Self> {
        let p = PerceptionProfile {
            accuracy,
            sharpness,
            confusion_bias: BTreeMap::new(),
            classes,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_bias(mut self, bias: BTreeMap<StateId, Vec<StateId>>) -> Result<Self> {
        self.confusion_bias = bias;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.accuracy > 0.0 && self.accuracy <= 1.0) {
            return Err(Error::invalid(format!(
                "accuracy must lie in (0, 1], got {}",
                self.accuracy
            )));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::invalid(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        if self.classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        for (s, targets) in &self.confusion_bias {
            if s.0 >= self.classes || targets.iter().any(|t| t.0 >= self.classes || t == s) {
                return Err(Error::invalid(format!("bad confusion targets for state {s}")));
            }
        }
        Ok(())
    }

    fn targets(&self, s: StateId) -> &[StateId] {
        self.confusion_bias.get(&s).map_or(&[], Vec::as_slice)
    }
}

/// A score vector for `true_state`.
///
/// The argmax label is the true state with probability `accuracy`, otherwise
/// a confusion target (uniform among the listed ones, or among all other
/// classes). Raw values are Gamma draws, larger on average for the true
/// state's confusion targets. The largest is moved to the label and, on a
/// mistake, the runner-up to the true state; the vector is `g^sharpness`
/// normalised.
pub fn gen_scores<R: Rng + ?Sized>(profile: &PerceptionProfile, true_state: StateId, rng: &mut R) -> Vec<f64> {
    let k = profile.classes;
    let targets = profile.targets(true_state);
    let label = if rng.random::<f64>() < profile.accuracy {
        true_state
    } else if !targets.is_empty() {
        targets[rng.random_range(0..targets.len())]
    } else {
        let j = rng.random_range(0..k - 1);
        StateId(if j >= true_state.0 { j + 1 } else { j })
    };
    let plain = Gamma::new(PLAIN_SHAPE, 1.0).expect("valid shape");
    let confusable = Gamma::new(CONFUSABLE_SHAPE, 1.0).expect("valid shape");
    let mut g: Vec<f64> = (0..k)
        .map(|i| {
            if targets.contains(&StateId(i)) {
                confusable.sample(rng)
            } else {
                plain.sample(rng)
            }
        })
        .collect();
    let top = (0..k).fold(0, |best, i| if g[i] > g[best] { i } else { best });
    g.swap(top, label.0);
    if label != true_state {
        let second = (0..k)
            .filter(|&i| i != label.0)
            .fold(true_state.0, |best, i| if g[i] > g[best] { i } else { best });
        g.swap(second, true_state.0);
    }
    // scale before the power so large exponents cannot overflow
    let max = g[label.0];
    let mut p: Vec<f64> = g.iter().map(|&x| (x / max).powf(profile.sharpness)).collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    p
}

fn episode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_row<R: Rng + ?Sized>(row: &[(StateId, f64)], rng: &mut R) -> StateId {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for &(t, p) in row {
        acc += p;
        if u < acc {
            return t;
        }
    }
    row.last().expect("rows are non-empty").0
}

/// `per_state` samples for each class `0..classes`, class by class.
pub fn gen_stratified(profile: &PerceptionProfile, per_state: usize, seed: u64) -> Vec<ScoredSample> {
    (0..profile.classes)
        .into_par_iter()
        .flat_map_iter(|s| {
            let mut rng = episode_rng(seed, s as u64);
            (0..per_state)
                .map(move |_| ScoredSample {
                    true_state: StateId(s),
                    scores: gen_scores(profile, StateId(s), &mut rng),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Calibration data from exploring `perf` with uniformly random actions: one
/// sample per visited state. States outside the classifier's classes cannot
/// be perceived; an episode ends on entering one, without a sample.
pub fn gen_calibration(
    perf: &ExplicitMdp,
    profile: &PerceptionProfile,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<ScoredSample>> {
    if episodes == 0 {
        return Err(Error::invalid("need at least one episode"));
    }
    if perf.initial().0 >= profile.classes {
        return Err(Error::invalid("initial state is outside the perception classes"));
    }
    let per_episode: Vec<Vec<ScoredSample>> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = episode_rng(seed, ep as u64);
            let mut s = perf.initial();
            let mut out = Vec::with_capacity(horizon + 1);
            out.push(ScoredSample {
                true_state: s,
                scores: gen_scores(profile, s, &mut rng),
            });
            for _ in 0..horizon {
                let choices = perf.choices(s);
                let c = &choices[rng.random_range(0..choices.len())];
                s = sample_row(&c.successors, &mut rng);
                if s.0 >= profile.classes {
                    break;
                }
                out.push(ScoredSample {
                    true_state: s,
                    scores: gen_scores(profile, s, &mut rng),
                });
            }
            out
        })
        .collect();
    Ok(per_episode.into_iter().flatten().collect())
}

/// How the controller turns scores into a set of candidate states.
#[derive(Clone, Debug)]
pub enum Perception<'a> {
    Conformal(&'a ConformalModel),
    /// The argmax as a singleton (the unconformalized baseline).
    Point,
}

impl Perception<'_> {
    fn set(&self, scores: &[f64]) -> StateSet {
        match self {
            Perception::Conformal(cm) => cm.predict_set(scores),
            Perception::Point => {
                let top = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
                StateSet::singleton(StateId(top))
            }
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Perception::Conformal(cm) => Some(cm.alpha),
            Perception::Point => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Fail,
    Stuck,
    Success,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Fail => "fail",
            Outcome::Stuck => "stuck",
            Outcome::Success => "success",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub actual: StateId,
    pub set: StateSet,
    pub allowed: Vec<ActionId>,
    pub chosen: ActionId,
    /// Unsafety of the chosen action in the actual state.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub outcome: Outcome,
    pub steps: usize,
    /// Empty unless step recording was requested.
    pub records: Vec<StepRecord>,
    /// Decisions taken, and how many of them had `σ(actual, chosen) ≤ λ`.
    pub decisions: usize,
    pub locally_safe: usize,
}

#[derive(Clone, Debug)]
pub struct RolloutConfig {
    pub lambda: f64,
    /// `Random` or `Safest`; `Worst` is rejected since it needs an adversary.
    pub policy: Variant,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub record_steps: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSummary {
    pub policy: Variant,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub horizon: usize,
    pub episodes: usize,
    pub p_fail: f64,
    pub p_stuck: f64,
    pub p_success: f64,
    pub se_fail: f64,
    pub se_stuck: f64,
    pub se_success: f64,
    pub local_safety_fraction: f64,
}

pub const SUMMARY_HEADER: &str =
    "policy,alpha,lambda,horizon,episodes,p_fail,p_stuck,p_success,se_fail,se_stuck,se_success,local_safety_fraction";

impl RolloutSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.policy,
            self.alpha.map_or_else(|| "none".to_string(), g17),
            g17(self.lambda),
            self.horizon,
            self.episodes,
            g17(self.p_fail),
            g17(self.p_stuck),
            g17(self.p_success),
            g17(self.se_fail),
            g17(self.se_stuck),
            g17(self.se_success),
            g17(self.local_safety_fraction)
        )
    }
}

/// Run the shielded system. The first prediction set is `{ι}`; after each
/// move the new state is perceived at once, and an empty lifted shield ends
/// the episode as stuck at that step. Reaching an unsafe state ends it as a
/// failure.
pub fn rollout(
    perf: &ExplicitMdp,
    st: &SigmaTable,
    perception: &Perception<'_>,
    profile: &PerceptionProfile,
    cfg: &RolloutConfig,
) -> Result<(Vec<EpisodeLog>, RolloutSummary)> {
    if cfg.policy == Variant::Worst {
        return Err(Error::invalid("rollouts need the random or safest policy"));
    }
    st.check_matches(perf)?;
    let view = st.view(cfg.lambda);
    let unsafe_mask = mask(perf.state_count(), st.unsafe_states());
    if profile.classes > perf.state_count() {
        return Err(Error::invalid("profile has more classes than the model has states"));
    }
    let perceivable = |s: StateId| s.0 < profile.classes;
    if !perceivable(perf.initial()) {
        return Err(Error::invalid("initial state is outside the perception classes"));
    }

    let logs: Vec<EpisodeLog> = (0..cfg.episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = episode_rng(cfg.seed, ep as u64);
            let mut s = perf.initial();
            let mut set = StateSet::singleton(s);
            let mut log = EpisodeLog {
                outcome: Outcome::Success,
                steps: 0,
                records: Vec::new(),
                decisions: 0,
                locally_safe: 0,
            };
            let mut allowed: Vec<ActionId> = view.lifted_shield(&set).into_iter().collect();
            if allowed.is_empty() {
                log.outcome = Outcome::Stuck;
                return log;
            }
            for t in 0..cfg.horizon {
                let a = match cfg.policy {
                    Variant::Random => allowed[rng.random_range(0..allowed.len())],
                    _ => view.safest_action(&set).expect("lifted shield is non-empty"),
                };
                let sigma = st
                    .sigma(s, a)
                    .expect("shielded action is available in the actual state");
                log.decisions += 1;
                if view.allows_sigma(sigma) {
                    log.locally_safe += 1;
                }
                if cfg.record_steps {
                    log.records.push(StepRecord {
                        actual: s,
                        set: set.clone(),
                        allowed: allowed.clone(),
                        chosen: a,
                        sigma,
                    });
                }
                s = sample_row(perf.row(s, a).expect("checked above"), &mut rng);
                log.steps = t + 1;
                if unsafe_mask[s.0] {
                    log.outcome = Outcome::Fail;
                    return log;
                }
                if !perceivable(s) {
                    // a safe state the classifier has no class for: perceive it exactly
                    set = StateSet::singleton(s);
                } else {
                    set = perception.set(&gen_scores(profile, s, &mut rng));
                }
                allowed = view.lifted_shield(&set).into_iter().collect();
                if allowed.is_empty() {
                    log.outcome = Outcome::Stuck;
                    return log;
                }
            }
            log
        })
        .collect();

    let summary = summarize(&logs, cfg, perception.alpha());
    Ok((logs, summary))
}

fn summarize(logs: &[EpisodeLog], cfg: &RolloutConfig, alpha: Option<f64>) -> RolloutSummary {
    let n = logs.len().max(1) as f64;
    let frac = |o: Outcome| logs.iter().filter(|l| l.outcome == o).count() as f64 / n;
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    let (p_fail, p_stuck, p_success) = (frac(Outcome::Fail), frac(Outcome::Stuck), frac(Outcome::Success));
    let decisions: usize = logs.iter().map(|l| l.decisions).sum();
    let safe: usize = logs.iter().map(|l| l.locally_safe).sum();
    RolloutSummary {
        policy: cfg.policy,
        alpha,
        lambda: cfg.lambda,
        horizon: cfg.horizon,
        episodes: logs.len(),
        p_fail,
        p_stuck,
        p_success,
        se_fail: se(p_fail),
        se_stuck: se(p_stuck),
        se_success: se(p_success),
        local_safety_fraction: if decisions == 0 {
            1.0
        } else {
            safe as f64 / decisions as f64
        },
    }
}

/// Fraction of recorded steps whose chosen action had `σ(actual, a) ≤ λ`.
/// With no recorded steps the fraction is 1.
pub fn local_safety_audit(logs: &[EpisodeLog], lambda: f64) -> f64 {
    let key = crate::fmt::round12(lambda);
    let (mut ok, mut total) = (0usize, 0usize);
    for r in logs.iter().flat_map(|l| &l.records) {
        total += 1;
        if crate::fmt::round12(r.sigma) <= key {
            ok += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}

/// One CSV row per recorded step.
pub fn logs_csv(logs: &[EpisodeLog]) -> String {
    let mut out = String::from("episode,step,actual_state,set_hex,allowed,chosen,sigma,outcome\n");
    for (ep, log) in logs.iter().enumerate() {
        for (t, r) in log.records.iter().enumerate() {
            let allowed: Vec<String> = r.allowed.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(
                out,
                "{ep},{t},{},{},{},{},{},{}",
                r.actual,
                r.set.to_hex(),
                allowed.join(" "),
                r.chosen,
                g17(r.sigma),
                log.outcome.as_str()
            );
        }
    }
    out
}
