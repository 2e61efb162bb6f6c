use std::collections::BTreeSet;

use super::{mask, ExplicitMdp, StateId};

/// Which way the nondeterminism is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opt {
    Max,
    Min,
}

/// Optimal probability of visiting `target` within `horizon` steps, per
/// start state.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachVector {
    pub values: Vec<f64>,
    pub horizon: usize,
    pub mode: Opt,
    pub target: BTreeSet<StateId>,
}

impl ReachVector {
    pub fn at(&self, s: StateId) -> f64 {
        self.values[s.0]
    }
}

/// Bounded reachability by backward induction over time-varying policies.
pub fn bounded_reach(m: &ExplicitMdp, target: &BTreeSet<StateId>, horizon: usize, mode: Opt) -> ReachVector {
    let values = bounded_reach_stages(m, target, horizon, mode)
        .pop()
        .expect("stage 0 always present");
    ReachVector {
        values,
        horizon,
        mode,
        target: target.clone(),
    }
}

/// All backward-induction stages `x_0 ..= x_horizon`; `x_k[s]` is the
/// optimal probability of visiting `target` within `k` steps from `s`.
pub fn bounded_reach_stages(m: &ExplicitMdp, target: &BTreeSet<StateId>, horizon: usize, mode: Opt) -> Vec<Vec<f64>> {
    let n = m.state_count();
    let hit = mask(n, target);
    let mut stages = Vec::with_capacity(horizon + 1);
    stages.push(hit.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect::<Vec<f64>>());
    for _ in 0..horizon {
        let prev = stages.last().unwrap();
        let next: Vec<f64> = (0..n)
            .map(|i| {
                if hit[i] {
                    return 1.0;
                }
                let values = m
                    .choices(StateId(i))
                    .iter()
                    .map(|c| c.successors.iter().fold(0.0, |acc, &(t, p)| acc + p * prev[t.0]));
                let best = match mode {
                    Opt::Max => values.fold(f64::NEG_INFINITY, f64::max),
                    Opt::Min => values.fold(f64::INFINITY, f64::min),
                };
                // rows are stochastic, rounding may overshoot by an ulp
                best.clamp(0.0, 1.0)
            })
            .collect();
        stages.push(next);
    }
    stages
}
