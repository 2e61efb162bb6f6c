//! Fail, stuck and success probabilities of a compiled model over a range of
//! horizons.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::error::Result;
use crate::fmt::g17;
use crate::mdp::{bounded_reach_stages, ExplicitMdp, Opt};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckMode {
    /// One action per state; the probabilities are exact and sum to 1.
    FixedPolicy,
    /// Several actions somewhere; each quantity is its own worst case.
    WorstCase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub horizon: usize,
    pub p_fail: f64,
    pub p_stuck: f64,
    pub p_success: f64,
    pub mode: CheckMode,
}

/// Evaluate the properties at each horizon in `horizons`. `m` must carry the
/// labels `fail` and `stuck`.
///
/// With a single action per state the maximising reachability is the
/// reachability of that policy, so one computation serves both modes.
/// Success is survival: one minus the largest probability of reaching either
/// terminal, which in worst-case mode is the smallest success probability.
pub fn check_properties(m: &ExplicitMdp, horizons: &[usize]) -> Result<Vec<PropertyResult>> {
    let fail = m.label("fail")?;
    let stuck = m.label("stuck")?;
    let either: BTreeSet<_> = fail.union(stuck).copied().collect();
    let mode = if m.states().all(|s| m.choices(s).len() <= 1) {
        CheckMode::FixedPolicy
    } else {
        CheckMode::WorstCase
    };
    let top = horizons.iter().copied().max().unwrap_or(0);
    let init = m.initial().0;
    let at_init = |target: &BTreeSet<_>| -> Vec<f64> {
        bounded_reach_stages(m, target, top, Opt::Max)
            .into_iter()
            .map(|stage| stage[init])
            .collect()
    };
    let (f, s, e) = (at_init(fail), at_init(stuck), at_init(&either));
    Ok(horizons
        .iter()
        .map(|&h| PropertyResult {
            horizon: h,
            p_fail: f[h],
            p_stuck: s[h],
            p_success: 1.0 - e[h],
            mode,
        })
        .collect())
}

pub const RESULTS_HEADER: &str = "variant,alpha,lambda,horizon,p_fail,p_stuck,p_success,wall_ms";

/// Rows for the results CSV (without the header).
pub fn results_rows(variant: &str, alpha: &str, lambda: f64, results: &[PropertyResult], wall_ms: u64) -> String {
    let mut out = String::new();
    for r in results {
        let _ = writeln!(
            out,
            "{variant},{alpha},{},{},{},{},{},{wall_ms}",
            g17(lambda),
            r.horizon,
            g17(r.p_fail),
            g17(r.p_stuck),
            g17(r.p_success)
        );
    }
    out
}
