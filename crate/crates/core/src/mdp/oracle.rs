//! Brute-force path enumeration. Exponential by design; it exists to check
//! the dynamic-programming routines on small models.

use std::collections::BTreeSet;

use super::{mask, ExplicitMdp, PolicyMemoryless, StateId};
use crate::error::{Error, Result};

pub const ORACLE_MAX_STATES: usize = 16;
pub const ORACLE_MAX_HORIZON: usize = 12;

fn check_scale(m: &ExplicitMdp, horizon: usize) -> Result<()> {
    if m.state_count() > ORACLE_MAX_STATES || horizon > ORACLE_MAX_HORIZON {
        return Err(Error::ScaleLimit(format!(
            "path enumeration needs <= {ORACLE_MAX_STATES} states and horizon <= \
             {ORACLE_MAX_HORIZON} (got {} states, horizon {horizon})",
            m.state_count()
        )));
    }
    Ok(())
}

/// Walk every positive-probability path of exactly `horizon` transitions,
/// calling `visit` with the full state sequence and the product of its
/// transition probabilities.
fn for_each_path<F>(m: &ExplicitMdp, pi: &PolicyMemoryless, start: StateId, horizon: usize, visit: &mut F)
where
    F: FnMut(&[StateId], f64),
{
    fn go<F: FnMut(&[StateId], f64)>(
        m: &ExplicitMdp,
        pi: &PolicyMemoryless,
        path: &mut Vec<StateId>,
        weight: f64,
        remaining: usize,
        visit: &mut F,
    ) {
        if remaining == 0 {
            visit(path, weight);
            return;
        }
        let s = *path.last().unwrap();
        let row = m.row(s, pi.action(s)).expect("policy action is available");
        for &(t, p) in row {
            if p == 0.0 {
                continue;
            }
            path.push(t);
            go(m, pi, path, weight * p, remaining - 1, visit);
            path.pop();
        }
    }
    let mut path = vec![start];
    go(m, pi, &mut path, 1.0, horizon, visit);
}

/// Probability that a path of `horizon` steps from `start` under `pi` visits
/// `hit` at some time `0..=horizon`, as an explicit sum over paths.
pub fn enumerate_path_prob(
    m: &ExplicitMdp,
    pi: &PolicyMemoryless,
    start: StateId,
    horizon: usize,
    hit: &BTreeSet<StateId>,
) -> Result<f64> {
    check_scale(m, horizon)?;
    let hit = mask(m.state_count(), hit);
    let mut total = 0.0;
    for_each_path(m, pi, start, horizon, &mut |path, w| {
        if path.iter().any(|s| hit[s.0]) {
            total += w;
        }
    });
    Ok(total)
}

/// Distribution of the final state of length-`horizon` paths from `start`.
pub fn path_marginals(m: &ExplicitMdp, pi: &PolicyMemoryless, start: StateId, horizon: usize) -> Result<Vec<f64>> {
    check_scale(m, horizon)?;
    let mut out = vec![0.0; m.state_count()];
    for_each_path(m, pi, start, horizon, &mut |path, w| {
        out[path.last().unwrap().0] += w;
    });
    Ok(out)
}
