use std::collections::BTreeSet;

use super::{mask, Choice, ExplicitMdp, PolicyMemoryless, StateId};
use crate::error::{Error, Result};

/// Probability of being in each state at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyVector {
    entries: Vec<f64>,
}

impl OccupancyVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(Error::invalid("occupancy entries must lie in [0, 1]"));
        }
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("occupancy sums to {total}")));
        }
        Ok(OccupancyVector { entries })
    }

    pub fn point(n: usize, s: StateId) -> Self {
        let mut entries = vec![0.0; n];
        entries[s.0] = 1.0;
        OccupancyVector { entries }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn at(&self, s: StateId) -> f64 {
        self.entries[s.0]
    }

    /// Total mass on a set of states.
    pub fn mass(&self, set: &BTreeSet<StateId>) -> f64 {
        set.iter().map(|s| self.entries[s.0]).sum()
    }
}

/// One step of the policy-induced chain: `d'[t] = Σ_s P(s, π(s), t) d[s]`.
pub fn step_occupancy(m: &ExplicitMdp, policy: &PolicyMemoryless, d: &OccupancyVector) -> OccupancyVector {
    let mut next = vec![0.0; m.state_count()];
    for s in m.states() {
        let mass = d.entries[s.0];
        if mass == 0.0 {
            continue;
        }
        let row = m.row(s, policy.action(s)).expect("policy action is available");
        for &(t, p) in row {
            next[t.0] += p * mass;
        }
    }
    OccupancyVector { entries: next }
}

/// Replace the rows of every state in `freeze` by a single deterministic
/// self-loop, labelled with that state's lowest available action.
pub fn make_absorbing(m: &ExplicitMdp, freeze: &BTreeSet<StateId>) -> ExplicitMdp {
    let frozen = mask(m.state_count(), freeze);
    let mut out = m.clone();
    for (i, cs) in out.choices_mut().iter_mut().enumerate() {
        if frozen[i] {
            let action = cs[0].action;
            *cs = vec![Choice {
                action,
                successors: vec![(StateId(i), 1.0)],
            }];
        }
    }
    out
}
