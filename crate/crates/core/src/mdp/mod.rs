//! Explicit-state MDPs and the finite-horizon analyses built on them.

mod occupancy;
mod oracle;
mod reach;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

pub use occupancy::{make_absorbing, step_occupancy, OccupancyVector};
pub use oracle::{enumerate_path_prob, path_marginals, ORACLE_MAX_HORIZON, ORACLE_MAX_STATES};
pub use reach::{bounded_reach, bounded_reach_stages, Opt, ReachVector};

/// Dense 0-based state index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub usize);

/// Dense 0-based action index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One enabled action in a state and its outcome distribution.
///
/// Successors are sorted by ascending `StateId` and contain no duplicates;
/// every summation over a row walks them in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub action: ActionId,
    pub successors: Vec<(StateId, f64)>,
}

/// A finite MDP with sparse rows and named state labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitMdp {
    variables: Vec<String>,
    valuations: Vec<Vec<i64>>,
    names: Vec<String>,
    actions: Vec<String>,
    initial: StateId,
    choices: Vec<Vec<Choice>>,
    labels: BTreeMap<String, BTreeSet<StateId>>,
}

impl ExplicitMdp {
    pub fn state_count(&self) -> usize {
        self.choices.len()
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.state_count()).map(StateId)
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.actions[a.0]
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    pub fn action_by_name(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|a| a == name).map(ActionId)
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.names[s.0]
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn valuation(&self, s: StateId) -> &[i64] {
        &self.valuations[s.0]
    }

    /// Enabled actions of `s`, sorted by `ActionId`.
    pub fn choices(&self, s: StateId) -> &[Choice] {
        &self.choices[s.0]
    }

    pub fn available(&self, s: StateId) -> impl Iterator<Item = ActionId> + '_ {
        self.choices[s.0].iter().map(|c| c.action)
    }

    pub fn row(&self, s: StateId, a: ActionId) -> Option<&[(StateId, f64)]> {
        self.choices[s.0]
            .binary_search_by_key(&a, |c| c.action)
            .ok()
            .map(|i| self.choices[s.0][i].successors.as_slice())
    }

    /// A terminal state has exactly one action, a deterministic self-loop.
    pub fn is_terminal(&self, s: StateId) -> bool {
        matches!(self.choices[s.0].as_slice(),
            [c] if c.successors.len() == 1 && c.successors[0].0 == s)
    }

    pub fn labels(&self) -> &BTreeMap<String, BTreeSet<StateId>> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Result<&BTreeSet<StateId>> {
        self.labels
            .get(name)
            .ok_or_else(|| Error::MissingLabel(name.to_string()))
    }

    pub fn transition_count(&self) -> usize {
        self.choices
            .iter()
            .flat_map(|cs| cs.iter())
            .map(|c| c.successors.len())
            .sum()
    }

    /// Same structure with the enabled actions of every state filtered.
    /// States left without actions keep their original rows.
    pub fn restrict<F>(&self, mut keep: F) -> ExplicitMdp
    where
        F: FnMut(StateId, ActionId) -> bool,
    {
        let mut out = self.clone();
        for (i, cs) in out.choices.iter_mut().enumerate() {
            let kept: Vec<Choice> = cs.iter().filter(|c| keep(StateId(i), c.action)).cloned().collect();
            if !kept.is_empty() {
                *cs = kept;
            }
        }
        out
    }

    /// Keep only the action chosen by `policy` in every state.
    pub fn under_policy(&self, policy: &PolicyMemoryless) -> ExplicitMdp {
        self.restrict(|s, a| policy.action(s) == a)
    }

    pub(crate) fn from_parts(parts: MdpParts) -> ExplicitMdp {
        ExplicitMdp {
            variables: parts.variables,
            valuations: parts.valuations,
            names: parts.names,
            actions: parts.actions,
            initial: parts.initial,
            choices: parts.choices,
            labels: parts.labels,
        }
    }

    pub(crate) fn choices_mut(&mut self) -> &mut Vec<Vec<Choice>> {
        &mut self.choices
    }
}

pub(crate) struct MdpParts {
    pub variables: Vec<String>,
    pub valuations: Vec<Vec<i64>>,
    pub names: Vec<String>,
    pub actions: Vec<String>,
    pub initial: StateId,
    pub choices: Vec<Vec<Choice>>,
    pub labels: BTreeMap<String, BTreeSet<StateId>>,
}

/// Incremental construction of an [`ExplicitMdp`] in code.
///
/// States get the single variable `s` with valuation `[i]` unless names or
/// valuations are supplied. [`MdpBuilder::build`] normalises rows (merging
/// duplicate successors, sorting) and rejects anything `validate` flags as an
/// error.
#[derive(Clone, Debug)]
pub struct MdpBuilder {
    actions: Vec<String>,
    names: Vec<String>,
    valuations: Option<(Vec<String>, Vec<Vec<i64>>)>,
    initial: StateId,
    rows: Vec<BTreeMap<ActionId, BTreeMap<StateId, f64>>>,
    labels: BTreeMap<String, BTreeSet<StateId>>,
}

impl MdpBuilder {
    pub fn new<S: Into<String>>(state_count: usize, actions: impl IntoIterator<Item = S>) -> Self {
        MdpBuilder {
            actions: actions.into_iter().map(Into::into).collect(),
            names: (0..state_count).map(|i| format!("s{i}")).collect(),
            valuations: None,
            initial: StateId(0),
            rows: vec![BTreeMap::new(); state_count],
            labels: BTreeMap::new(),
        }
    }

    pub fn initial(mut self, s: StateId) -> Self {
        self.initial = s;
        self
    }

    pub fn names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.rows.len());
        self.names = names;
        self
    }

    pub fn valuations(mut self, variables: Vec<String>, valuations: Vec<Vec<i64>>) -> Self {
        assert_eq!(valuations.len(), self.rows.len());
        self.valuations = Some((variables, valuations));
        self
    }

    /// Add outcome mass for `(s, a)`. Repeated targets accumulate.
    pub fn transition(mut self, s: usize, a: usize, succ: &[(usize, f64)]) -> Self {
        self.add(StateId(s), ActionId(a), succ.iter().map(|&(t, p)| (StateId(t), p)));
        self
    }

    pub fn add(&mut self, s: StateId, a: ActionId, succ: impl IntoIterator<Item = (StateId, f64)>) {
        let row = self.rows[s.0].entry(a).or_default();
        for (t, p) in succ {
            *row.entry(t).or_insert(0.0) += p;
        }
    }

    pub fn self_loop(mut self, s: usize, a: usize) -> Self {
        self.add(StateId(s), ActionId(a), [(StateId(s), 1.0)]);
        self
    }

    pub fn label(mut self, name: &str, states: impl IntoIterator<Item = usize>) -> Self {
        self.labels
            .insert(name.to_string(), states.into_iter().map(StateId).collect());
        self
    }

    pub fn set_label(&mut self, name: &str, states: BTreeSet<StateId>) {
        self.labels.insert(name.to_string(), states);
    }

    /// Build without validation.
    pub fn build_unchecked(self) -> ExplicitMdp {
        let n = self.rows.len();
        let (variables, valuations) = self
            .valuations
            .unwrap_or_else(|| (vec!["s".to_string()], (0..n as i64).map(|i| vec![i]).collect()));
        let choices = self
            .rows
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|(action, succ)| Choice {
                        action,
                        successors: succ.into_iter().collect(),
                    })
                    .collect()
            })
            .collect();
        ExplicitMdp::from_parts(MdpParts {
            variables,
            valuations,
            names: self.names,
            actions: self.actions,
            initial: self.initial,
            choices,
            labels: self.labels,
        })
    }

    pub fn build(self) -> Result<ExplicitMdp> {
        let m = self.build_unchecked();
        let errors: Vec<_> = crate::model::validate(&m)
            .into_iter()
            .filter(|d| d.severity == crate::model::Severity::Error)
            .collect();
        if errors.is_empty() {
            Ok(m)
        } else {
            Err(Error::Model(errors))
        }
    }
}

/// A stationary deterministic policy: one action per state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyMemoryless {
    choice: Vec<ActionId>,
}

impl PolicyMemoryless {
    pub fn new(m: &ExplicitMdp, choice: Vec<ActionId>) -> Result<Self> {
        if choice.len() != m.state_count() {
            return Err(Error::invalid(format!(
                "policy covers {} states, model has {}",
                choice.len(),
                m.state_count()
            )));
        }
        for (i, &a) in choice.iter().enumerate() {
            if m.row(StateId(i), a).is_none() {
                return Err(Error::invalid(format!(
                    "policy picks action {a} not available in state {i}"
                )));
            }
        }
        Ok(PolicyMemoryless { choice })
    }

    /// The policy taking the lowest available action everywhere.
    pub fn first_available(m: &ExplicitMdp) -> Self {
        PolicyMemoryless {
            choice: m.states().map(|s| m.choices(s)[0].action).collect(),
        }
    }

    pub fn action(&self, s: StateId) -> ActionId {
        self.choice[s.0]
    }

    /// Carry the policy over to a model with the same states but possibly
    /// fewer actions (e.g. after `make_absorbing`); states where the chosen
    /// action disappeared take their lowest available action.
    pub fn adapted_to(&self, m: &ExplicitMdp) -> Self {
        PolicyMemoryless {
            choice: m
                .states()
                .map(|s| {
                    let a = self.choice[s.0];
                    if m.row(s, a).is_some() {
                        a
                    } else {
                        m.choices(s)[0].action
                    }
                })
                .collect(),
        }
    }

    /// Every memoryless policy of `m`, in lexicographic order of choices.
    pub fn enumerate(m: &ExplicitMdp) -> Vec<PolicyMemoryless> {
        let mut out = vec![Vec::with_capacity(m.state_count())];
        for s in m.states() {
            let mut next = Vec::with_capacity(out.len() * m.choices(s).len());
            for prefix in &out {
                for a in m.available(s) {
                    let mut p = prefix.clone();
                    p.push(a);
                    next.push(p);
                }
            }
            out = next;
        }
        out.into_iter().map(|choice| PolicyMemoryless { choice }).collect()
    }
}

pub(crate) fn mask(n: usize, set: &BTreeSet<StateId>) -> Vec<bool> {
    let mut m = vec![false; n];
    for s in set {
        m[s.0] = true;
    }
    m
}
