//! Compilation of a shielded system with set-valued perception into an
//! explicit MDP over `(actual state, prediction set)` pairs.
//!
//! From a pair `(s, s̄)` the shield allows the actions of the lifted shield of
//! `s̄`. Taking `a` moves the actual state by the concrete dynamics; an unsafe
//! successor goes to the `fail` terminal, otherwise the next prediction set is
//! drawn from `ν(s', ·)`. Successor pairs whose lifted shield is empty are
//! fused into the `stuck` terminal.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::conformal::SetConfusion;
use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::mdp::{ActionId, ExplicitMdp, MdpBuilder, StateId};
use crate::model::emit_model_with_header;
use crate::shield::{ShieldView, SigmaTable};
use crate::stateset::StateSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Every lifted-shield action stays available; checked adversarially.
    Worst,
    /// A uniform choice among the lifted-shield actions.
    Random,
    /// Always the safest lifted-shield action.
    Safest,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Worst, Variant::Random, Variant::Safest];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Worst => "worst",
            Variant::Random => "random",
            Variant::Safest => "safest",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst" => Ok(Variant::Worst),
            "random" => Ok(Variant::Random),
            "safest" => Ok(Variant::Safest),
            other => Err(Error::invalid(format!(
                "unknown variant `{other}` (expected worst, random or safest)"
            ))),
        }
    }
}

/// What to do with an actual state that never appears in the confusion data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmptyPolicy {
    #[default]
    Error,
    /// Assume perfect perception there: the singleton `{s}` with mass 1.
    Point,
}

/// Per actual state, a distribution over prediction sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Nu {
    rows: BTreeMap<StateId, Vec<(StateSet, f64)>>,
    empty_policy: EmptyPolicy,
}

pub fn normalize_confusion(c: &SetConfusion, empty_policy: EmptyPolicy) -> Nu {
    let rows = c
        .actual_states()
        .filter_map(|s| {
            let total = c.total(s);
            (total > 0).then(|| {
                let row = c
                    .row(s)
                    .filter(|&(_, n)| n > 0)
                    .map(|(set, n)| (set.clone(), n as f64 / total as f64))
                    .collect();
                (s, row)
            })
        })
        .collect();
    Nu { rows, empty_policy }
}

impl Nu {
    /// Perfect perception over `n` states.
    pub fn identity(n: usize) -> Nu {
        Nu {
            rows: (0..n)
                .map(|i| (StateId(i), vec![(StateSet::singleton(StateId(i)), 1.0)]))
                .collect(),
            empty_policy: EmptyPolicy::Error,
        }
    }

    pub fn empty_policy(&self) -> EmptyPolicy {
        self.empty_policy
    }

    /// The distribution for `s`, applying the empty-state policy.
    pub fn row(&self, s: StateId) -> Result<std::borrow::Cow<'_, [(StateSet, f64)]>> {
        match (self.rows.get(&s), self.empty_policy) {
            (Some(row), _) => Ok(std::borrow::Cow::Borrowed(row)),
            (None, EmptyPolicy::Point) => Ok(std::borrow::Cow::Owned(vec![(StateSet::singleton(s), 1.0)])),
            (None, EmptyPolicy::Error) => Err(Error::MissingSamples(s.0)),
        }
    }

    /// True when every stored set is a singleton.
    pub fn is_pointwise(&self) -> bool {
        self.rows.values().flatten().all(|(set, _)| set.len() == 1)
    }

    /// States the confusion data covers.
    pub fn observed(&self) -> impl Iterator<Item = StateId> + '_ {
        self.rows.keys().copied()
    }
}

/// Prediction sets in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SetRegistry {
    sets: Vec<StateSet>,
    index: HashMap<StateSet, usize>,
}

impl SetRegistry {
    pub fn intern(&mut self, set: &StateSet) -> usize {
        if let Some(&id) = self.index.get(set) {
            return id;
        }
        self.sets.push(set.clone());
        self.index.insert(set.clone(), self.sets.len() - 1);
        self.sets.len() - 1
    }

    pub fn get(&self, id: usize) -> &StateSet {
        &self.sets[id]
    }

    pub fn id(&self, set: &StateSet) -> Option<usize> {
        self.index.get(set).copied()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StateSet> {
        self.sets.iter()
    }
}

/// An action index with its successor distribution.
type ActionRow = (usize, Vec<(Node, f64)>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Node {
    Pair(StateId, usize),
    Fail,
    Stuck,
}

/// The compiled model with what it was compiled from.
#[derive(Clone, Debug)]
pub struct AbstractModel {
    pub mdp: ExplicitMdp,
    pub variant: Variant,
    pub lambda: f64,
    pub lookahead: usize,
    pub alpha: Option<f64>,
    pub registry: SetRegistry,
    /// `(actual state, set id)` of every non-terminal state, by state index.
    pub pairs: Vec<(StateId, usize)>,
    pub fail: StateId,
    pub stuck: StateId,
    /// The initial pair had an empty lifted shield; the model starts in `stuck`.
    pub initial_stuck: bool,
    pub empty_policy: EmptyPolicy,
}

impl AbstractModel {
    /// `key=value` provenance lines for the model file header.
    pub fn provenance(&self) -> Vec<String> {
        let alpha = self.alpha.map_or_else(|| "none".to_string(), g17);
        let policy = match self.empty_policy {
            EmptyPolicy::Error => "error",
            EmptyPolicy::Point => "point",
        };
        let mut lines = vec![format!(
            "variant={} alpha={alpha} lambda={} lookahead={} empty_states={policy}",
            self.variant,
            g17(self.lambda),
            self.lookahead
        )];
        for (j, set) in self.registry.iter().enumerate() {
            lines.push(format!("set{j}={}", set.to_hex()));
        }
        if self.initial_stuck {
            lines.push("warning: initial state has an empty shield".to_string());
        }
        lines
    }

    /// The model in the modeling language, with `extra` header lines first.
    pub fn to_model_text(&self, extra: &[String]) -> String {
        let mut header = extra.to_vec();
        header.extend(self.provenance());
        emit_model_with_header(&self.mdp, &header)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CompileOptions {
    pub variant: Variant,
    pub alpha: Option<f64>,
    /// Keep only pairs reachable from the initial pair.
    pub prune: bool,
}

impl CompileOptions {
    pub fn new(variant: Variant) -> Self {
        CompileOptions {
            variant,
            alpha: None,
            prune: true,
        }
    }
}

/// Caps on the compiled model: non-terminal states and stored transitions.
pub const MAX_PAIRS: usize = 1_000_000;
pub const MAX_ENTRIES: usize = 20_000_000;

pub fn compile(perf: &ExplicitMdp, st: &SigmaTable, lambda: f64, nu: &Nu, variant: Variant) -> Result<AbstractModel> {
    compile_with(perf, st, lambda, nu, CompileOptions::new(variant))
}

/// The unconformalized comparison system: the shield of the point estimate is
/// applied as if it were the actual state.
pub fn compile_baseline(
    perf: &ExplicitMdp,
    st: &SigmaTable,
    lambda: f64,
    point_nu: &Nu,
    variant: Variant,
) -> Result<AbstractModel> {
    if !point_nu.is_pointwise() {
        return Err(Error::invalid("baseline confusion must contain only singleton sets"));
    }
    compile_with(perf, st, lambda, point_nu, CompileOptions::new(variant))
}

struct Compiler<'a> {
    perf: &'a ExplicitMdp,
    view: ShieldView<'a>,
    nu: &'a Nu,
    registry: SetRegistry,
    lifted: Vec<BTreeSet<ActionId>>,
}

impl Compiler<'_> {
    fn set_id(&mut self, set: &StateSet) -> Result<usize> {
        if let Some(bad) = set.iter().find(|s| s.0 >= self.perf.state_count()) {
            return Err(Error::invalid(format!("prediction set mentions unknown state {bad}")));
        }
        let id = self.registry.intern(set);
        if id == self.lifted.len() {
            self.lifted.push(self.view.lifted_shield(set));
        }
        Ok(id)
    }

    /// Where the mass of `(s, a)` goes.
    fn outcome(&mut self, s: StateId, a: ActionId) -> Result<Vec<(Node, f64)>> {
        let unsafe_states = self.view.table().unsafe_states();
        let mut out = Vec::new();
        for &(t, p) in self.perf.row(s, a).expect("shielded action is available") {
            if unsafe_states.contains(&t) {
                out.push((Node::Fail, p));
                continue;
            }
            for (set, q) in self.nu.row(t)?.iter() {
                let j = self.set_id(set)?;
                let node = if self.lifted[j].is_empty() {
                    Node::Stuck
                } else {
                    Node::Pair(t, j)
                };
                out.push((node, p * q));
            }
        }
        Ok(out)
    }

    /// Action rows of a non-terminal pair for the variant: `(label, mass)`.
    fn rows(&mut self, s: StateId, j: usize, variant: Variant) -> Result<Vec<ActionRow>> {
        let allowed: Vec<ActionId> = self.lifted[j].iter().copied().collect();
        match variant {
            Variant::Worst => allowed.into_iter().map(|a| Ok((a.0, self.outcome(s, a)?))).collect(),
            Variant::Random => {
                let w = 1.0 / allowed.len() as f64;
                let mut mix = Vec::new();
                for a in allowed {
                    mix.extend(self.outcome(s, a)?.into_iter().map(|(n, p)| (n, w * p)));
                }
                Ok(vec![(0, mix)])
            }
            Variant::Safest => {
                let set = self.registry.get(j).clone();
                let a = self.view.safest_action(&set).expect("lifted shield is non-empty");
                Ok(vec![(0, self.outcome(s, a)?)])
            }
        }
    }
}

pub fn compile_with(
    perf: &ExplicitMdp,
    st: &SigmaTable,
    lambda: f64,
    nu: &Nu,
    opts: CompileOptions,
) -> Result<AbstractModel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    st.check_matches(perf)?;
    let mut c = Compiler {
        perf,
        view: st.view(lambda),
        nu,
        registry: SetRegistry::default(),
        lifted: Vec::new(),
    };
    let iota = perf.initial();
    let init_set = c.set_id(&StateSet::singleton(iota))?;
    let initial_stuck = c.lifted[init_set].is_empty();

    // Discover pairs, computing each pair's rows once.
    let mut rows: BTreeMap<(StateId, usize), Vec<ActionRow>> = BTreeMap::new();
    let mut queue = VecDeque::new();
    if !initial_stuck {
        queue.push_back((iota, init_set));
    }
    if !opts.prune {
        for s in perf.states().filter(|s| !st.unsafe_states().contains(s)) {
            for (set, q) in nu.row(s)?.iter() {
                let j = c.set_id(set)?;
                if *q > 0.0 && !c.lifted[j].is_empty() {
                    queue.push_back((s, j));
                }
            }
        }
    }
    let mut entries = 0usize;
    while let Some((s, j)) = queue.pop_front() {
        if rows.contains_key(&(s, j)) {
            continue;
        }
        let r = c.rows(s, j, opts.variant)?;
        entries += r.iter().map(|(_, mass)| mass.len()).sum::<usize>();
        if rows.len() >= MAX_PAIRS || entries > MAX_ENTRIES {
            return Err(Error::ScaleLimit(format!(
                "compiled model exceeds {MAX_PAIRS} states or {MAX_ENTRIES} transitions"
            )));
        }
        for (_, mass) in &r {
            for &(node, p) in mass {
                if let Node::Pair(t, k) = node {
                    if p > 0.0 && !rows.contains_key(&(t, k)) {
                        queue.push_back((t, k));
                    }
                }
            }
        }
        rows.insert((s, j), r);
    }

    let pairs: Vec<(StateId, usize)> = rows.keys().copied().collect();
    let index: HashMap<(StateId, usize), usize> = pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let fail = StateId(pairs.len());
    let stuck = StateId(pairs.len() + 1);
    let node_id = |n: Node| match n {
        Node::Pair(s, j) => StateId(index[&(s, j)]),
        Node::Fail => fail,
        Node::Stuck => stuck,
    };

    let actions: Vec<String> = match opts.variant {
        Variant::Worst => perf.action_names().to_vec(),
        Variant::Random | Variant::Safest => vec!["step".to_string()],
    };
    let n = perf.state_count() as i64;
    let mut names: Vec<String> = pairs.iter().map(|(s, j)| format!("s{}_set{j}", s.0)).collect();
    names.extend(["fail".to_string(), "stuck".to_string()]);
    let mut valuations: Vec<Vec<i64>> = pairs.iter().map(|&(s, j)| vec![s.0 as i64, j as i64]).collect();
    valuations.extend([vec![n, 0], vec![n + 1, 0]]);

    let initial = if initial_stuck {
        stuck
    } else {
        StateId(index[&(iota, init_set)])
    };
    let mut b = MdpBuilder::new(pairs.len() + 2, actions)
        .names(names)
        .valuations(vec!["s".into(), "set".into()], valuations)
        .initial(initial);
    for (i, r) in rows.values().enumerate() {
        for (a, mass) in r {
            b.add(
                StateId(i),
                ActionId(*a),
                mass.iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|&(node, p)| (node_id(node), p)),
            );
        }
    }
    for t in [fail, stuck] {
        b.add(t, ActionId(0), [(t, 1.0)]);
    }
    b.set_label("fail", BTreeSet::from([fail]));
    b.set_label("stuck", BTreeSet::from([stuck]));
    let mdp = b.build()?;

    Ok(AbstractModel {
        mdp,
        variant: opts.variant,
        lambda,
        lookahead: st.lookahead(),
        alpha: opts.alpha,
        registry: c.registry,
        pairs,
        fail,
        stuck,
        initial_stuck,
        empty_policy: nu.empty_policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{bounded_reach, Opt};
    use crate::shield::synth_sigma_for_label;

    /// Three states in a row, the last one unsafe. `stay` is safe, `go`
    /// advances with probability 0.5.
    fn line() -> ExplicitMdp {
        MdpBuilder::new(3, ["stay", "go"])
            .self_loop(0, 0)
            .transition(0, 1, &[(0, 0.5), (1, 0.5)])
            .self_loop(1, 0)
            .transition(1, 1, &[(1, 0.5), (2, 0.5)])
            .self_loop(2, 0)
            .label("unsafe", [2])
            .build()
            .unwrap()
    }

    fn set(states: &[usize]) -> StateSet {
        states.iter().map(|&s| StateId(s)).collect()
    }

    #[test]
    fn normalization() {
        let mut c = SetConfusion::new();
        c.add(StateId(0), set(&[0]), 9);
        c.add(StateId(0), set(&[0, 1]), 1);
        let nu = normalize_confusion(&c, EmptyPolicy::Error);
        assert_eq!(
            nu.row(StateId(0)).unwrap().as_ref(),
            &[(set(&[0]), 0.9), (set(&[0, 1]), 0.1)]
        );
        assert!(matches!(nu.row(StateId(1)), Err(Error::MissingSamples(1))));
        let nu = normalize_confusion(&c, EmptyPolicy::Point);
        assert_eq!(nu.row(StateId(1)).unwrap().as_ref(), &[(set(&[1]), 1.0)]);
    }

    #[test]
    fn perfect_perception_reproduces_the_concrete_model() {
        let m = line();
        let st = synth_sigma_for_label(&m, "unsafe", 3).unwrap();
        let am = compile(&m, &st, 1.0, &Nu::identity(3), Variant::Worst).unwrap();
        assert_eq!(am.mdp.state_count(), 4);
        let fail = BTreeSet::from([am.fail]);
        let unsafe_states = m.label("unsafe").unwrap();
        for h in 0..=10 {
            let ours = bounded_reach(&am.mdp, &fail, h, Opt::Max).at(am.mdp.initial());
            let theirs = bounded_reach(&m, unsafe_states, h, Opt::Max).at(m.initial());
            assert!((ours - theirs).abs() <= 1e-12, "h={h}");
        }
    }

    #[test]
    fn empty_lifted_shield_leads_to_stuck() {
        let m = line();
        let st = synth_sigma_for_label(&m, "unsafe", 1).unwrap();
        let mut c = SetConfusion::new();
        c.add(StateId(0), set(&[0]), 1);
        c.add(StateId(1), set(&[1]), 1);
        let nu = normalize_confusion(&c, EmptyPolicy::Error);
        let am = compile(&m, &st, 0.4, &nu, Variant::Worst).unwrap();
        assert!(!am.initial_stuck);
        // σ(1, stay) = 0, so nothing is ever stuck here
        let stuck = BTreeSet::from([am.stuck]);
        assert_eq!(bounded_reach(&am.mdp, &stuck, 10, Opt::Max).at(am.mdp.initial()), 0.0);

        // σ(0, go) = 0.1 and σ(1, go) = 0.5, so at λ = 0.2 the pair for
        // state 1 is fused into `stuck`
        let m2 = MdpBuilder::new(3, ["go"])
            .transition(0, 0, &[(0, 0.8), (1, 0.2)])
            .transition(1, 0, &[(2, 0.5), (1, 0.5)])
            .self_loop(2, 0)
            .label("unsafe", [2])
            .build()
            .unwrap();
        let st2 = synth_sigma_for_label(&m2, "unsafe", 1).unwrap();
        let am = compile(&m2, &st2, 0.2, &Nu::identity(3), Variant::Worst).unwrap();
        assert_eq!(am.mdp.state_count(), 3);
        let stuck = BTreeSet::from([am.stuck]);
        assert_eq!(bounded_reach(&am.mdp, &stuck, 0, Opt::Max).at(am.mdp.initial()), 0.0);
        assert!((bounded_reach(&am.mdp, &stuck, 1, Opt::Max).at(am.mdp.initial()) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn initial_stuck_is_reported() {
        let m = MdpBuilder::new(2, ["go"])
            .transition(0, 0, &[(1, 1.0)])
            .self_loop(1, 0)
            .label("unsafe", [1])
            .build()
            .unwrap();
        let st = synth_sigma_for_label(&m, "unsafe", 1).unwrap();
        let am = compile(&m, &st, 0.5, &Nu::identity(2), Variant::Random).unwrap();
        assert!(am.initial_stuck);
        assert_eq!(am.mdp.initial(), am.stuck);
    }

    #[test]
    fn variants_and_conservation() {
        let m = line();
        let st = synth_sigma_for_label(&m, "unsafe", 2).unwrap();
        let mut c = SetConfusion::new();
        c.add(StateId(0), set(&[0]), 3);
        c.add(StateId(0), set(&[0, 1]), 1);
        c.add(StateId(1), set(&[1]), 1);
        c.add(StateId(1), set(&[0, 1]), 1);
        let nu = normalize_confusion(&c, EmptyPolicy::Error);
        for v in Variant::ALL {
            let am = compile(&m, &st, 0.6, &nu, v).unwrap();
            for s in am.mdp.states() {
                for ch in am.mdp.choices(s) {
                    let total: f64 = ch.successors.iter().map(|&(_, p)| p).sum();
                    assert!((total - 1.0).abs() < 1e-9);
                }
                if v != Variant::Worst {
                    assert_eq!(am.mdp.choices(s).len(), 1);
                }
            }
            assert!(am.mdp.state_count() <= 3 * am.registry.len() + 2);
        }
    }

    #[test]
    fn pruning_keeps_initial_values() {
        let m = line();
        let st = synth_sigma_for_label(&m, "unsafe", 2).unwrap();
        let mut c = SetConfusion::new();
        c.add(StateId(0), set(&[0, 1]), 1);
        c.add(StateId(1), set(&[1]), 1);
        let nu = normalize_confusion(&c, EmptyPolicy::Error);
        let pruned = compile(&m, &st, 0.6, &nu, Variant::Worst).unwrap();
        let mut opts = CompileOptions::new(Variant::Worst);
        opts.prune = false;
        let full = compile_with(&m, &st, 0.6, &nu, opts).unwrap();
        assert!(full.mdp.state_count() >= pruned.mdp.state_count());
        for h in 0..8 {
            let a = bounded_reach(&pruned.mdp, &BTreeSet::from([pruned.fail]), h, Opt::Max).at(pruned.mdp.initial());
            let b = bounded_reach(&full.mdp, &BTreeSet::from([full.fail]), h, Opt::Max).at(full.mdp.initial());
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn baseline_requires_points() {
        let m = line();
        let st = synth_sigma_for_label(&m, "unsafe", 2).unwrap();
        let mut c = SetConfusion::new();
        c.add(StateId(0), set(&[0, 1]), 1);
        let nu = normalize_confusion(&c, EmptyPolicy::Point);
        assert!(compile_baseline(&m, &st, 0.5, &nu, Variant::Random).is_err());
    }

    #[test]
    fn naming() {
        let m = line();
        let st = synth_sigma_for_label(&m, "unsafe", 2).unwrap();
        let am = compile(&m, &st, 1.0, &Nu::identity(3), Variant::Safest).unwrap();
        assert_eq!(am.mdp.state_name(StateId(0)), "s0_set0");
        assert_eq!(am.mdp.state_name(am.fail), "fail");
        assert_eq!(am.mdp.state_name(am.stuck), "stuck");
        assert_eq!(
            am.provenance()[0],
            "variant=safest alpha=none lambda=1.0000000000000000 lookahead=2 empty_states=error"
        );
    }
}
