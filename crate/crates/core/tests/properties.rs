use std::collections::BTreeSet;

use cshield::abstraction::{compile, normalize_confusion, EmptyPolicy, Variant};
use cshield::checker::{check_properties, CheckMode};
use cshield::conformal::{build_set_confusion, calibrate, ScoredSample, SetConfusion};
use cshield::mdp::{bounded_reach, enumerate_path_prob, make_absorbing, Opt, PolicyMemoryless};
use cshield::model::{emit_model, parse_model, ModelSource};
use cshield::shield::synth_sigma;
use cshield::theorem::{random_mdp, RandomMdpSpec};
use cshield::{ExplicitMdp, StateId, StateSet};
use proptest::prelude::*;

fn small_model(seed: u64, actions: usize) -> ExplicitMdp {
    random_mdp(
        RandomMdpSpec {
            max_states: 5,
            actions,
            max_support: 3,
        },
        seed,
    )
}

fn set_from_mask(n: usize, mask: u32) -> StateSet {
    let mut set = StateSet::new();
    for s in (0..n).filter(|s| mask & (1 << s) != 0) {
        set.insert(StateId(s));
    }
    set
}

/// Every state is seen as itself or together with its successor in index
/// order, with weights drawn from `w`.
fn two_set_confusion(n: usize, w: &[u64]) -> SetConfusion {
    let mut c = SetConfusion::new();
    for s in 0..n {
        let mut pair = StateSet::singleton(StateId(s));
        pair.insert(StateId((s + 1) % n));
        c.add(StateId(s), StateSet::singleton(StateId(s)), 1 + w[s % w.len()] % 9);
        c.add(StateId(s), pair, 1 + w[(s + 1) % w.len()] % 5);
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn shield_grows_with_threshold(seed in 0u64..10_000, n in 1usize..4, l1 in 0.0f64..1.0, l2 in 0.0f64..1.0) {
        let m = small_model(seed, 3);
        let st = synth_sigma(&m, m.label("unsafe").unwrap(), n).unwrap();
        let (lo, hi) = (l1.min(l2), l1.max(l2));
        for s in m.states() {
            prop_assert!(st.view(lo).shield_actions(s).is_subset(&st.view(hi).shield_actions(s)));
        }
    }

    #[test]
    fn lifting_shrinks_as_sets_grow(seed in 0u64..10_000, lambda in 0.0f64..1.0, small in 1u32..32, extra in 0u32..32) {
        let m = small_model(seed, 3);
        let st = synth_sigma(&m, m.label("unsafe").unwrap(), 3).unwrap();
        let view = st.view(lambda);
        let n = m.state_count();
        let sbar1 = set_from_mask(n, small);
        let sbar2 = set_from_mask(n, small | extra);
        prop_assume!(!sbar1.is_empty());
        prop_assert!(view.lifted_shield(&sbar2).is_subset(&view.lifted_shield(&sbar1)));
        for sbar in [&sbar1, &sbar2] {
            match view.safest_action(sbar) {
                Some(a) => prop_assert!(view.lifted_shield(sbar).contains(&a)),
                None => prop_assert!(view.lifted_shield(sbar).is_empty()),
            }
        }
    }

    #[test]
    fn reach_is_monotone_and_ordered(seed in 0u64..10_000) {
        let m = small_model(seed, 2);
        let target = m.label("unsafe").unwrap();
        for h in 0..6 {
            let (lo, hi, next) = (
                bounded_reach(&m, target, h, Opt::Min),
                bounded_reach(&m, target, h, Opt::Max),
                bounded_reach(&m, target, h + 1, Opt::Max),
            );
            for s in m.states() {
                prop_assert!(lo.at(s) <= hi.at(s) + 1e-15);
                prop_assert!(hi.at(s) <= next.at(s) + 1e-15);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&hi.at(s)));
            }
        }
    }

    #[test]
    fn absorbing_unsafe_states_keeps_hit_probability(seed in 0u64..10_000, pick in 0usize..64) {
        let m = small_model(seed, 2);
        let unsafe_states = m.label("unsafe").unwrap();
        let absorbed = make_absorbing(&m, unsafe_states);
        let policies = PolicyMemoryless::enumerate(&m);
        let pi = &policies[pick % policies.len()];
        for h in 0..=6 {
            let before = bounded_reach(&m.under_policy(pi), unsafe_states, h, Opt::Max);
            let after = bounded_reach(&absorbed.under_policy(&pi.adapted_to(&absorbed)), unsafe_states, h, Opt::Max);
            for s in m.states() {
                prop_assert!((before.at(s) - after.at(s)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn emitted_models_parse_back(seed in 0u64..10_000) {
        let m = small_model(seed, 3);
        let again = parse_model(&ModelSource::inline(emit_model(&m))).unwrap();
        // Parsing keeps only the states reachable from the initial one.
        prop_assert!(again.state_count() <= m.state_count());
        if again.state_count() == m.state_count() {
            prop_assert_eq!(again.labels(), m.labels());
            for s in m.states() {
                for a in m.available(s) {
                    prop_assert_eq!(again.row(s, a), m.row(s, a));
                }
            }
        }
        for h in 0..=6 {
            for opt in [Opt::Min, Opt::Max] {
                let a = bounded_reach(&m, m.label("unsafe").unwrap(), h, opt).at(m.initial());
                let b = bounded_reach(&again, again.label("unsafe").unwrap(), h, opt).at(again.initial());
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
        let text = emit_model(&again);
        prop_assert_eq!(emit_model(&parse_model(&ModelSource::inline(text.clone())).unwrap()), text);
    }

    #[test]
    fn compiled_models_agree_with_path_enumeration(
        seed in 0u64..10_000,
        lambda in 0.0f64..1.0,
        weights in proptest::collection::vec(0u64..100, 5),
    ) {
        let m = small_model(seed, 2);
        let st = synth_sigma(&m, m.label("unsafe").unwrap(), 2).unwrap();
        let nu = normalize_confusion(&two_set_confusion(m.state_count(), &weights), EmptyPolicy::Error);
        let am = compile(&m, &st, lambda, &nu, Variant::Random).unwrap();
        let results = check_properties(&am.mdp, &[0, 1, 2, 3, 4, 5]).unwrap();
        let pi = PolicyMemoryless::first_available(&am.mdp);
        let fail = BTreeSet::from([am.fail]);
        let stuck = BTreeSet::from([am.stuck]);
        for r in &results {
            prop_assert_eq!(r.mode, CheckMode::FixedPolicy);
            prop_assert!((r.p_fail + r.p_stuck + r.p_success - 1.0).abs() <= 1e-9);
            let f = enumerate_path_prob(&am.mdp, &pi, am.mdp.initial(), r.horizon, &fail).unwrap();
            let k = enumerate_path_prob(&am.mdp, &pi, am.mdp.initial(), r.horizon, &stuck).unwrap();
            prop_assert!((r.p_fail - f).abs() <= 1e-12);
            prop_assert!((r.p_stuck - k).abs() <= 1e-12);
        }
        for w in results.windows(2) {
            prop_assert!(w[1].p_fail >= w[0].p_fail - 1e-15);
            prop_assert!(w[1].p_stuck >= w[0].p_stuck - 1e-15);
            prop_assert!(w[1].p_success <= w[0].p_success + 1e-15);
        }
    }

    #[test]
    fn variants_are_ordered(
        seed in 0u64..10_000,
        lambda in 0.0f64..1.0,
        weights in proptest::collection::vec(0u64..100, 5),
    ) {
        let m = small_model(seed, 3);
        let st = synth_sigma(&m, m.label("unsafe").unwrap(), 3).unwrap();
        let nu = normalize_confusion(&two_set_confusion(m.state_count(), &weights), EmptyPolicy::Error);
        let horizons: Vec<usize> = (0..=8).collect();
        let check = |v| check_properties(&compile(&m, &st, lambda, &nu, v).unwrap().mdp, &horizons).unwrap();
        let (worst, safest, random) = (check(Variant::Worst), check(Variant::Safest), check(Variant::Random));
        for h in 0..horizons.len() {
            prop_assert!(safest[h].p_fail <= worst[h].p_fail + 1e-12);
            prop_assert!(random[h].p_fail <= worst[h].p_fail + 1e-12);
            prop_assert!(worst[h].p_success <= random[h].p_success + 1e-12);
        }
    }

    #[test]
    fn prediction_sets_nest_and_confusion_counts_everything(
        raw in proptest::collection::vec((0usize..4, proptest::collection::vec(0.01f64..1.0, 4)), 20..80),
        a1 in 0.01f64..0.5,
        a2 in 0.01f64..0.5,
    ) {
        let samples: Vec<ScoredSample> = raw
            .iter()
            .map(|(s, w)| {
                let total: f64 = w.iter().sum();
                ScoredSample::new(StateId(*s), w.iter().map(|x| x / total).collect()).unwrap()
            })
            .collect();
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        let wide = calibrate(&samples, lo).unwrap();
        let narrow = calibrate(&samples, hi).unwrap();
        for t in &samples {
            prop_assert!(narrow.predict_set(&t.scores).is_subset(&wide.predict_set(&t.scores)));
        }
        let confusion = build_set_confusion(&wide, &samples);
        for s in 0..4 {
            let expected = samples.iter().filter(|t| t.true_state == StateId(s)).count() as u64;
            prop_assert_eq!(confusion.total(StateId(s)), expected);
        }
    }
}
