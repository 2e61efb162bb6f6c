use cshield::case_study::{taxi_model_text, TAXI_NOISE, TAXI_SHIFT, TAXI_STATES};
use cshield::model::{parse_model, ModelSource};
use cshield::shield::{synth_sigma_for_label, DEFAULT_LOOKAHEAD};
use cshield::StateId;

const COMMITTED: &str = include_str!("../../../models/taxi.pm");

#[test]
fn committed_model_matches_generator() {
    let generated = taxi_model_text(TAXI_NOISE, TAXI_SHIFT);
    if std::env::var_os("CSHIELD_WRITE_MODEL").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/taxi.pm"), &generated).unwrap();
    }
    assert_eq!(COMMITTED, generated);
}

#[test]
fn every_state_has_a_tenth_safe_action() {
    let m = parse_model(&ModelSource::inline(COMMITTED)).unwrap();
    let st = synth_sigma_for_label(&m, "fail", DEFAULT_LOOKAHEAD).unwrap();
    for s in 0..TAXI_STATES {
        let best = st.entries(StateId(s)).iter().map(|e| e.1).fold(1.0, f64::min);
        assert!(best <= 0.1, "state {s}: {best}");
    }
}
