use std::collections::BTreeSet;

use super::{fmt_prob, Diagnostic, DiagnosticCode, Pos};
use crate::mdp::{ExplicitMdp, StateId};

const NOWHERE: Pos = Pos { line: 0, col: 0 };

/// Structural checks on an in-memory model. Never fails; problems come back
/// as diagnostics (errors for broken invariants, warnings for empty labels).
pub fn validate(m: &ExplicitMdp) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = m.state_count();
    let err = |msg: String| Diagnostic::error(DiagnosticCode::Structure, NOWHERE, msg);
    if n == 0 {
        out.push(err("model has no states".into()));
        return out;
    }
    if m.initial().0 >= n {
        out.push(err(format!("initial state {} does not exist", m.initial())));
    }
    for s in m.states() {
        let choices = m.choices(s);
        if choices.is_empty() {
            out.push(err(format!("state {s} has no available actions")));
        }
        let mut seen = BTreeSet::new();
        for c in choices {
            if c.action.0 >= m.action_count() {
                out.push(err(format!("state {s} uses undeclared action {}", c.action)));
            }
            if !seen.insert(c.action) {
                out.push(err(format!("state {s} lists action {} twice", c.action)));
            }
            let mut total = 0.0;
            for &(t, p) in &c.successors {
                if t.0 >= n {
                    out.push(err(format!("row ({s}, {}) targets missing state {t}", c.action)));
                }
                if !(0.0..=1.0).contains(&p) {
                    out.push(err(format!(
                        "row ({s}, {}) has probability {} outside [0, 1]",
                        c.action,
                        fmt_prob(p)
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-9 {
                out.push(err(format!("row ({s}, {}) sums to {total:.17}", c.action)));
            }
        }
    }
    for (name, states) in m.labels() {
        if let Some(bad) = states.iter().find(|s: &&StateId| s.0 >= n) {
            out.push(err(format!("label \"{name}\" references missing state {bad}")));
        }
        if states.is_empty() {
            out.push(Diagnostic::warning(
                DiagnosticCode::EmptyLabel,
                NOWHERE,
                format!("empty label \"{name}\""),
            ));
        }
    }
    out
}
