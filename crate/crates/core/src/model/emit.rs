use std::fmt::Write;

use crate::mdp::{ExplicitMdp, StateId};

/// Render `m` in the modeling language. Probabilities use the shortest
/// representation that parses back to the same `f64`, so re-parsing yields
/// bit-identical rows. Every state must be reachable from the initial state
/// for the round trip to keep it.
pub fn emit_model(m: &ExplicitMdp) -> String {
    emit_model_with_header(m, &[])
}

/// As [`emit_model`], with extra `//` comment lines at the top.
pub fn emit_model_with_header(m: &ExplicitMdp, header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "// {line}");
    }
    out.push_str("mdp\n\n");

    let vars = m.variables();
    let _ = writeln!(out, "module model");
    let init = m.valuation(m.initial());
    for (i, v) in vars.iter().enumerate() {
        let (lo, hi) = m
            .states()
            .map(|s| m.valuation(s)[i])
            .fold((i64::MAX, i64::MIN), |(lo, hi), x| (lo.min(x), hi.max(x)));
        let _ = writeln!(out, "  {v} : [{lo}..{hi}] init {};", init[i]);
    }
    out.push('\n');
    for s in m.states() {
        if m.state_name(s) != default_name(m, s) {
            let _ = writeln!(out, "  // {} = {}", guard(m, s), m.state_name(s));
        }
        for c in m.choices(s) {
            let branches: Vec<String> = c
                .successors
                .iter()
                .map(|&(t, p)| format!("{p}:{}", assignment(m, t)))
                .collect();
            let _ = writeln!(
                out,
                "  [{}] {} -> {};",
                m.action_name(c.action),
                guard(m, s),
                branches.join(" + ")
            );
        }
    }
    out.push_str("endmodule\n");
    if !m.labels().is_empty() {
        out.push('\n');
    }
    for (name, states) in m.labels() {
        let expr = if states.is_empty() {
            "false".to_string()
        } else {
            states
                .iter()
                .map(|&s| format!("({})", guard(m, s)))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(out, "label \"{name}\" = {expr};");
    }
    out
}

fn default_name(m: &ExplicitMdp, s: StateId) -> String {
    m.variables()
        .iter()
        .zip(m.valuation(s))
        .map(|(v, x)| format!("{v}={x}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn guard(m: &ExplicitMdp, s: StateId) -> String {
    m.variables()
        .iter()
        .zip(m.valuation(s))
        .map(|(v, x)| format!("{v}={x}"))
        .collect::<Vec<_>>()
        .join(" & ")
}

fn assignment(m: &ExplicitMdp, s: StateId) -> String {
    m.variables()
        .iter()
        .zip(m.valuation(s))
        .map(|(v, x)| format!("({v}'={x})"))
        .collect::<Vec<_>>()
        .join("&")
}
