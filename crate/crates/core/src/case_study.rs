//! The taxiing case study: a 15-state perfect-perception model of an agent
//! tracking a centreline, and a matching synthetic perception profile.
//!
//! Cross-track error `cte` has five buckets and heading error `he` three.
//! Bucket 0 is centred in both; `cte` 1, 2 are increasingly far left and
//! 3, 4 increasingly far right; `he` 1 points left and 2 right. Each step the
//! agent moves forward: the executed steering (left, straight, right)
//! changes the heading by one bucket, and a non-zero new heading moves the
//! agent one cross-track bucket that way with probability `shift`. The
//! executed steering equals the command except with probability `eps` for
//! each of the two other options. Leaving the heading or position range
//! crashes the agent.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::Result;
use crate::mdp::StateId;
use crate::sim::PerceptionProfile;

/// Steering noise: chance that each of the two uncommanded options happens.
pub const TAXI_NOISE: f64 = 0.04;

/// Chance that a step with a non-zero heading moves the agent into the next
/// cross-track bucket.
pub const TAXI_SHIFT: f64 = 0.2;

/// Score concentration of the reference perception profile.
pub const TAXI_SHARPNESS: f64 = 3.0;

/// Label of the crashed states.
pub const TAXI_UNSAFE_LABEL: &str = "fail";

/// Non-crashed states; their ids are `0..TAXI_STATES` (`cte * 3 + he`).
pub const TAXI_STATES: usize = 15;

pub const TAXI_ACTIONS: [&str; 3] = ["straight", "left", "right"];

const MAX_POS: i64 = 2;

/// Signed position (negative is left) to its bucket.
fn cte_bucket(p: i64) -> i64 {
    match p {
        0 => 0,
        p if p < 0 => -p,
        p => MAX_POS + p,
    }
}

fn cte_pos(bucket: i64) -> i64 {
    match bucket {
        0 => 0,
        b if b <= MAX_POS => -b,
        b => b - MAX_POS,
    }
}

/// Signed heading (negative is left) to its bucket.
fn he_bucket(h: i64) -> i64 {
    match h {
        0 => 0,
        -1 => 1,
        _ => 2,
    }
}

fn he_dir(bucket: i64) -> i64 {
    [0, -1, 1][bucket as usize]
}

/// Steering change of each action, in [`TAXI_ACTIONS`] order.
const STEER: [i64; 3] = [0, -1, 1];

/// The model text with steering noise `eps` and lateral shift chance
/// `shift`.
pub fn taxi_model_text(eps: f64, shift: f64) -> String {
    let mut out = String::new();
    out.push_str("// Centreline tracking on a taxiway.\n");
    out.push_str("// cte: 0 centred, 1..2 left, 3..4 right; he: 0 straight, 1 left, 2 right.\n");
    out.push_str("mdp\n\n");
    let _ = writeln!(out, "const double eps = {eps};");
    let _ = writeln!(out, "const double shift = {shift};\n");
    out.push_str("module taxi\n");
    out.push_str("  crashed : [0..1] init 0;\n");
    out.push_str("  cte : [0..4] init 0;\n");
    out.push_str("  he : [0..2] init 0;\n");
    let crash = "(crashed'=1)&(cte'=0)&(he'=0)";
    for cte in 0..5 {
        for he in 0..3 {
            out.push('\n');
            let (p, h) = (cte_pos(cte), he_dir(he));
            for (action, &steer) in TAXI_ACTIONS.iter().zip(&STEER) {
                let mut branches = Vec::new();
                for executed in [-1, 0, 1] {
                    let prob = if executed == steer { "(1-2*eps)" } else { "eps" };
                    let h2 = h + executed;
                    if h2.abs() > 1 {
                        branches.push(format!("{}:{crash}", prob.trim_matches(['(', ')'])));
                        continue;
                    }
                    let stay = format!("(cte'={cte})&(he'={})", he_bucket(h2));
                    if h2 == 0 {
                        branches.push(format!("{}:{stay}", prob.trim_matches(['(', ')'])));
                        continue;
                    }
                    let p2 = p + h2;
                    let moved = if p2.abs() > MAX_POS {
                        crash.to_string()
                    } else {
                        format!("(cte'={})&(he'={})", cte_bucket(p2), he_bucket(h2))
                    };
                    branches.push(format!("{prob}*shift:{moved}"));
                    branches.push(format!("{prob}*(1-shift):{stay}"));
                }
                let _ = writeln!(
                    out,
                    "  [{action}] crashed=0 & cte={cte} & he={he} -> {};",
                    branches.join(" + ")
                );
            }
        }
    }
    out.push_str("\n  [straight] crashed=1 -> true;\n");
    out.push_str("endmodule\n\n");
    out.push_str("label \"fail\" = crashed=1;\n");
    out
}

/// Perception over the 15 states. Mistakes go to states one bucket away in
/// either coordinate.
pub fn taxi_profile(accuracy: f64, sharpness: f64) -> Result<PerceptionProfile> {
    let mut bias = BTreeMap::new();
    for cte in 0..5i64 {
        for he in 0..3i64 {
            let (p, h) = (cte_pos(cte), he_dir(he));
            let mut near = Vec::new();
            for (dp, dh) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (p2, h2) = (p + dp, h + dh);
                if p2.abs() <= MAX_POS && h2.abs() <= 1 {
                    near.push(StateId((cte_bucket(p2) * 3 + he_bucket(h2)) as usize));
                }
            }
            near.sort();
            bias.insert(StateId((cte * 3 + he) as usize), near);
        }
    }
    PerceptionProfile::new(accuracy, sharpness, TAXI_STATES)?.with_bias(bias)
}
