//! The coverage-level by shield-threshold grid: calibrate at each α′, compile
//! every variant at each λ′, and check the properties, plus the
//! unconformalized baseline at each λ′.

use std::time::Instant;

use rayon::prelude::*;

use crate::abstraction::{compile_baseline, compile_with, normalize_confusion, CompileOptions, EmptyPolicy, Variant};
use crate::checker::{check_properties, PropertyResult};
use crate::conformal::{build_set_confusion, calibrate, point_confusion, ScoredSample};
use crate::error::Result;
use crate::fmt::round12;
use crate::mdp::ExplicitMdp;
use crate::shield::SigmaTable;

pub const ALPHA_PRIMES: [f64; 3] = [0.95, 0.99, 0.995];
pub const LAMBDA_PRIMES: [f64; 3] = [0.7, 0.8, 0.9];

/// `1 - x` rounded to 12 decimals, so `0.95` maps to `0.05` exactly as typed.
pub fn complement(x: f64) -> f64 {
    round12(1.0 - x)
}

#[derive(Clone, Debug)]
pub struct GridCell {
    /// `None` for the baseline.
    pub alpha_prime: Option<f64>,
    pub lambda_prime: f64,
    /// `None` for the baseline, which always uses the random controller.
    pub variant: Option<Variant>,
    pub abstract_states: usize,
    pub results: Vec<PropertyResult>,
    /// Time spent compiling and checking this cell.
    pub wall_ms: u64,
}

impl GridCell {
    pub fn label(&self) -> &'static str {
        self.variant.map_or("baseline", Variant::as_str)
    }

    /// The result at horizon `h`, if it was checked.
    pub fn at(&self, h: usize) -> Option<&PropertyResult> {
        self.results.iter().find(|r| r.horizon == h)
    }
}

#[derive(Clone, Debug)]
pub struct GridSpec<'a> {
    pub alpha_primes: &'a [f64],
    pub lambda_primes: &'a [f64],
    pub variants: &'a [Variant],
    pub horizons: &'a [usize],
    pub empty_policy: EmptyPolicy,
}

/// Conformal cells in `(α′, λ′, variant)` order, then one baseline cell per
/// λ′. The confusion data comes from `test`, the quantiles from `calibration`.
pub fn run_grid(
    perf: &ExplicitMdp,
    st: &SigmaTable,
    calibration: &[ScoredSample],
    test: &[ScoredSample],
    spec: &GridSpec<'_>,
) -> Result<Vec<GridCell>> {
    let nus = spec
        .alpha_primes
        .iter()
        .map(|&ap| {
            let cm = calibrate(calibration, complement(ap))?;
            Ok(normalize_confusion(&build_set_confusion(&cm, test), spec.empty_policy))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (i, &ap) in spec.alpha_primes.iter().enumerate() {
        for &lp in spec.lambda_primes {
            for &v in spec.variants {
                jobs.push((Some((i, ap)), lp, v));
            }
        }
    }
    let point = normalize_confusion(&point_confusion(test), EmptyPolicy::Point);
    for &lp in spec.lambda_primes {
        jobs.push((None, lp, Variant::Random));
    }
    jobs.into_par_iter()
        .map(|(conformal, lp, v)| {
            let start = Instant::now();
            let lambda = complement(lp);
            let model = match conformal {
                Some((i, ap)) => {
                    let opts = CompileOptions {
                        alpha: Some(complement(ap)),
                        ..CompileOptions::new(v)
                    };
                    compile_with(perf, st, lambda, &nus[i], opts)?
                }
                None => compile_baseline(perf, st, lambda, &point, v)?,
            };
            let results = check_properties(&model.mdp, spec.horizons)?;
            Ok(GridCell {
                alpha_prime: conformal.map(|(_, ap)| ap),
                lambda_prime: lp,
                variant: conformal.map(|_| v),
                abstract_states: model.mdp.state_count(),
                results,
                wall_ms: start.elapsed().as_millis() as u64,
            })
        })
        .collect()
}

/// Violations of the expected trends at horizon `h` among the cells of the
/// given variants: stuck non-decreasing in λ′ and in α′, fail non-increasing
/// in α′, and a baseline that never gets stuck at any checked horizon.
pub fn trend_violations(cells: &[GridCell], variants: &[Variant], h: usize) -> Vec<String> {
    const TOL: f64 = 1e-12;
    let mut out = Vec::new();
    let find = |ap: f64, lp: f64, v: Variant| {
        cells
            .iter()
            .find(|c| c.alpha_prime == Some(ap) && c.lambda_prime == lp && c.variant == Some(v))
            .and_then(|c| c.at(h))
    };
    let mut aps: Vec<f64> = cells.iter().filter_map(|c| c.alpha_prime).collect();
    let mut lps: Vec<f64> = cells.iter().map(|c| c.lambda_prime).collect();
    for xs in [&mut aps, &mut lps] {
        xs.sort_by(f64::total_cmp);
        xs.dedup();
    }
    for &v in variants {
        for &ap in &aps {
            for w in lps.windows(2) {
                if let (Some(a), Some(b)) = (find(ap, w[0], v), find(ap, w[1], v)) {
                    if b.p_stuck < a.p_stuck - TOL {
                        out.push(format!(
                            "{v}: stuck falls from lambda'={} to {} at alpha'={ap}",
                            w[0], w[1]
                        ));
                    }
                }
            }
        }
        for &lp in &lps {
            for w in aps.windows(2) {
                if let (Some(a), Some(b)) = (find(w[0], lp, v), find(w[1], lp, v)) {
                    if b.p_stuck < a.p_stuck - TOL {
                        out.push(format!(
                            "{v}: stuck falls from alpha'={} to {} at lambda'={lp}",
                            w[0], w[1]
                        ));
                    }
                    if b.p_fail > a.p_fail + TOL {
                        out.push(format!(
                            "{v}: fail rises from alpha'={} to {} at lambda'={lp}",
                            w[0], w[1]
                        ));
                    }
                }
            }
        }
    }
    for c in cells.iter().filter(|c| c.variant.is_none()) {
        if let Some(r) = c.results.iter().find(|r| r.p_stuck != 0.0) {
            out.push(format!(
                "baseline gets stuck at lambda'={} horizon {}",
                c.lambda_prime, r.horizon
            ));
        }
    }
    out
}
