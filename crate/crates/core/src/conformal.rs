//! Split-conformal calibration of classifier scores into prediction sets,
//! with coverage reports and the set-valued confusion counts.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::mdp::StateId;
use crate::stateset::StateSet;

/// Tolerance used when taking the ceiling of `(n + 1)(1 - α)`, so that a
/// product that is an integer up to rounding is not pushed to the next one.
const CEIL_TOLERANCE: f64 = 1e-9;

/// A classifier output together with the state it was produced for.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub true_state: StateId,
    pub scores: Vec<f64>,
}

impl ScoredSample {
    /// Scores must lie in `[0, 1]` and sum to 1 within `1e-6`.
    pub fn new(true_state: StateId, scores: Vec<f64>) -> Result<Self> {
        if true_state.0 >= scores.len() {
            return Err(Error::invalid(format!(
                "true state {true_state} outside a score vector of length {}",
                scores.len()
            )));
        }
        if scores.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("score outside [0, 1]"));
        }
        let total: f64 = scores.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("scores sum to {total}")));
        }
        Ok(ScoredSample { true_state, scores })
    }

    pub fn nonconformity(&self) -> f64 {
        1.0 - self.scores[self.true_state.0]
    }

    /// Index of the largest score, smallest index on ties.
    pub fn argmax(&self) -> StateId {
        argmax(&self.scores)
    }
}

fn argmax(scores: &[f64]) -> StateId {
    let mut best = 0;
    for (i, &p) in scores.iter().enumerate() {
        if p > scores[best] {
            best = i;
        }
    }
    StateId(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QHat {
    Value(f64),
    /// Too few calibration samples for the requested level; every
    /// prediction set is the whole state space.
    Saturated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformalModel {
    pub alpha: f64,
    pub q_hat: QHat,
    pub calibration_size: usize,
}

/// Calibrate at miscoverage `alpha` with nonconformity `1 - p_true`.
///
/// `q_hat` is the `k`-th smallest score with `k = ⌈(n+1)(1-α)⌉`.
pub fn calibrate(samples: &[ScoredSample], alpha: f64) -> Result<ConformalModel> {
    if samples.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = samples.len();
    let k = ((n as f64 + 1.0) * (1.0 - alpha) - CEIL_TOLERANCE).ceil() as usize;
    let q_hat = if k > n {
        QHat::Saturated
    } else {
        let mut scores: Vec<f64> = samples.iter().map(ScoredSample::nonconformity).collect();
        scores.sort_by(f64::total_cmp);
        QHat::Value(scores[k.max(1) - 1])
    };
    Ok(ConformalModel {
        alpha,
        q_hat,
        calibration_size: n,
    })
}

impl ConformalModel {
    /// States whose nonconformity `1 - p` is at most `q_hat`. An empty result
    /// is repaired to the argmax singleton.
    pub fn predict_set(&self, scores: &[f64]) -> StateSet {
        let QHat::Value(q) = self.q_hat else {
            return StateSet::full(scores.len());
        };
        let set: StateSet = scores
            .iter()
            .enumerate()
            .filter(|&(_, &p)| 1.0 - p <= q)
            .map(|(i, _)| StateId(i))
            .collect();
        if set.is_empty() {
            StateSet::singleton(argmax(scores))
        } else {
            set
        }
    }

    pub fn coverage(&self, test: &[ScoredSample]) -> CoverageReport {
        let mut covered = 0;
        let mut total_size = 0;
        let mut histogram = BTreeMap::new();
        for sample in test {
            let set = self.predict_set(&sample.scores);
            if set.contains(sample.true_state) {
                covered += 1;
            }
            total_size += set.len();
            *histogram.entry(set.len()).or_insert(0) += 1;
        }
        let n = test.len().max(1) as f64;
        CoverageReport {
            samples: test.len(),
            coverage: covered as f64 / n,
            mean_set_size: total_size as f64 / n,
            histogram,
        }
    }

    pub fn to_text(&self) -> String {
        let q = match self.q_hat {
            QHat::Value(q) => g17(q),
            QHat::Saturated => "saturated".to_string(),
        };
        format!(
            "alpha={}\nq_hat={q}\nn_cal={}\n",
            g17(self.alpha),
            self.calibration_size
        )
    }

    pub fn from_text(text: &str, origin: &str) -> Result<ConformalModel> {
        let (mut alpha, mut q_hat, mut n_cal) = (None, None, None);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::format(origin, i + 1, msg);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            match key.trim() {
                "alpha" => alpha = Some(value.parse::<f64>().map_err(|_| bad(format!("bad alpha `{value}`")))?),
                "q_hat" if value == "saturated" => q_hat = Some(QHat::Saturated),
                "q_hat" => {
                    q_hat = Some(QHat::Value(
                        value.parse().map_err(|_| bad(format!("bad q_hat `{value}`")))?,
                    ))
                }
                "n_cal" => {
                    n_cal = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| bad(format!("bad n_cal `{value}`")))?,
                    )
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let missing = |key: &str| Error::format(origin, 1, format!("missing `{key}`"));
        Ok(ConformalModel {
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            q_hat: q_hat.ok_or_else(|| missing("q_hat"))?,
            calibration_size: n_cal.ok_or_else(|| missing("n_cal"))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub samples: usize,
    pub coverage: f64,
    pub mean_set_size: f64,
    /// Set size → number of test samples.
    pub histogram: BTreeMap<usize, usize>,
}

impl CoverageReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "samples={}\ncoverage={}\nmean_set_size={}\n",
            self.samples,
            g17(self.coverage),
            g17(self.mean_set_size)
        );
        for (size, count) in &self.histogram {
            let _ = writeln!(out, "size_{size}={count}");
        }
        out
    }
}

/// Counts of realized prediction sets per actual state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SetConfusion {
    counts: BTreeMap<StateId, BTreeMap<StateSet, u64>>,
}

impl SetConfusion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, actual: StateId, set: StateSet, count: u64) {
        *self.counts.entry(actual).or_default().entry(set).or_insert(0) += count;
    }

    pub fn total(&self, actual: StateId) -> u64 {
        self.counts.get(&actual).map_or(0, |row| row.values().sum())
    }

    /// Realized sets for `actual` in set order.
    pub fn row(&self, actual: StateId) -> impl Iterator<Item = (&StateSet, u64)> {
        self.counts.get(&actual).into_iter().flatten().map(|(s, &c)| (s, c))
    }

    pub fn actual_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.counts.keys().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual_state,set_hex,count\n");
        for (actual, row) in &self.counts {
            for (set, count) in row {
                let _ = writeln!(out, "{actual},{},{count}", set.to_hex());
            }
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<SetConfusion> {
        let mut c = SetConfusion::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::format(origin, i + 1, msg);
            if !saw_header {
                if line != "actual_state,set_hex,count" {
                    return Err(bad("expected header `actual_state,set_hex,count`"));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [actual, hex, count] = fields.as_slice() else {
                return Err(bad("expected 3 fields"));
            };
            let actual = actual.parse().map_err(|_| bad("bad actual_state"))?;
            let set = StateSet::from_hex(hex).ok_or_else(|| bad("bad set_hex"))?;
            if set.is_empty() {
                return Err(bad("empty prediction set"));
            }
            let count = count.parse().map_err(|_| bad("bad count"))?;
            c.add(StateId(actual), set, count);
        }
        if !saw_header {
            return Err(Error::format(origin, 1, "missing header"));
        }
        Ok(c)
    }
}

/// Tally `(true state, prediction set)` over a test set.
pub fn build_set_confusion(cm: &ConformalModel, test: &[ScoredSample]) -> SetConfusion {
    let mut c = SetConfusion::new();
    for sample in test {
        c.add(sample.true_state, cm.predict_set(&sample.scores), 1);
    }
    c
}

/// Confusion of the unconformalized classifier: the argmax as a singleton.
pub fn point_confusion(test: &[ScoredSample]) -> SetConfusion {
    let mut c = SetConfusion::new();
    for sample in test {
        c.add(sample.true_state, StateSet::singleton(sample.argmax()), 1);
    }
    c
}

/// Samples CSV with header `true_state,p0,...,p{K-1}`.
pub fn write_samples(samples: &[ScoredSample]) -> String {
    let k = samples.first().map_or(0, |s| s.scores.len());
    let mut out = String::from("true_state");
    for i in 0..k {
        let _ = write!(out, ",p{i}");
    }
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{}", s.true_state);
        for &p in &s.scores {
            let _ = write!(out, ",{}", g17(p));
        }
        out.push('\n');
    }
    out
}

pub fn read_samples(text: &str, origin: &str) -> Result<Vec<ScoredSample>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let Some((hline, header)) = lines.next() else {
        return Err(Error::format(origin, 1, "missing header"));
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    let well_formed =
        cols.first() == Some(&"true_state") && cols[1..].iter().enumerate().all(|(i, c)| *c == format!("p{i}"));
    if !well_formed || cols.len() < 2 {
        return Err(Error::format(origin, hline + 1, "expected header `true_state,p0,...`"));
    }
    let k = cols.len() - 1;
    let mut out = Vec::new();
    for (i, line) in lines {
        let bad = |msg: String| Error::format(origin, i + 1, msg);
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != k + 1 {
            return Err(bad(format!("expected {} fields, got {}", k + 1, fields.len())));
        }
        let state: usize = fields[0].parse().map_err(|_| bad("bad true_state".into()))?;
        let scores = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad score `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(ScoredSample::new(StateId(state), scores).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(s: usize, scores: &[f64]) -> ScoredSample {
        ScoredSample::new(StateId(s), scores.to_vec()).unwrap()
    }

    /// Truth scores 0.9, 0.8, 0.7, 0.6.
    fn four() -> Vec<ScoredSample> {
        [0.9, 0.8, 0.7, 0.6].iter().map(|&p| sample(0, &[p, 1.0 - p])).collect()
    }

    #[test]
    fn order_statistic() {
        let cm = calibrate(&four(), 0.5).unwrap();
        let QHat::Value(q) = cm.q_hat else { panic!() };
        assert!((q - 0.3).abs() < 1e-12);
        assert_eq!(cm.calibration_size, 4);
    }

    #[test]
    fn too_few_samples_saturate() {
        let cm = calibrate(&four(), 0.05).unwrap();
        assert_eq!(cm.q_hat, QHat::Saturated);
        assert_eq!(cm.predict_set(&[0.5, 0.5]), StateSet::full(2));
        assert_eq!(cm.coverage(&four()).coverage, 1.0);
    }

    #[test]
    fn perfect_scores_give_zero() {
        let samples = vec![sample(0, &[1.0, 0.0]); 50];
        assert_eq!(calibrate(&samples, 0.1).unwrap().q_hat, QHat::Value(0.0));
        assert!(matches!(calibrate(&[], 0.1), Err(Error::EmptyCalibration)));
    }

    fn model(q: f64) -> ConformalModel {
        ConformalModel {
            alpha: 0.1,
            q_hat: QHat::Value(q),
            calibration_size: 100,
        }
    }

    #[test]
    fn prediction_sets() {
        assert_eq!(
            model(0.3).predict_set(&[0.8, 0.15, 0.05]),
            StateSet::singleton(StateId(0))
        );
        let uniform = vec![1.0 / 15.0; 15];
        assert_eq!(model(0.95).predict_set(&uniform), StateSet::full(15));
        // nothing passes, repaired to the argmax
        assert_eq!(model(0.1).predict_set(&[0.4, 0.6]), StateSet::singleton(StateId(1)));
    }

    #[test]
    fn calibration_sample_scores_are_inside_their_own_threshold() {
        let samples = four();
        let cm = calibrate(&samples, 0.5).unwrap();
        // 0.7 sits exactly on the threshold
        assert!(cm.predict_set(&samples[2].scores).contains(StateId(0)));
        assert!(!cm.predict_set(&[0.4, 0.6]).contains(StateId(0)));
    }

    #[test]
    fn zero_threshold_misses_imperfect_truths() {
        let test = vec![sample(1, &[0.6, 0.4]), sample(0, &[0.9, 0.1])];
        let r = model(0.0).coverage(&test);
        assert_eq!(r.coverage, 0.5);
        assert_eq!(r.histogram, BTreeMap::from([(1, 2)]));
    }

    #[test]
    fn confusion_counts() {
        let test = vec![sample(0, &[0.9, 0.1]), sample(0, &[0.5, 0.5]), sample(1, &[0.2, 0.8])];
        let c = build_set_confusion(&model(0.5), &test);
        assert_eq!(c.total(StateId(0)), 2);
        let row: Vec<_> = c.row(StateId(0)).map(|(s, n)| (s.to_hex(), n)).collect();
        assert_eq!(row, vec![("1".to_string(), 1), ("3".to_string(), 1)]);
        let csv = c.to_csv();
        assert_eq!(csv, "actual_state,set_hex,count\n0,1,1\n0,3,1\n1,2,1\n");
        assert_eq!(SetConfusion::from_csv(&csv, "t").unwrap(), c);
        let p = point_confusion(&test);
        assert_eq!(p.row(StateId(0)).count(), 1);
    }

    #[test]
    fn file_formats_round_trip() {
        let cm = calibrate(&four(), 0.5).unwrap();
        assert_eq!(ConformalModel::from_text(&cm.to_text(), "t").unwrap(), cm);
        let sat = calibrate(&four(), 0.05).unwrap();
        assert!(sat.to_text().contains("q_hat=saturated\n"));
        assert_eq!(ConformalModel::from_text(&sat.to_text(), "t").unwrap(), sat);
        let samples = four();
        assert_eq!(read_samples(&write_samples(&samples), "t").unwrap(), samples);
        assert!(read_samples("true_state,p1\n0,1\n", "t").is_err());
    }

    #[test]
    fn rejects_bad_scores() {
        assert!(ScoredSample::new(StateId(0), vec![0.5, 0.4]).is_err());
        assert!(ScoredSample::new(StateId(2), vec![0.5, 0.5]).is_err());
    }
}
