//! Three-tier percentile thresholds and the ensemble attack decision.
//!
//! For each autoencoder a per-signal loss threshold flags individual cells, a
//! per-signal time threshold flags signals with too many flagged cells, and the
//! fraction of flagged signals is that model's anomaly score. Scores are
//! averaged across models and compared with a single ensemble threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LossMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("need at least {needed} training samples, got {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("percentile {0} outside (0, 100)")]
    BadPercentile(f64),
    #[error("loss matrix is {found:?}, thresholds expect {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("no anomaly scores to combine")]
    EmptyScores,
    #[error("expected one loss matrix per model ({expected}), got {found}")]
    ModelCountMismatch { expected: usize, found: usize },
}

/// Minimum number of training windows accepted by every calibration step.
pub const MIN_CALIBRATION_SAMPLES: usize = 100;

/// Linear interpolation between the closest order statistics: the value at
/// rank `pct / 100 · (n − 1)` of the sorted sample. Reorders `values`.
pub fn percentile(values: &mut [f64], pct: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let n = values.len();
    let rank = (pct / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

fn check_pct(pct: f64) -> Result<(), DetectError> {
    if pct > 0.0 && pct < 100.0 {
        Ok(())
    } else {
        Err(DetectError::BadPercentile(pct))
    }
}

/// The three percentile hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    /// Per-signal loss percentile.
    pub p: f64,
    /// Per-signal violation-count percentile.
    pub q_pct: f64,
    /// Ensemble score percentile.
    pub r: f64,
}

impl Default for Percentiles {
    fn default() -> Self {
        Self { p: 95.0, q_pct: 99.0, r: 99.0 }
    }
}

/// Pooled per-row `p`-th percentile of training losses.
pub fn calibrate_loss_thresholds(training: &[LossMatrix], p: f64) -> Result<Vec<f64>, DetectError> {
    check_pct(p)?;
    if training.len() < MIN_CALIBRATION_SAMPLES {
        return Err(DetectError::InsufficientData { needed: MIN_CALIBRATION_SAMPLES, found: training.len() });
    }
    let (m, w) = (training[0].m, training[0].w);
    let mut row = Vec::with_capacity(training.len() * w);
    let mut thresholds = Vec::with_capacity(m);
    for i in 0..m {
        row.clear();
        for l in training {
            if (l.m, l.w) != (m, w) {
                return Err(DetectError::ShapeMismatch { expected: (m, w), found: (l.m, l.w) });
            }
            row.extend(l.row(i).iter().map(|&v| v as f64));
        }
        thresholds.push(percentile(&mut row, p));
    }
    Ok(thresholds)
}

/// Per-signal `q_pct`-th percentile of violation counts.
pub fn calibrate_time_thresholds(violations: &[Vec<u32>], q_pct: f64) -> Result<Vec<f64>, DetectError> {
    check_pct(q_pct)?;
    if violations.len() < MIN_CALIBRATION_SAMPLES {
        return Err(DetectError::InsufficientData { needed: MIN_CALIBRATION_SAMPLES, found: violations.len() });
    }
    let m = violations[0].len();
    let mut col = Vec::with_capacity(violations.len());
    Ok((0..m)
        .map(|i| {
            col.clear();
            col.extend(violations.iter().map(|v| v[i] as f64));
            percentile(&mut col, q_pct)
        })
        .collect())
}

/// `r`-th percentile of training ensemble scores.
pub fn calibrate_ensemble_threshold(scores: &[f64], r: f64) -> Result<f64, DetectError> {
    check_pct(r)?;
    if scores.len() < MIN_CALIBRATION_SAMPLES {
        return Err(DetectError::InsufficientData { needed: MIN_CALIBRATION_SAMPLES, found: scores.len() });
    }
    Ok(percentile(&mut scores.to_vec(), r))
}

/// Intermediate results of scoring one loss matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOne {
    /// Row-major cell flags: loss above the row's loss threshold.
    pub b: Vec<bool>,
    /// Flagged cells per row.
    pub v: Vec<u32>,
    /// Rows whose flagged-cell count exceeds the time threshold.
    pub s: Vec<bool>,
    /// Fraction of flagged rows.
    pub p: f64,
}

/// Flagged-cell count per row.
pub fn violations(l: &LossMatrix, r_loss: &[f64]) -> Result<Vec<u32>, DetectError> {
    if r_loss.len() != l.m {
        return Err(DetectError::ShapeMismatch { expected: (r_loss.len(), l.w), found: (l.m, l.w) });
    }
    Ok((0..l.m).map(|i| l.row(i).iter().filter(|&&x| x as f64 > r_loss[i]).count() as u32).collect())
}

/// Scores one loss matrix with strict comparisons throughout.
pub fn score_step1(l: &LossMatrix, r_loss: &[f64], r_time: &[f64]) -> Result<StepOne, DetectError> {
    if r_loss.len() != l.m || r_time.len() != l.m || l.grid.len() != l.m * l.w {
        return Err(DetectError::ShapeMismatch { expected: (r_loss.len(), l.w), found: (l.m, l.w) });
    }
    let b: Vec<bool> = l.grid.iter().enumerate().map(|(k, &x)| x as f64 > r_loss[k / l.w]).collect();
    let v: Vec<u32> = b.chunks(l.w).map(|row| row.iter().filter(|&&f| f).count() as u32).collect();
    let s: Vec<bool> = v.iter().zip(r_time).map(|(&count, &t)| count as f64 > t).collect();
    let p = s.iter().filter(|&&f| f).count() as f64 / l.m as f64;
    Ok(StepOne { b, v, s, p })
}

fn anomaly_score(l: &LossMatrix, r_loss: &[f64], r_time: &[f64]) -> Result<(f64, Vec<bool>), DetectError> {
    let v = violations(l, r_loss)?;
    if r_time.len() != l.m {
        return Err(DetectError::ShapeMismatch { expected: (r_time.len(), l.w), found: (l.m, l.w) });
    }
    let s: Vec<bool> = v.iter().zip(r_time).map(|(&count, &t)| count as f64 > t).collect();
    let p = s.iter().filter(|&&f| f).count() as f64 / l.m as f64;
    Ok((p, s))
}

/// Arithmetic mean of per-model scores.
pub fn ensemble(scores: &[f64]) -> Result<f64, DetectError> {
    if scores.is_empty() {
        return Err(DetectError::EmptyScores);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Attack iff the ensemble score strictly exceeds the threshold.
pub fn decide(p_ens: f64, r_signal: f64) -> bool {
    p_ens > r_signal
}

/// Calibrated thresholds for every model plus the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub m: usize,
    pub w: usize,
    pub periods: Vec<usize>,
    /// `r_loss[x][i]`: loss threshold of row `i` for model `x`.
    pub r_loss: Vec<Vec<f64>>,
    /// `r_time[x][i]`: violation-count threshold of row `i` for model `x`.
    pub r_time: Vec<Vec<f64>>,
    pub r_signal: f64,
    pub percentiles: Percentiles,
    /// Number of training windows used.
    pub windows: usize,
}

/// Per-window outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub origin_step: u64,
    pub per_ae_scores: Vec<f64>,
    pub ensemble_score: f64,
    /// Row-wise OR of the per-model signal flags.
    pub signal_flags: Vec<bool>,
    pub attack: bool,
}

/// Result of a full calibration, keeping the training-window scores around.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub thresholds: ThresholdSet,
    /// Per training window, per model score.
    pub per_ae_scores: Vec<Vec<f64>>,
    pub ensemble_scores: Vec<f64>,
}

/// Runs the staged calibration on aligned training losses:
/// `losses[x][k]` is window `k`'s loss matrix under model `x`.
///
/// Loss thresholds come first, then violation counts recomputed with them
/// feed the time thresholds, then the ensemble threshold.
pub fn calibrate(losses: &[Vec<LossMatrix>], periods: &[usize], pct: Percentiles) -> Result<Calibration, DetectError> {
    if losses.is_empty() {
        return Err(DetectError::EmptyScores);
    }
    if losses.len() != periods.len() {
        return Err(DetectError::ModelCountMismatch { expected: periods.len(), found: losses.len() });
    }
    let windows = losses[0].len();
    if let Some(bad) = losses.iter().find(|l| l.len() != windows) {
        return Err(DetectError::InsufficientData { needed: windows, found: bad.len() });
    }
    let (m, w) = losses[0].first().map(|l| (l.m, l.w)).unwrap_or((0, 0));
    let mut r_loss = Vec::with_capacity(losses.len());
    let mut r_time = Vec::with_capacity(losses.len());
    let mut per_ae_scores = vec![Vec::with_capacity(losses.len()); windows];
    for model_losses in losses {
        let rl = calibrate_loss_thresholds(model_losses, pct.p)?;
        let v: Vec<Vec<u32>> = model_losses.iter().map(|l| violations(l, &rl)).collect::<Result<_, _>>()?;
        let rt = calibrate_time_thresholds(&v, pct.q_pct)?;
        for (k, l) in model_losses.iter().enumerate() {
            per_ae_scores[k].push(anomaly_score(l, &rl, &rt)?.0);
        }
        r_loss.push(rl);
        r_time.push(rt);
    }
    let ensemble_scores: Vec<f64> = per_ae_scores.iter().map(|s| ensemble(s)).collect::<Result<_, _>>()?;
    let r_signal = calibrate_ensemble_threshold(&ensemble_scores, pct.r)?;
    Ok(Calibration {
        thresholds: ThresholdSet { m, w, periods: periods.to_vec(), r_loss, r_time, r_signal, percentiles: pct, windows },
        per_ae_scores,
        ensemble_scores,
    })
}

impl ThresholdSet {
    /// Scores one window given one loss matrix per model, in period order.
    pub fn score(&self, losses: &[&LossMatrix]) -> Result<Verdict, DetectError> {
        if losses.len() != self.r_loss.len() {
            return Err(DetectError::ModelCountMismatch { expected: self.r_loss.len(), found: losses.len() });
        }
        let mut per_ae_scores = Vec::with_capacity(losses.len());
        let mut signal_flags = vec![false; self.m];
        for (x, l) in losses.iter().enumerate() {
            if (l.m, l.w) != (self.m, self.w) {
                return Err(DetectError::ShapeMismatch { expected: (self.m, self.w), found: (l.m, l.w) });
            }
            let (p, s) = anomaly_score(l, &self.r_loss[x], &self.r_time[x])?;
            for (f, s) in signal_flags.iter_mut().zip(s) {
                *f |= s;
            }
            per_ae_scores.push(p);
        }
        let ensemble_score = ensemble(&per_ae_scores)?;
        Ok(Verdict {
            origin_step: losses[0].origin_step,
            attack: decide(ensemble_score, self.r_signal),
            per_ae_scores,
            ensemble_score,
            signal_flags,
        })
    }

    /// Same thresholds with a different ensemble cut.
    pub fn with_signal_threshold(&self, r_signal: f64) -> Self {
        Self { r_signal, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.periods.len();
        if self.r_loss.len() != n || self.r_time.len() != n {
            return Err("threshold arrays do not match the number of periods".into());
        }
        let rows_ok = self.r_loss.iter().chain(&self.r_time).all(|r| r.len() == self.m);
        if !rows_ok {
            return Err("threshold rows do not match m".into());
        }
        let finite = self.r_loss.iter().flatten().all(|v| v.is_finite() && *v >= 0.0)
            && self.r_time.iter().flatten().all(|v| (0.0..=self.w as f64).contains(v))
            && (0.0..=1.0).contains(&self.r_signal);
        if !finite {
            return Err("thresholds out of range".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(m: usize, w: usize, grid: Vec<f32>) -> LossMatrix {
        LossMatrix { m, w, grid, origin_step: 0, period: 1 }
    }

    /// Sort-and-interpolate oracle.
    fn sorted_percentile(values: &[f64], pct: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = pct / 100.0 * (v.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
    }

    #[test]
    fn percentile_examples() {
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        assert!((sorted_percentile(&grid, 95.0) - 0.9405).abs() < 1e-12);
        assert!((percentile(&mut grid.clone(), 95.0) - 0.9405).abs() < 1e-12);
        assert!((percentile(&mut [0.0, 0.0, 0.0, 1.0, 2.0], 99.0) - 1.96).abs() < 1e-12);
        assert_eq!(percentile(&mut [0.0, 0.0, 1.0 / 3.0], 50.0), 0.0);
    }

    #[test]
    fn percentile_matches_sorting_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.gen_range(1..60);
            let values: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) * 0.1).collect();
            let pct = rng.gen_range(0.5..99.5);
            assert_eq!(percentile(&mut values.clone(), pct), sorted_percentile(&values, pct));
        }
    }

    #[test]
    fn loss_thresholds_pool_rows() {
        // row 0 carries the 0.00..0.99 grid across 100 single-column matrices
        let training: Vec<LossMatrix> = (0..100).map(|k| matrix(2, 1, vec![k as f32 / 100.0, 0.0])).collect();
        let r = calibrate_loss_thresholds(&training, 95.0).unwrap();
        assert!((r[0] - 0.9405).abs() < 1e-6);
        assert_eq!(r[1], 0.0);
        assert_eq!(
            calibrate_loss_thresholds(&training[..99], 95.0),
            Err(DetectError::InsufficientData { needed: 100, found: 99 })
        );
        assert_eq!(calibrate_loss_thresholds(&training, 100.0), Err(DetectError::BadPercentile(100.0)));
    }

    #[test]
    fn time_thresholds() {
        let zeros = vec![vec![0u32; 3]; 100];
        assert_eq!(calibrate_time_thresholds(&zeros, 99.0).unwrap(), vec![0.0; 3]);
        let mut v: Vec<Vec<u32>> = vec![vec![0]; 100];
        v[99] = vec![50];
        // rank 98.01 between 0 and 50
        assert!((calibrate_time_thresholds(&v, 99.0).unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn step_one_quiescent() {
        let l = matrix(2, 3, vec![0.0; 6]);
        let out = score_step1(&l, &[0.1, 0.1], &[1.0, 1.0]).unwrap();
        assert!(out.b.iter().all(|&b| !b));
        assert_eq!(out.v, vec![0, 0]);
        assert_eq!(out.s, vec![false, false]);
        assert_eq!(out.p, 0.0);
    }

    #[test]
    fn step_one_worked_example() {
        let l = matrix(2, 3, vec![0.1, 0.9, 0.9, 0.1, 0.1, 0.1]);
        let out = score_step1(&l, &[0.5, 0.5], &[1.0, 1.0]).unwrap();
        assert_eq!(out.v, vec![2, 0]);
        assert_eq!(out.s, vec![true, false]);
        assert_eq!(out.p, 0.5);
    }

    #[test]
    fn step_one_saturates() {
        let l = matrix(3, 4, vec![0.9; 12]);
        let out = score_step1(&l, &[0.5; 3], &[3.5, 0.0, 2.0]).unwrap();
        assert_eq!(out.p, 1.0);
        assert!(matches!(score_step1(&l, &[0.5; 2], &[0.0; 3]), Err(DetectError::ShapeMismatch { .. })));
    }

    #[test]
    fn strict_comparisons() {
        let l = matrix(1, 2, vec![0.5, 0.5]);
        // loss equal to threshold is not a violation
        assert_eq!(score_step1(&l, &[0.5], &[0.0]).unwrap().v, vec![0]);
        // count equal to threshold does not flag
        assert!(!score_step1(&l, &[0.1], &[2.0]).unwrap().s[0]);
        assert!(!decide(0.25, 0.25));
        assert!(decide(0.25 + 1e-12, 0.25));
    }

    #[test]
    fn ensemble_mean() {
        assert!((ensemble(&[0.2, 0.4, 0.6]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(ensemble(&[0.3]).unwrap(), 0.3);
        assert_eq!(ensemble(&[1.0; 3]).unwrap(), 1.0);
        assert_eq!(ensemble(&[]), Err(DetectError::EmptyScores));
    }

    #[test]
    fn ensemble_threshold() {
        assert_eq!(calibrate_ensemble_threshold(&[0.0; 100], 99.0).unwrap(), 0.0);
        assert!(calibrate_ensemble_threshold(&[0.0; 10], 99.0).is_err());
    }

    #[test]
    fn calibration_orders_stages_and_scores() {
        let windows: Vec<LossMatrix> =
            (0..200).map(|k| matrix(2, 4, (0..8).map(|i| ((k * 7 + i * 3) % 50) as f32 / 50.0).collect())).collect();
        let cal = calibrate(&[windows.clone(), windows.clone()], &[1, 5], Percentiles::default()).unwrap();
        let t = &cal.thresholds;
        t.validate().unwrap();
        assert_eq!(t.r_loss.len(), 2);
        assert_eq!(t.windows, 200);
        let verdict = t.score(&[&windows[0], &windows[0]]).unwrap();
        assert_eq!(verdict.ensemble_score, cal.ensemble_scores[0]);
        assert_eq!(verdict.attack, cal.ensemble_scores[0] > t.r_signal);
        assert!(matches!(t.score(&[&windows[0]]), Err(DetectError::ModelCountMismatch { .. })));
    }
}
