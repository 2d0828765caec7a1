use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::ingest::SignalRecord;

/// Per-signal min/max normalisation onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    /// Fits on a row-per-signal matrix.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, PreprocessError> {
        let mut min = Vec::with_capacity(rows.len());
        let mut max = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(PreprocessError::UnseenSignal(i));
            }
            min.push(row.iter().copied().fold(f64::INFINITY, f64::min));
            max.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok(Self { min, max })
    }

    /// Fits directly on decoded records carrying `m` signals.
    pub fn fit_records<'a, I>(records: I, m: usize) -> Result<Self, PreprocessError>
    where
        I: IntoIterator<Item = &'a SignalRecord>,
    {
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        for record in records {
            for &(i, v) in &record.values {
                if i >= m {
                    return Err(PreprocessError::SignalOutOfRange(i));
                }
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        if let Some(i) = min.iter().position(|v| v.is_infinite()) {
            return Err(PreprocessError::UnseenSignal(i));
        }
        Ok(Self { min, max })
    }

    pub fn m(&self) -> usize {
        self.min.len()
    }

    pub fn is_constant(&self, signal: usize) -> bool {
        self.min[signal] >= self.max[signal]
    }

    /// Maps a raw value of `signal` into `[0, 1]`, clamping out-of-range input.
    /// Constant signals map to 0.5.
    pub fn transform(&self, signal: usize, value: f64) -> f64 {
        if self.is_constant(signal) {
            return 0.5;
        }
        ((value - self.min[signal]) / (self.max[signal] - self.min[signal])).clamp(0.0, 1.0)
    }

    pub fn inverse(&self, signal: usize, scaled: f64) -> f64 {
        if self.is_constant(signal) {
            return self.min[signal];
        }
        self.min[signal] + scaled * (self.max[signal] - self.min[signal])
    }

    /// Scales every value of a record in place.
    pub fn apply(&self, record: &mut SignalRecord) {
        for (i, v) in record.values.iter_mut() {
            *v = self.transform(*i, *v);
        }
    }
}
