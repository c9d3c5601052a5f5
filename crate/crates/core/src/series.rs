//! Irregularly observed multichannel samples.

use crate::error::{Error, Result};

/// One sample: timestamps in `[0, 1]`, a `len × channels` value matrix and a
/// matching observation mask (`true` = observed).
///
/// Values under a `false` mask carry no information and are ignored by every
/// consumer.
#[derive(Clone, Debug, PartialEq)]
pub struct IrregularSeries {
    id: String,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

impl IrregularSeries {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> Result<Self> {
        let id = id.into();
        let bad = |reason: String| Error::InvalidSeries { id: id.clone(), reason };
        if times.is_empty() {
            return Err(bad("no timestamps".into()));
        }
        if values.len() != times.len() || mask.len() != times.len() {
            return Err(bad(format!(
                "{} times but {} value rows and {} mask rows",
                times.len(),
                values.len(),
                mask.len()
            )));
        }
        let channels = values[0].len();
        if channels == 0 {
            return Err(bad("zero channels".into()));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(bad(format!("times not strictly increasing at {} -> {}", w[0], w[1])));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(bad("non-finite timestamp".into()));
        }
        for (i, (row, mrow)) in values.iter().zip(&mask).enumerate() {
            if row.len() != channels || mrow.len() != channels {
                return Err(bad(format!("row {i} has inconsistent channel count")));
            }
            if row.iter().zip(mrow).any(|(v, &m)| m && !v.is_finite()) {
                return Err(bad(format!("row {i} has a non-finite observed value")));
            }
        }
        Ok(Self {
            id,
            times,
            values,
            mask,
        })
    }

    pub fn fully_observed(id: impl Into<String>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let mask = values.iter().map(|r| vec![true; r.len()]).collect();
        Self::new(id, times, values, mask)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_observed(&self, step: usize, channel: usize) -> bool {
        self.mask[step][channel]
    }

    /// Observed `(time, value)` pairs of one channel, in time order.
    pub fn observed(&self, channel: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.values)
            .zip(&self.mask)
            .filter(move |(_, m)| m[channel])
            .map(move |((&t, v), _)| (t, v[channel]))
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }

    pub fn with_mask(&self, mask: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(self.id.clone(), self.times.clone(), self.values.clone(), mask)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Row-major flattening of the value matrix.
    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}
