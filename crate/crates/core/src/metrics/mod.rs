//! Evaluation metrics for generated series: discriminative score, marginal
//! and pooled histogram distances, membership inference, downstream
//! forecasting and cubic-coefficient recovery.

mod cubic;
mod distribution;
mod privacy;
mod sequence;

pub use cubic::{cubic_recovery, refit_cubic, wasserstein1, CubicRecovery};
pub use distribution::{histogram, kl_divergence, mdd};
pub use privacy::mir;
pub use sequence::{discriminative_score, downstream_forecast, ForecastScore, SequenceConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::IrregularSeries;
use crate::spline::fit_control_path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub bins: usize,
    pub smoothing: f64,
    /// Share of samples used for training the post-hoc models.
    pub train_fraction: f64,
    pub classifier: SequenceConfig,
    pub forecaster: SequenceConfig,
    /// Reference draws per coefficient for the recovery distance.
    pub reference_draws: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            smoothing: 1e-6,
            train_fraction: 0.8,
            classifier: SequenceConfig {
                hidden: 16,
                epochs: 30,
                lr: 1e-2,
                batch: 64,
            },
            forecaster: SequenceConfig {
                hidden: 16,
                epochs: 60,
                lr: 1e-2,
                batch: 32,
            },
            reference_draws: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Ds,
    Mdd,
    Kl,
    Mir,
    Forecast,
    Cubic,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Ds,
        Metric::Mdd,
        Metric::Kl,
        Metric::Mir,
        Metric::Forecast,
        Metric::Cubic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ds => "ds",
            Metric::Mdd => "mdd",
            Metric::Kl => "kl",
            Metric::Mir => "mir",
            Metric::Forecast => "forecast",
            Metric::Cubic => "cubic",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

/// Named metric values plus everything needed to reproduce them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub values: BTreeMap<String, f64>,
    pub config: MetricsConfig,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
}

impl MetricsReport {
    pub fn new(config: MetricsConfig, seed: u64, config_hash: String, dataset_hash: String) -> Self {
        Self {
            values: BTreeMap::new(),
            config,
            seed,
            config_hash,
            dataset_hash,
        }
    }

    /// Records a value, refusing anything non-finite.
    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::Stage {
                stage: "evaluate".into(),
                reason: format!("metric `{name}` is {value}"),
            });
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// `metric,value,seed,config_hash,dataset_hash` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,seed,config_hash,dataset_hash\n");
        for (k, v) in &self.values {
            out.push_str(&format!(
                "{k},{v:?},{},{},{}\n",
                self.seed, self.config_hash, self.dataset_hash
            ));
        }
        out
    }
}

/// Row-major `len × M` values with unobserved entries filled from the
/// sample's control path.
pub fn dense_values(series: &IrregularSeries) -> Result<Vec<f64>> {
    if series.mask().iter().flatten().all(|&m| m) {
        return Ok(series.flat_values());
    }
    let path = fit_control_path::<f64>(series)?;
    let mut out = Vec::with_capacity(series.len() * series.channels());
    for (i, &t) in series.times().iter().enumerate() {
        for c in 0..series.channels() {
            out.push(if series.is_observed(i, c) {
                series.values()[i][c]
            } else {
                path.channel(c).eval(t)
            });
        }
    }
    Ok(out)
}

/// Common `(len, channels)` of two non-empty sets.
pub(crate) fn common_shape(a: &[IrregularSeries], b: &[IrregularSeries]) -> Result<(usize, usize)> {
    let first = a
        .first()
        .or(b.first())
        .ok_or_else(|| Error::contract("metrics need non-empty datasets"))?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("metrics need non-empty datasets"));
    }
    let shape = (first.len(), first.channels());
    if a.iter().chain(b).any(|s| (s.len(), s.channels()) != shape) {
        return Err(Error::contract("all samples must share length and channel count"));
    }
    Ok(shape)
}
