use std::path::Path;

use anyhow::{bail, Context, Result};
use diffmn_core::autoencoder::AeConfig;
use diffmn_core::diffusion::DiffusionConfig;
use diffmn_core::metrics::MetricsConfig;
use diffmn_core::ncde::NcdeConfig;
use diffmn_core::synthgen::{
    drop_dataset, gen_cubic, gen_mixed, gen_signals, gen_sines, Cubic, CubicSpec, DropMode, SignalKind, SignalSpec,
    SineSpec,
};
use diffmn_core::IrregularSeries;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Sines,
    Cubic,
    Sawtooth,
    Piecewise,
    SineMix,
    Mixed,
}

impl DatasetKind {
    fn default_channels(self) -> usize {
        match self {
            DatasetKind::Sines => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n: usize,
    pub length: usize,
    /// Kind default when absent: 2 for sines, 1 otherwise.
    pub channels: Option<usize>,
    pub drop: f64,
    pub drop_mode: DropMode,
    /// Extra fully observed samples kept out of training for membership
    /// inference; defaults to `n`.
    pub holdout: Option<usize>,
    pub sine: SineSpec,
    pub signal: SignalSpec,
    pub cubic: CubicSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Sines,
            n: 200,
            length: 24,
            channels: None,
            drop: 0.3,
            drop_mode: DropMode::Timestep,
            holdout: None,
            sine: SineSpec::default(),
            signal: SignalSpec::default(),
            cubic: CubicSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GenerateMode {
    #[default]
    Regular,
    Refined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n: usize,
    pub mode: GenerateMode,
    pub refine_factor: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: 200,
            mode: GenerateMode::Regular,
            refine_factor: 2,
        }
    }
}

impl GenerateConfig {
    /// Factor actually applied to the grid.
    pub fn factor(&self) -> usize {
        match self.mode {
            GenerateMode::Regular => 1,
            GenerateMode::Refined => self.refine_factor,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub autoencoder: AeConfig,
    pub ncde: NcdeConfig,
    pub diffusion: DiffusionConfig,
    pub metrics: MetricsConfig,
    pub generate: GenerateConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str::<Self>(text)?.resolved()
    }

    /// Fills kind-dependent defaults and copies the shared dataset fields
    /// into the per-kind specs.
    pub fn resolved(mut self) -> Result<Self> {
        let d = &mut self.dataset;
        let channels = *d.channels.get_or_insert(d.kind.default_channels());
        if d.kind == DatasetKind::Cubic && channels != 1 {
            bail!("cubic datasets have exactly one channel, got {channels}");
        }
        if d.n == 0 || d.length < 4 || channels == 0 {
            bail!("dataset needs n > 0, length ≥ 4 and at least one channel");
        }
        d.holdout.get_or_insert(d.n);
        d.sine.channels = channels;
        d.sine.length = d.length;
        d.signal.channels = channels;
        d.signal.length = d.length;
        d.cubic.samples = d.n;
        d.cubic.grid = d.length;
        if self.generate.refine_factor == 0 {
            bail!("refine_factor must be at least 1");
        }
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.dataset.channels.unwrap_or(self.dataset.kind.default_channels())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical (key-sorted) JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

/// Training samples (complete and masked), held-out samples, and cubic
/// coefficients of the training samples when the kind has them.
pub struct Synthesized {
    pub complete: Vec<IrregularSeries>,
    pub observed: Vec<IrregularSeries>,
    pub holdout: Vec<IrregularSeries>,
    pub truth: Option<Vec<Cubic>>,
}

pub fn synthesize(cfg: &PipelineConfig) -> Result<Synthesized> {
    let d = &cfg.dataset;
    let n = d.n;
    let total = n + d.holdout.unwrap_or(n);
    let seed = cfg.seed;
    let (mut complete, truth) = match d.kind {
        DatasetKind::Sines => (gen_sines(&d.sine, total, seed)?, None),
        DatasetKind::Cubic => {
            let spec = CubicSpec {
                samples: total,
                ..d.cubic.clone()
            };
            let (s, mut t) = gen_cubic(&spec, seed)?;
            t.truncate(n);
            (s, Some(t))
        }
        DatasetKind::Sawtooth => (gen_signals(SignalKind::Sawtooth, &d.signal, total, seed)?, None),
        DatasetKind::Piecewise => (gen_signals(SignalKind::Piecewise, &d.signal, total, seed)?, None),
        DatasetKind::SineMix => (gen_signals(SignalKind::SineMix, &d.signal, total, seed)?, None),
        DatasetKind::Mixed => (gen_mixed(&d.signal, total, seed)?, None),
    };
    let holdout = complete.split_off(n);
    let observed = drop_dataset(&complete, d.drop, d.drop_mode, seed)?;
    Ok(Synthesized {
        complete,
        observed,
        holdout,
        truth,
    })
}
