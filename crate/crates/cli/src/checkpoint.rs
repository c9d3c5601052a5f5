use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use diffmn_core::autoencoder::ChannelAutoencoder;
use diffmn_core::diffusion::{Denoiser, DiffusionModel, JointNormalizer, NoiseSchedule};
use diffmn_core::ncde::{Codec, MoeNcde};
use diffmn_nn::nn::{Dense, Mlp, Parameterized};
use diffmn_nn::tensor::Tensor;
use diffmn_nn::Activation;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned named sections of flat tensors. Sections present depend on how
/// far training got.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Last completed stage.
    pub stage: String,
    /// Layer activations per network, comma separated.
    pub activations: BTreeMap<String, String>,
    pub sections: BTreeMap<String, Vec<TensorRecord>>,
}

fn act_name(a: Activation) -> &'static str {
    match a {
        Activation::Identity => "identity",
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
    }
}

fn parse_act(s: &str) -> Result<Activation> {
    Ok(match s {
        "identity" => Activation::Identity,
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        "sigmoid" => Activation::Sigmoid,
        other => bail!("unknown activation `{other}`"),
    })
}

fn records(prefix: &str, p: &impl Parameterized<f64>) -> Vec<TensorRecord> {
    p.parameters()
        .into_iter()
        .map(|(name, t)| TensorRecord {
            name: format!("{prefix}{name}"),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

fn scalar(name: &str, v: f64) -> TensorRecord {
    vector(name, vec![v])
}

fn vector(name: &str, data: Vec<f64>) -> TensorRecord {
    TensorRecord {
        name: name.into(),
        shape: vec![data.len()],
        data,
    }
}

impl Checkpoint {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.into(),
            seed,
            stage: "none".into(),
            activations: BTreeMap::new(),
            sections: BTreeMap::new(),
        }
    }

    fn put_mlp(&mut self, section: &str, prefix: &str, mlp: &Mlp<f64>) {
        let acts: Vec<&str> = mlp.layers().iter().map(|l| act_name(l.activation)).collect();
        self.activations.insert(format!("{section}.{prefix}"), acts.join(","));
        self.sections
            .entry(section.into())
            .or_default()
            .extend(records(&format!("{prefix}."), mlp));
    }

    fn get_mlp(&self, section: &str, prefix: &str) -> Result<Mlp<f64>> {
        let key = format!("{section}.{prefix}");
        let acts = self
            .activations
            .get(&key)
            .with_context(|| format!("checkpoint has no activations for `{key}`"))?;
        let recs = self.section(section)?;
        let find = |name: String| -> Result<Tensor<f64>> {
            let r = recs
                .iter()
                .find(|r| r.name == name)
                .with_context(|| format!("checkpoint section `{section}` lacks `{name}`"))?;
            Ok(Tensor::new(r.shape.clone(), r.data.clone())?)
        };
        let layers = acts
            .split(',')
            .enumerate()
            .map(|(i, a)| {
                let w = find(format!("{prefix}.layer{i}.weight"))?;
                let b = find(format!("{prefix}.layer{i}.bias"))?;
                Ok(Dense::new(w, b, parse_act(a)?)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp::new(layers)?)
    }

    fn section(&self, name: &str) -> Result<&[TensorRecord]> {
        self.sections
            .get(name)
            .map(Vec::as_slice)
            .with_context(|| format!("checkpoint has no `{name}` section (stage `{}`)", self.stage))
    }

    fn values(&self, section: &str, name: &str) -> Result<&[f64]> {
        self.section(section)?
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.data.as_slice())
            .with_context(|| format!("checkpoint section `{section}` lacks `{name}`"))
    }

    pub fn has(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn set_autoencoder(&mut self, ae: &ChannelAutoencoder<f64>) {
        self.sections.remove("channel_ae");
        self.put_mlp("channel_ae", "encoder", ae.encoder());
        self.put_mlp("channel_ae", "decoder", ae.decoder());
        self.stage = "ae".into();
    }

    pub fn autoencoder(&self) -> Result<ChannelAutoencoder<f64>> {
        let enc = self.get_mlp("channel_ae", "encoder")?;
        let dec = self.get_mlp("channel_ae", "decoder")?;
        Ok(ChannelAutoencoder::from_parts(enc, dec, true)?)
    }

    pub fn set_ncde(&mut self, model: &MoeNcde<f64>, grid: &[f64]) {
        for s in ["experts", "router", "coupled_codec", "solver_config"] {
            self.sections.remove(s);
        }
        self.activations
            .retain(|k, _| k.starts_with("channel_ae.") || k.starts_with("denoiser."));
        for (i, e) in model.experts().iter().enumerate() {
            self.put_mlp("experts", &format!("expert{i}"), e);
        }
        self.put_mlp("router", "router", model.router());
        if let Codec::Joint { init, readout } = model.codec() {
            self.put_mlp("coupled_codec", "init", init);
            self.put_mlp("coupled_codec", "readout", readout);
        }
        self.sections.insert(
            "solver_config".into(),
            vec![
                scalar("substeps", model.substeps() as f64),
                scalar("grid_len", model.grid_len() as f64),
                scalar("experts", model.num_experts() as f64),
                vector("grid", grid.to_vec()),
            ],
        );
        self.stage = "ncde".into();
    }

    pub fn ncde(&self) -> Result<MoeNcde<f64>> {
        let count = self.values("solver_config", "experts")?[0] as usize;
        let substeps = self.values("solver_config", "substeps")?[0] as usize;
        let grid_len = self.values("solver_config", "grid_len")?[0] as usize;
        let experts = (0..count)
            .map(|i| self.get_mlp("experts", &format!("expert{i}")))
            .collect::<Result<Vec<_>>>()?;
        let router = self.get_mlp("router", "router")?;
        let codec = if self.has("coupled_codec") {
            Codec::Joint {
                init: self.get_mlp("coupled_codec", "init")?,
                readout: self.get_mlp("coupled_codec", "readout")?,
            }
        } else {
            Codec::Frozen(self.autoencoder()?)
        };
        Ok(MoeNcde::from_parts(experts, router, codec, substeps, grid_len)?)
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        Ok(self.values("solver_config", "grid")?.to_vec())
    }

    pub fn set_diffusion(&mut self, model: &DiffusionModel) {
        self.sections.remove("denoiser");
        self.activations.retain(|k, _| !k.starts_with("denoiser."));
        self.put_mlp("denoiser", "net", model.denoiser.net());
        self.sections
            .get_mut("denoiser")
            .expect("just inserted")
            .push(scalar("time_embed", model.denoiser.embed() as f64));
        self.sections.insert(
            "schedule".into(),
            vec![vector("betas", model.schedule.betas().to_vec())],
        );
        let n = &model.normalizer;
        self.sections.insert(
            "normalization_stats".into(),
            vec![
                vector("mean", n.mean.clone()),
                vector("std", n.std.clone()),
                scalar("series_dim", n.series_dim as f64),
                scalar("weight_scale", n.weight_scale),
            ],
        );
        self.stage = "diffusion".into();
    }

    pub fn diffusion(&self) -> Result<DiffusionModel> {
        let net = self.get_mlp("denoiser", "net")?;
        let embed = self.values("denoiser", "time_embed")?[0] as usize;
        let schedule = NoiseSchedule::from_betas(self.values("schedule", "betas")?.to_vec())?;
        let normalizer = JointNormalizer {
            mean: self.values("normalization_stats", "mean")?.to_vec(),
            std: self.values("normalization_stats", "std")?.to_vec(),
            series_dim: self.values("normalization_stats", "series_dim")?[0] as usize,
            weight_scale: self.values("normalization_stats", "weight_scale")?[0],
        };
        Ok(DiffusionModel {
            schedule,
            denoiser: Denoiser::from_net(net, embed)?,
            normalizer,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text).context("checkpoint is not JSON")?;
        let version = probe.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(FORMAT_VERSION as u64) {
            bail!("checkpoint format version {version:?} is not supported (expected {FORMAT_VERSION})");
        }
        Ok(serde_json::from_value(probe)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("loading {}", path.display()))
    }
}
