//! Channel-wise autoencoder: a per-timestep map between the `M` observed
//! channels and the `d`-dimensional latent space, pretrained once and then
//! frozen.

use diffmn_nn::nn::{Mlp, Parameterized};
use diffmn_nn::optim::Adam;
use diffmn_nn::tape::Tape;
use diffmn_nn::tensor::Tensor;
use diffmn_nn::{Activation, BoundMlp, Scalar, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::series::IrregularSeries;
use crate::spline::fit_control_path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub latent: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Rows (timesteps) per minibatch.
    pub batch: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            latent: 16,
            hidden: 32,
            epochs: 200,
            lr: 1e-3,
            batch: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAutoencoder<S> {
    encoder: Mlp<S>,
    decoder: Mlp<S>,
    frozen: bool,
}

/// Tape handles of a bound autoencoder.
#[derive(Clone, Debug)]
pub struct BoundAutoencoder {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AeReport {
    /// Masked reconstruction loss before training, then after every epoch.
    pub losses: Vec<f64>,
    /// Set when the final loss is not at least halved relative to the start.
    pub insufficient_decrease: bool,
}

impl<S: Scalar> ChannelAutoencoder<S> {
    pub fn new<R: rand::Rng + ?Sized>(channels: usize, cfg: &AeConfig, rng: &mut R) -> Self {
        let encoder = Mlp::xavier(
            &[channels, cfg.hidden, cfg.latent],
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        let decoder = Mlp::xavier(
            &[cfg.latent, cfg.hidden, channels],
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        Self {
            encoder,
            decoder,
            frozen: false,
        }
    }

    pub fn from_parts(encoder: Mlp<S>, decoder: Mlp<S>, frozen: bool) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() || encoder.input_dim() != decoder.output_dim() {
            return Err(Error::contract(format!(
                "encoder {}→{} does not invert decoder {}→{}",
                encoder.input_dim(),
                encoder.output_dim(),
                decoder.input_dim(),
                decoder.output_dim()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            frozen,
        })
    }

    pub fn channels(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encoder(&self) -> &Mlp<S> {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp<S> {
        &self.decoder
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Binds both networks as constants; used by downstream stages.
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> BoundAutoencoder {
        BoundAutoencoder {
            encoder: self.encoder.bind(tape, false),
            decoder: self.decoder.bind(tape, false),
        }
    }

    /// Encodes each row of a `rows × M` tensor independently.
    pub fn encode_rows(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.encoder.infer(x)?)
    }

    pub fn decode_rows(&self, h: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.decoder.infer(h)?)
    }

    pub fn encode(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(self.encode_rows(&Tensor::vector(x.to_vec()))?.into_data())
    }

    pub fn decode(&self, h: &[S]) -> Result<Vec<S>> {
        Ok(self.decode_rows(&Tensor::vector(h.to_vec()))?.into_data())
    }

    fn check_mutable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::contract("autoencoder is frozen"))
        } else {
            Ok(())
        }
    }
}

impl<S: Scalar> Parameterized<S> for ChannelAutoencoder<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        let enc = self
            .encoder
            .parameters()
            .into_iter()
            .map(|(n, t)| (format!("encoder.{n}"), t));
        let dec = self
            .decoder
            .parameters()
            .into_iter()
            .map(|(n, t)| (format!("decoder.{n}"), t));
        enc.chain(dec).collect()
    }

    /// Empty once frozen, so no optimizer can reach the tensors.
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        if self.frozen {
            return Vec::new();
        }
        let enc = self
            .encoder
            .parameters_mut()
            .into_iter()
            .map(|(n, t)| (format!("encoder.{n}"), t));
        let dec = self
            .decoder
            .parameters_mut()
            .into_iter()
            .map(|(n, t)| (format!("decoder.{n}"), t));
        enc.chain(dec).collect()
    }
}

/// Flattened training rows: spline-filled inputs, the observed targets and
/// their mask, all `rows × M` row-major.
#[derive(Clone, Debug)]
pub struct AeRows<S> {
    pub channels: usize,
    pub inputs: Vec<S>,
    pub mask: Vec<S>,
}

impl<S: Scalar> AeRows<S> {
    pub fn len(&self) -> usize {
        self.inputs.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Fills each sample's missing entries from its control path and stacks
    /// every timestep as one row.
    pub fn from_dataset(data: &[IrregularSeries]) -> Result<Self> {
        let channels = data
            .first()
            .ok_or_else(|| Error::contract("autoencoder pretraining needs a non-empty dataset"))?
            .channels();
        let mut inputs = Vec::new();
        let mut mask = Vec::new();
        for s in data {
            if s.channels() != channels {
                return Err(Error::contract(format!(
                    "sample `{}` has {} channels, expected {channels}",
                    s.id(),
                    s.channels()
                )));
            }
            let path = fit_control_path::<S>(s)?;
            for (i, &t) in s.times().iter().enumerate() {
                for c in 0..channels {
                    if s.is_observed(i, c) {
                        inputs.push(S::lit(s.values()[i][c]));
                        mask.push(S::one());
                    } else {
                        inputs.push(path.channel(c).eval(S::lit(t)));
                        mask.push(S::zero());
                    }
                }
            }
        }
        Ok(Self { channels, inputs, mask })
    }

    fn gather(&self, rows: &[usize]) -> (Tensor<S>, Tensor<S>) {
        let m = self.channels;
        let mut x = Vec::with_capacity(rows.len() * m);
        let mut k = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            x.extend_from_slice(&self.inputs[r * m..(r + 1) * m]);
            k.extend_from_slice(&self.mask[r * m..(r + 1) * m]);
        }
        (
            Tensor::new(vec![rows.len(), m], x).expect("consistent rows"),
            Tensor::new(vec![rows.len(), m], k).expect("consistent rows"),
        )
    }
}

/// Mean squared error over the entries with mask 1.
pub fn masked_mse<S: Scalar>(tape: &mut Tape<S>, pred: Var, target: Var, mask: Var) -> Result<Var> {
    let count = tape.value(mask).sum();
    if count <= S::zero() {
        return Err(Error::contract("masked loss over zero observed entries"));
    }
    let diff = tape.sub(pred, target)?;
    let kept = tape.mul(diff, mask)?;
    let sq = tape.mul(kept, kept)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale(total, S::one() / count))
}

fn batch_loss<S: Scalar>(
    ae: &ChannelAutoencoder<S>,
    x: Tensor<S>,
    mask: Tensor<S>,
    tape: &mut Tape<S>,
    trainable: bool,
) -> Result<(Var, BoundAutoencoder)> {
    let bound = BoundAutoencoder {
        encoder: ae.encoder.bind(tape, trainable),
        decoder: ae.decoder.bind(tape, trainable),
    };
    let input = tape.constant(x);
    let mask = tape.constant(mask);
    let h = bound.encoder.forward(tape, input)?;
    let out = bound.decoder.forward(tape, h)?;
    Ok((masked_mse(tape, out, input, mask)?, bound))
}

/// Masked reconstruction loss of `ae` over all rows.
pub fn reconstruction_loss<S: Scalar>(ae: &ChannelAutoencoder<S>, rows: &AeRows<S>) -> Result<f64> {
    let all: Vec<usize> = (0..rows.len()).collect();
    let (x, mask) = rows.gather(&all);
    let mut tape = Tape::new();
    let (loss, _) = batch_loss(ae, x, mask, &mut tape, false)?;
    Ok(tape.value(loss).item().as_f64())
}

/// Pretrains on every timestep of every sample and returns the frozen model.
pub fn pretrain_autoencoder<S: Scalar>(
    data: &[IrregularSeries],
    cfg: &AeConfig,
    seed: u64,
) -> Result<(ChannelAutoencoder<S>, AeReport)> {
    let rows = AeRows::<S>::from_dataset(data)?;
    let mut rng = rng::stream(seed, streams::AE);
    let mut ae = ChannelAutoencoder::new(rows.channels, cfg, &mut rng);
    let report = fit_autoencoder(&mut ae, &rows, cfg, &mut rng)?;
    ae.freeze();
    Ok((ae, report))
}

fn fit_autoencoder<S: Scalar>(
    ae: &mut ChannelAutoencoder<S>,
    rows: &AeRows<S>,
    cfg: &AeConfig,
    rng: &mut rng::Rng,
) -> Result<AeReport> {
    ae.check_mutable()?;
    if cfg.batch == 0 {
        return Err(Error::Config("autoencoder batch size must be positive".into()));
    }
    let mut adam = Adam::<S>::new(cfg.lr);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut losses = vec![reconstruction_loss(ae, rows)?];
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut sum, mut weight) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch) {
            let (x, mask) = rows.gather(chunk);
            if mask.sum() <= S::zero() {
                continue;
            }
            let n_obs = mask.sum().as_f64();
            let mut tape = Tape::new();
            let (loss, bound) = batch_loss(ae, x, mask, &mut tape, true)?;
            let grads = tape.backward(loss)?;
            let vars: Vec<Var> = bound.encoder.vars().into_iter().chain(bound.decoder.vars()).collect();
            let grads: Vec<Tensor<S>> = vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v))).collect();
            adam.step(ae.parameters_mut(), &grads).map_err(|e| Error::Diverged {
                stage: "autoencoder",
                detail: e.to_string(),
            })?;
            sum += tape.value(loss).item().as_f64() * n_obs;
            weight += n_obs;
        }
        losses.push(sum / weight.max(1.0));
    }
    let last = *losses.last().expect("initial loss present");
    let insufficient_decrease = !(last <= 0.5 * losses[0]);
    if insufficient_decrease {
        log::warn!(
            "autoencoder loss went from {:.3e} to {:.3e}, less than a 50% decrease",
            losses[0],
            last
        );
    }
    Ok(AeReport {
        losses,
        insufficient_decrease,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn frozen_model_exposes_no_mutable_parameters() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut ae = ChannelAutoencoder::<f64>::new(2, &AeConfig::default(), &mut rng);
        assert!(!ae.parameters_mut().is_empty());
        ae.freeze();
        assert!(ae.parameters_mut().is_empty());
        assert_eq!(ae.parameters().len(), 8);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let ae = ChannelAutoencoder::<f64>::new(2, &AeConfig::default(), &mut rng);
        assert!(ae.encode(&[1.0, 2.0, 3.0]).is_err());
        assert!(ae.decode(&[1.0]).is_err());
    }
}
