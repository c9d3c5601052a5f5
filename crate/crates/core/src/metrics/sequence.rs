use diffmn_nn::nn::{GruCell, Mlp, Parameterized};
use diffmn_nn::optim::Adam;
use diffmn_nn::tape::{Tape, Var};
use diffmn_nn::tensor::Tensor;
use diffmn_nn::{clip_global_norm, Activation};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{common_shape, dense_values, MetricsConfig};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::series::IrregularSeries;

/// Budget of a post-hoc GRU model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastScore {
    pub mse: f64,
    pub mae: f64,
}

/// Per-sample dense values, row-major `len × channels`.
struct Sequences {
    data: Vec<Vec<f64>>,
    channels: usize,
}

impl Sequences {
    fn new(series: &[&IrregularSeries], channels: usize) -> Result<Self> {
        let data = series.iter().map(|s| dense_values(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self { data, channels })
    }

    /// Per-channel mean and std over the first `steps` steps of `rows`.
    fn stats(&self, rows: &[usize], steps: usize) -> (Vec<f64>, Vec<f64>) {
        let m = self.channels;
        let n = (rows.len() * steps) as f64;
        let mut mean = vec![0.0; m];
        let mut var = vec![0.0; m];
        for &r in rows {
            for (k, v) in self.data[r][..steps * m].iter().enumerate() {
                mean[k % m] += v / n;
            }
        }
        for &r in rows {
            for (k, v) in self.data[r][..steps * m].iter().enumerate() {
                var[k % m] += (v - mean[k % m]).powi(2) / n;
            }
        }
        (mean, var.iter().map(|v| v.sqrt().max(1e-6)).collect())
    }
}

/// Standardized per-timestep inputs `[batch, channels]` for `rows`.
fn step_inputs(seq: &Sequences, rows: &[usize], steps: usize, mean: &[f64], std: &[f64]) -> Vec<Tensor<f64>> {
    let m = seq.channels;
    (0..steps)
        .map(|t| {
            let mut data = Vec::with_capacity(rows.len() * m);
            for &r in rows {
                for c in 0..m {
                    data.push((seq.data[r][t * m + c] - mean[c]) / std[c]);
                }
            }
            Tensor::matrix(rows.len(), m, data).expect("shape matches")
        })
        .collect()
}

#[derive(Clone)]
struct SequenceNet {
    gru: GruCell<f64>,
    head: Mlp<f64>,
}

impl SequenceNet {
    fn new(input: usize, output: usize, cfg: &SequenceConfig, rng: &mut rng::Rng) -> Self {
        Self {
            gru: GruCell::xavier(input, cfg.hidden, rng),
            head: Mlp::xavier(&[cfg.hidden, output], Activation::Identity, Activation::Identity, rng),
        }
    }

    /// Last-step head output plus the bound parameter vars.
    fn forward(&self, tape: &mut Tape<f64>, inputs: &[Tensor<f64>], trainable: bool) -> Result<(Var, Vec<Var>)> {
        let gru = self.gru.bind(tape, trainable);
        let head = self.head.bind(tape, trainable);
        let rows = inputs[0].rows();
        let mut h = tape.constant(Tensor::zeros(&[rows, self.gru.hidden_dim()]));
        for x in inputs {
            let x = tape.constant(x.clone());
            h = gru.step(tape, h, x)?;
        }
        let out = head.forward(tape, h)?;
        Ok((out, gru.vars().into_iter().chain(head.vars()).collect()))
    }

    fn infer(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, inputs, false)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameterized<f64> for SequenceNet {
    fn parameters(&self) -> Vec<(String, &Tensor<f64>)> {
        let gru = self.gru.parameters().into_iter().map(|(n, t)| (format!("gru.{n}"), t));
        let head = self
            .head
            .parameters()
            .into_iter()
            .map(|(n, t)| (format!("head.{n}"), t));
        gru.chain(head).collect()
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let gru = self
            .gru
            .parameters_mut()
            .into_iter()
            .map(|(n, t)| (format!("gru.{n}"), t));
        let head = self
            .head
            .parameters_mut()
            .into_iter()
            .map(|(n, t)| (format!("head.{n}"), t));
        gru.chain(head).collect()
    }
}

/// Minibatch Adam over `train`; `loss` maps the head output and the batch
/// rows to a scalar loss var. Keeps the epoch with the lowest loss on
/// `validation`.
fn fit<F>(
    net: &mut SequenceNet,
    train: &[usize],
    validation: &[usize],
    cfg: &SequenceConfig,
    rng: &mut rng::Rng,
    inputs: impl Fn(&[usize]) -> Vec<Tensor<f64>>,
    loss: F,
) -> Result<()>
where
    F: Fn(&mut Tape<f64>, Var, &[usize]) -> Result<Var>,
{
    if cfg.batch == 0 || cfg.hidden == 0 {
        return Err(Error::Config(
            "sequence model needs positive batch and hidden sizes".into(),
        ));
    }
    let val_inputs = inputs(validation);
    let val_loss = |net: &SequenceNet| -> Result<f64> {
        let mut tape = Tape::new();
        let (out, _) = net.forward(&mut tape, &val_inputs, false)?;
        let l = loss(&mut tape, out, validation)?;
        Ok(tape.value(l).item())
    };
    let mut adam = Adam::<f64>::new(cfg.lr);
    let mut order = train.to_vec();
    let mut best = (val_loss(net)?, net.clone());
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let (out, vars) = net.forward(&mut tape, &inputs(chunk), true)?;
            let l = loss(&mut tape, out, chunk)?;
            let grads = tape.backward(l)?;
            let mut grads: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v))).collect();
            clip_global_norm(&mut grads, 1.0);
            adam.step(net.parameters_mut(), &grads).map_err(|e| Error::Diverged {
                stage: "metrics",
                detail: e.to_string(),
            })?;
        }
        let v = val_loss(net)?;
        if v < best.0 {
            best = (v, net.clone());
        }
    }
    *net = best.1;
    Ok(())
}

/// Moves the last `1/VALIDATION_SHARE` of `train` into a validation set.
const VALIDATION_SHARE: usize = 8;

fn hold_out(mut train: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    let k = (train.len() / VALIDATION_SHARE).max(1);
    let val = train.split_off(train.len() - k);
    (train, val)
}

/// Shuffled split of `0..n` into `(train, test)` by `fraction`.
fn split(n: usize, fraction: f64, rng: &mut rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = ((n as f64 * fraction).round() as usize).min(n);
    let test = idx.split_off(cut);
    (idx, test)
}

/// `|test accuracy − 0.5|` of a GRU classifier separating real from
/// synthetic samples on a stratified split.
pub fn discriminative_score(
    real: &[IrregularSeries],
    synthetic: &[IrregularSeries],
    cfg: &MetricsConfig,
    seed: u64,
) -> Result<f64> {
    let (len, channels) = common_shape(real, synthetic)?;
    let all: Vec<&IrregularSeries> = real.iter().chain(synthetic).collect();
    let seq = Sequences::new(&all, channels)?;
    let mut rng = rng::stream(seed, streams::SPLIT);
    let (tr_r, te_r) = split(real.len(), cfg.train_fraction, &mut rng);
    let (tr_s, te_s) = split(synthetic.len(), cfg.train_fraction, &mut rng);
    if tr_r.len() < 2 || te_r.is_empty() || tr_s.len() < 2 || te_s.is_empty() {
        return Err(Error::contract(format!(
            "degenerate split: {}+{} real, {}+{} synthetic train/test samples",
            tr_r.len(),
            te_r.len(),
            tr_s.len(),
            te_s.len()
        )));
    }
    let offset = real.len();
    let (tr_r, va_r) = hold_out(tr_r);
    let (tr_s, va_s) = hold_out(tr_s);
    let train: Vec<usize> = tr_r.iter().copied().chain(tr_s.iter().map(|i| i + offset)).collect();
    let validation: Vec<usize> = va_r.iter().copied().chain(va_s.iter().map(|i| i + offset)).collect();
    let test: Vec<usize> = te_r.iter().copied().chain(te_s.iter().map(|i| i + offset)).collect();
    let (mean, std) = seq.stats(&train, len);
    let sign = |r: usize| if r < offset { 1.0 } else { -1.0 };

    let mut rng = rng::stream(seed, streams::METRICS);
    let mut net = SequenceNet::new(channels, 1, &cfg.classifier, &mut rng);
    fit(
        &mut net,
        &train,
        &validation,
        &cfg.classifier,
        &mut rng,
        |rows| step_inputs(&seq, rows, len, &mean, &std),
        |tape, logit, rows| {
            let flip = tape.constant(Tensor::matrix(rows.len(), 1, rows.iter().map(|&r| -sign(r)).collect())?);
            let margin = tape.mul(logit, flip)?;
            let l = tape.softplus(margin);
            let total = tape.sum_all(l);
            Ok(tape.scale(total, 1.0 / rows.len() as f64))
        },
    )?;
    let logits = net.infer(&step_inputs(&seq, &test, len, &mean, &std))?;
    let correct = test
        .iter()
        .zip(logits.data())
        .filter(|(&r, &z)| (z > 0.0) == (sign(r) > 0.0))
        .count();
    Ok((correct as f64 / test.len() as f64 - 0.5).abs())
}

/// Held-out error of a GRU trained to predict each sample's last step from
/// the preceding steps.
pub fn downstream_forecast(samples: &[IrregularSeries], cfg: &MetricsConfig, seed: u64) -> Result<ForecastScore> {
    let (len, channels) = common_shape(samples, samples)?;
    if len < 3 {
        return Err(Error::contract(format!("forecasting needs length ≥ 3, got {len}")));
    }
    let all: Vec<&IrregularSeries> = samples.iter().collect();
    let seq = Sequences::new(&all, channels)?;
    let mut rng = rng::stream(seed, streams::SPLIT);
    let (train, test) = split(samples.len(), cfg.train_fraction, &mut rng);
    if train.len() < 4 || test.is_empty() {
        return Err(Error::contract(format!(
            "insufficient samples for forecasting: {} train, {} test",
            train.len(),
            test.len()
        )));
    }
    let history = len - 1;
    let (mean, std) = seq.stats(&train, history);
    let (train, validation) = hold_out(train);
    let target = |rows: &[usize]| -> Vec<f64> {
        rows.iter()
            .flat_map(|&r| (0..channels).map(move |c| (r, c)))
            .map(|(r, c)| (seq.data[r][history * channels + c] - mean[c]) / std[c])
            .collect()
    };

    let mut rng = rng::stream(seed, streams::METRICS);
    let mut net = SequenceNet::new(channels, channels, &cfg.forecaster, &mut rng);
    fit(
        &mut net,
        &train,
        &validation,
        &cfg.forecaster,
        &mut rng,
        |rows| step_inputs(&seq, rows, history, &mean, &std),
        |tape, pred, rows| {
            let y = tape.constant(Tensor::matrix(rows.len(), channels, target(rows))?);
            let diff = tape.sub(pred, y)?;
            let sq = tape.mul(diff, diff)?;
            let total = tape.sum_all(sq);
            Ok(tape.scale(total, 1.0 / (rows.len() * channels) as f64))
        },
    )?;
    let pred = net.infer(&step_inputs(&seq, &test, history, &mean, &std))?;
    let (mut se, mut ae) = (0.0, 0.0);
    for (k, (p, y)) in pred.data().iter().zip(target(&test)).enumerate() {
        let err = (p - y) * std[k % channels];
        se += err * err;
        ae += err.abs();
    }
    let n = (test.len() * channels) as f64;
    Ok(ForecastScore {
        mse: se / n,
        mae: ae / n,
    })
}
