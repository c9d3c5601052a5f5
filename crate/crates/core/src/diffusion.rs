//! Denoising diffusion over joint vectors `(regular series, routing weights)`.

use diffmn_nn::nn::{Mlp, Parameterized};
use diffmn_nn::optim::Adam;
use diffmn_nn::tape::Tape;
use diffmn_nn::tensor::Tensor;
use diffmn_nn::{clip_global_norm, Activation, Scalar};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: usize,
    /// Hidden layers of the denoiser.
    pub layers: usize,
    pub time_embed: usize,
    /// Optimizer steps.
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    pub grad_clip: f64,
    /// Multiplier on the weight block relative to the normalized series block.
    pub weight_scale: f64,
    /// Lower bound on per-position standard deviations when normalizing.
    pub std_floor: f64,
    /// Decay of the parameter moving average that becomes the final model,
    /// capped during warm-up; 0 keeps the last iterate.
    pub ema: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.05,
            hidden: 128,
            layers: 2,
            time_embed: 32,
            iterations: 10_000,
            lr: 1e-3,
            batch: 64,
            grad_clip: 1.0,
            weight_scale: 1.0,
            std_floor: 1e-3,
            ema: 0.999,
        }
    }
}

/// Linear `β` ramp with cumulative `ᾱ`; step `t` runs from 1 to `T_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<S> {
    betas: Vec<S>,
    alpha_bars: Vec<S>,
}

impl<S: Scalar> NoiseSchedule<S> {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "β range must satisfy 0 < {beta_start} ≤ {beta_end} < 1"
            )));
        }
        let betas: Vec<S> = (0..steps)
            .map(|i| {
                let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                S::lit(beta_start + (beta_end - beta_start) * frac)
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<S>) -> Result<Self> {
        if betas.is_empty()
            || betas.iter().any(|&b| !(b > S::zero() && b < S::one()))
            || betas.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Config("β must be non-decreasing inside (0, 1)".into()));
        }
        let mut acc = S::one();
        let alpha_bars = betas
            .iter()
            .map(|&b| {
                acc *= S::one() - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[S] {
        &self.betas
    }

    pub fn beta(&self, t: usize) -> S {
        self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> S {
        if t == 0 {
            S::one()
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::contract(format!(
                "diffusion step {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `√ᾱ_t x0 + √(1 − ᾱ_t) ε`.
    pub fn q_sample(&self, x0: &[S], t: usize, eps: &[S]) -> Result<Vec<S>> {
        self.check_step(t)?;
        q_sample_with(self.alpha_bar(t), x0, eps)
    }
}

/// Forward corruption at an explicit `ᾱ`.
pub fn q_sample_with<S: Scalar>(alpha_bar: S, x0: &[S], eps: &[S]) -> Result<Vec<S>> {
    if x0.len() != eps.len() {
        return Err(Error::contract("x0 and ε differ in length"));
    }
    let (a, b) = (alpha_bar.sqrt(), (S::one() - alpha_bar).sqrt());
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// Sinusoidal embedding of an integer step.
pub fn time_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        out.push(S::lit((t as f64 * freq).sin()));
    }
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        out.push(S::lit((t as f64 * freq).cos()));
    }
    out.resize(dim, S::zero());
    out
}

/// `ε_θ(x_t, t)`: an MLP over the noisy vector and the step embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser<S> {
    net: Mlp<S>,
    dim: usize,
    embed: usize,
}

impl<S: Scalar> Denoiser<S> {
    /// The output layer starts at zero, so the untrained prediction is `0`.
    pub fn new<R: Rng + ?Sized>(dim: usize, cfg: &DiffusionConfig, rng: &mut R) -> Self {
        let mut dims = vec![dim + cfg.time_embed];
        dims.extend(std::iter::repeat_n(cfg.hidden, cfg.layers));
        dims.push(dim);
        let mut net = Mlp::xavier(&dims, Activation::Tanh, Activation::Identity, rng);
        let last = net.layers_mut().last_mut().expect("output layer");
        last.weight = Tensor::zeros(last.weight.shape());
        Self {
            net,
            dim,
            embed: cfg.time_embed,
        }
    }

    pub fn from_net(net: Mlp<S>, embed: usize) -> Result<Self> {
        let dim = net.output_dim();
        if net.input_dim() != dim + embed {
            return Err(Error::contract(
                "denoiser input must be the data plus the time embedding",
            ));
        }
        Ok(Self { net, dim, embed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self) -> usize {
        self.embed
    }

    pub fn net(&self) -> &Mlp<S> {
        &self.net
    }

    fn input(&self, xt: &[S], steps: &[usize]) -> Result<Tensor<S>> {
        let rows = steps.len();
        if xt.len() != rows * self.dim {
            return Err(Error::contract("noisy batch does not match the denoiser dimension"));
        }
        let width = self.dim + self.embed;
        let mut data = Vec::with_capacity(rows * width);
        for (r, &t) in steps.iter().enumerate() {
            data.extend_from_slice(&xt[r * self.dim..(r + 1) * self.dim]);
            data.extend(time_embedding::<S>(t, self.embed));
        }
        Ok(Tensor::matrix(rows, width, data)?)
    }

    /// Noise predictions for a row-major batch of noisy vectors.
    pub fn predict(&self, xt: &[S], steps: &[usize]) -> Result<Vec<S>> {
        Ok(self.net.infer(&self.input(xt, steps)?)?.into_data())
    }
}

impl<S: Scalar> Parameterized<S> for Denoiser<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.net.parameters_mut()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiffusionReport {
    /// Initial loss of the untrained denoiser, then one entry per iteration.
    pub losses: Vec<f64>,
}

fn gaussian<S: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<S> {
    (0..n).map(|_| S::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// One ε-prediction loss evaluation, per-sample `‖ε − ε̂‖²` averaged over
/// the batch. Returns the tape, loss and the network leaves.
fn denoising_loss<S: Scalar>(
    denoiser: &Denoiser<S>,
    schedule: &NoiseSchedule<S>,
    x0: &[&[S]],
    rng: &mut rng::Rng,
    trainable: bool,
) -> Result<(Tape<S>, diffmn_nn::Var, Vec<diffmn_nn::Var>)> {
    let dim = denoiser.dim;
    let b = x0.len();
    let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps: Vec<S> = gaussian(rng, b * dim);
    let mut xt = Vec::with_capacity(b * dim);
    for (r, x) in x0.iter().enumerate() {
        xt.extend(q_sample_with(
            schedule.alpha_bar(steps[r]),
            x,
            &eps[r * dim..(r + 1) * dim],
        )?);
    }
    let mut tape = Tape::new();
    let bound = denoiser.net.bind(&mut tape, trainable);
    let input = tape.constant(denoiser.input(&xt, &steps)?);
    let pred = bound.forward(&mut tape, input)?;
    let target = tape.constant(Tensor::matrix(b, dim, eps)?);
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq);
    let loss = tape.scale(total, S::one() / S::lit(b as f64));
    Ok((tape, loss, bound.vars()))
}

/// Moving-average decay after `k` updates, warmed up as `(1+k)/(10+k)`.
pub fn ema_decay(decay: f64, k: usize) -> f64 {
    decay.min((1.0 + k as f64) / (10.0 + k as f64))
}

/// Trains a fresh denoiser on `data` (already in the model's normalized space).
pub fn train_diffusion<S: Scalar>(
    data: &[Vec<S>],
    schedule: &NoiseSchedule<S>,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<(Denoiser<S>, DiffusionReport)> {
    let dim = data
        .first()
        .ok_or_else(|| Error::contract("diffusion training needs a non-empty dataset"))?
        .len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::contract("joint samples differ in length"));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("diffusion batch size must be positive".into()));
    }
    let mut rng = rng::stream(seed, streams::DIFFUSION);
    let mut denoiser = Denoiser::new(dim, cfg, &mut rng);
    let mut average = denoiser.clone();
    let mut adam = Adam::<S>::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    {
        let probe: Vec<&[S]> = data.iter().take(cfg.batch).map(Vec::as_slice).collect();
        let (tape, loss, _) = denoising_loss(&denoiser, schedule, &probe, &mut rng, false)?;
        losses.push(tape.value(loss).item().as_f64());
    }
    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].as_slice());
            cursor += 1;
        }
        let (tape, loss, vars) = denoising_loss(&denoiser, schedule, &batch, &mut rng, true)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged {
                stage: "diffusion",
                detail: format!("iteration {it}: loss became {value}"),
            });
        }
        let grads = tape.backward(loss)?;
        let mut grads: Vec<Tensor<S>> = vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v))).collect();
        if cfg.grad_clip > 0.0 {
            clip_global_norm(&mut grads, S::lit(cfg.grad_clip));
        }
        adam.step(denoiser.parameters_mut(), &grads)
            .map_err(|e| Error::Diverged {
                stage: "diffusion",
                detail: e.to_string(),
            })?;
        losses.push(value);
        let decay = S::lit(ema_decay(cfg.ema, it));
        for ((_, a), (_, p)) in average.parameters_mut().into_iter().zip(denoiser.parameters()) {
            for (x, &y) in a.data_mut().iter_mut().zip(p.data()) {
                *x = decay * *x + (S::one() - decay) * y;
            }
        }
    }
    Ok((average, DiffusionReport { losses }))
}

/// Ancestral DDPM sampling with an arbitrary noise predictor
/// `predict(x_t, t) -> ε̂` on row-major `n × dim` batches.
pub fn ancestral_sample<S, R, F>(
    schedule: &NoiseSchedule<S>,
    dim: usize,
    n: usize,
    rng: &mut R,
    mut predict: F,
) -> Result<Vec<Vec<S>>>
where
    S: Scalar,
    R: Rng + ?Sized,
    F: FnMut(&[S], usize) -> Result<Vec<S>>,
{
    let mut x: Vec<S> = gaussian(rng, n * dim);
    for t in (1..=schedule.steps()).rev() {
        let eps = predict(&x, t)?;
        if eps.len() != x.len() {
            return Err(Error::contract("noise prediction has the wrong size"));
        }
        let beta = schedule.beta(t);
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t - 1);
        let coef = beta / (S::one() - ab).sqrt();
        let inv = S::one() / (S::one() - beta).sqrt();
        let sigma = ((S::one() - ab_prev) / (S::one() - ab) * beta).sqrt();
        let noise: Vec<S> = if t > 1 {
            gaussian(rng, n * dim)
        } else {
            vec![S::zero(); n * dim]
        };
        for ((xi, &e), &z) in x.iter_mut().zip(&eps).zip(&noise) {
            *xi = inv * (*xi - coef * e) + sigma * z;
        }
    }
    Ok(x.chunks(dim.max(1)).map(<[S]>::to_vec).collect())
}

/// Samples `n` vectors from a trained denoiser, in batches of at most 256.
pub fn sample<S: Scalar, R: Rng + ?Sized>(
    denoiser: &Denoiser<S>,
    schedule: &NoiseSchedule<S>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<S>>> {
    let mut out = Vec::with_capacity(n);
    let mut left = n;
    while left > 0 {
        let b = left.min(256);
        out.extend(ancestral_sample(schedule, denoiser.dim, b, rng, |x, t| {
            denoiser.predict(x, &vec![t; b])
        })?);
        left -= b;
    }
    Ok(out)
}

/// Clamps at zero and renormalizes; falls back to uniform on a vanishing sum.
pub fn project_to_simplex<S: Scalar>(w: &[S]) -> Vec<S> {
    let clamped: Vec<S> = w.iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
    let sum: S = clamped.iter().copied().sum();
    if !(sum.as_f64() >= 1e-8) {
        return vec![S::one() / S::lit(w.len() as f64); w.len()];
    }
    clamped.into_iter().map(|v| v / sum).collect()
}

/// Per-position affine map between the raw joint vector and the diffusion
/// space: the series block is standardized, the weight block scaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub series_dim: usize,
    pub weight_scale: f64,
}

impl JointNormalizer {
    pub fn fit(series: &[Vec<f64>], weight_scale: f64, std_floor: f64) -> Result<Self> {
        let dim = series
            .first()
            .ok_or_else(|| Error::contract("normalizer needs at least one series"))?
            .len();
        if series.iter().any(|s| s.len() != dim) {
            return Err(Error::contract("series differ in length"));
        }
        if !(weight_scale > 0.0) {
            return Err(Error::Config("weight scale must be positive".into()));
        }
        let n = series.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| series.iter().map(|s| s[j]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|j| {
                let var = series.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(std_floor)
            })
            .collect();
        Ok(Self {
            mean,
            std,
            series_dim: dim,
            weight_scale,
        })
    }

    pub fn encode(&self, series: &[f64], weights: &[f64]) -> Vec<f64> {
        series
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .chain(weights.iter().map(|w| w * self.weight_scale))
            .collect()
    }

    /// Raw series block and simplex-projected weights.
    pub fn decode(&self, joint: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (s, w) = joint.split_at(self.series_dim);
        let series = s
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| x * sd + m)
            .collect();
        let weights: Vec<f64> = w.iter().map(|v| v / self.weight_scale).collect();
        (series, project_to_simplex(&weights))
    }
}

/// A trained joint generator.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    pub schedule: NoiseSchedule<f64>,
    pub denoiser: Denoiser<f64>,
    pub normalizer: JointNormalizer,
}

/// Generated regular series (row-major, grid × channels) and its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSample {
    pub series: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiffusionModel {
    pub fn fit(
        series: &[Vec<f64>],
        weights: &[Vec<f64>],
        cfg: &DiffusionConfig,
        seed: u64,
    ) -> Result<(Self, DiffusionReport)> {
        if series.len() != weights.len() {
            return Err(Error::contract("one weight vector per series is required"));
        }
        let normalizer = JointNormalizer::fit(series, cfg.weight_scale, cfg.std_floor)?;
        let joint: Vec<Vec<f64>> = series
            .iter()
            .zip(weights)
            .map(|(s, w)| normalizer.encode(s, w))
            .collect();
        let schedule = NoiseSchedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end)?;
        let (denoiser, report) = train_diffusion(&joint, &schedule, cfg, seed)?;
        Ok((
            Self {
                schedule,
                denoiser,
                normalizer,
            },
            report,
        ))
    }

    /// Draws `n` joint samples; a non-finite draw is retried once.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<JointSample>> {
        let mut rng = rng::stream(seed, streams::SAMPLE);
        let raw = sample(&self.denoiser, &self.schedule, n, &mut rng)?;
        raw.into_iter()
            .map(|x| {
                let x = if x.iter().all(|v| v.is_finite()) {
                    x
                } else {
                    let retry = sample(&self.denoiser, &self.schedule, 1, &mut rng)?.remove(0);
                    if !retry.iter().all(|v| v.is_finite()) {
                        return Err(Error::Diverged {
                            stage: "diffusion sampling",
                            detail: "non-finite sample after one retry".into(),
                        });
                    }
                    retry
                };
                let (series, weights) = self.normalizer.decode(&x);
                Ok(JointSample { series, weights })
            })
            .collect()
    }
}
