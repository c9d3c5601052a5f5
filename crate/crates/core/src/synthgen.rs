//! Synthetic datasets and irregularity masks.

use std::f64::consts::PI;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::series::IrregularSeries;

/// Uniform timestamps on `[0, 1]`.
pub fn unit_grid(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![0.0];
    }
    (0..len).map(|i| i as f64 / (len - 1) as f64).collect()
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")));
    }
    Ok(())
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineSpec {
    pub channels: usize,
    pub length: usize,
    /// Cycles per unit time.
    pub frequency: (f64, f64),
    pub phase: (f64, f64),
}

impl Default for SineSpec {
    fn default() -> Self {
        Self {
            channels: 2,
            length: 24,
            frequency: (1.0, 3.0),
            phase: (0.0, 2.0 * PI),
        }
    }
}

/// Every channel is `sin(2π f t + φ)` with its own `f` and `φ`.
pub fn gen_sines(spec: &SineSpec, n: usize, seed: u64) -> Result<Vec<IrregularSeries>> {
    check_range("frequency", spec.frequency)?;
    check_range("phase", spec.phase)?;
    if spec.frequency.0 <= 0.0 {
        return Err(Error::Config("sine frequencies must be positive".into()));
    }
    if n == 0 || spec.channels == 0 || spec.length < 2 {
        return Err(Error::Config("sines need n > 0, channels > 0 and length ≥ 2".into()));
    }
    let mut rng = rng::stream(seed, streams::DATA);
    let times = unit_grid(spec.length);
    (0..n)
        .map(|i| {
            let params: Vec<(f64, f64)> = (0..spec.channels)
                .map(|_| (draw(&mut rng, spec.frequency), draw(&mut rng, spec.phase)))
                .collect();
            let values = times
                .iter()
                .map(|&t| params.iter().map(|&(f, p)| (2.0 * PI * f * t + p).sin()).collect())
                .collect();
            IrregularSeries::fully_observed(format!("sine-{i}"), times.clone(), values)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalParam {
    pub mean: f64,
    pub std: f64,
}

impl NormalParam {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CubicSpec {
    pub a: NormalParam,
    pub b: NormalParam,
    pub c: NormalParam,
    pub d: NormalParam,
    pub samples: usize,
    pub grid: usize,
}

impl Default for CubicSpec {
    fn default() -> Self {
        Self {
            a: NormalParam::new(1.0, 0.3),
            b: NormalParam::new(-0.5, 0.3),
            c: NormalParam::new(0.5, 0.2),
            d: NormalParam::new(0.0, 0.2),
            samples: 2500,
            grid: 24,
        }
    }
}

impl CubicSpec {
    pub fn coefficients(&self) -> [NormalParam; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Polynomial abscissae, linearly spaced on `[−1, 1]`.
    pub fn abscissae(&self) -> Vec<f64> {
        unit_grid(self.grid).into_iter().map(|t| 2.0 * t - 1.0).collect()
    }
}

/// Coefficients `[a, b, c, d]` of `a x³ + b x² + c x + d`.
pub type Cubic = [f64; 4];

pub fn eval_cubic(coef: &Cubic, x: f64) -> f64 {
    ((coef[0] * x + coef[1]) * x + coef[2]) * x + coef[3]
}

/// Maps series time `t ∈ [0, 1]` onto the polynomial axis `[−1, 1]`.
pub fn cubic_abscissa(t: f64) -> f64 {
    2.0 * t - 1.0
}

/// Cubic curves on the `CubicSpec` grid together with the coefficients that made them.
pub fn gen_cubic(spec: &CubicSpec, seed: u64) -> Result<(Vec<IrregularSeries>, Vec<Cubic>)> {
    if spec.grid < 4 || spec.samples == 0 {
        return Err(Error::Config(
            "cubic spec needs at least 4 grid points and 1 sample".into(),
        ));
    }
    let dists = spec
        .coefficients()
        .iter()
        .map(|p| {
            Normal::new(p.mean, p.std).map_err(|e| Error::Config(format!("invalid coefficient distribution: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(seed, streams::DATA);
    let times = unit_grid(spec.grid);
    let mut series = Vec::with_capacity(spec.samples);
    let mut truth = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let coef: Cubic = [0, 1, 2, 3].map(|k| dists[k].sample(&mut rng));
        let values = times
            .iter()
            .map(|&t| vec![eval_cubic(&coef, cubic_abscissa(t))])
            .collect();
        series.push(IrregularSeries::fully_observed(
            format!("cubic-{i}"),
            times.clone(),
            values,
        )?);
        truth.push(coef);
    }
    Ok((series, truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    Sawtooth,
    Piecewise,
    SineMix,
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sawtooth" => Ok(Self::Sawtooth),
            "piecewise" => Ok(Self::Piecewise),
            "sine-mix" => Ok(Self::SineMix),
            other => Err(Error::Config(format!("unknown signal kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSpec {
    pub channels: usize,
    pub length: usize,
    pub amplitude: (f64, f64),
    /// Sawtooth period in time units.
    pub period: (f64, f64),
    /// Inclusive bounds on piecewise segment counts.
    pub segments: (usize, usize),
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            channels: 1,
            length: 24,
            amplitude: (0.5, 1.0),
            period: (0.3, 0.6),
            segments: (2, 4),
        }
    }
}

/// Rising ramp from `−amp` to `amp` over each period.
pub fn sawtooth(t: f64, amplitude: f64, period: f64, phase: f64) -> f64 {
    let x = (t + phase) / period;
    amplitude * (2.0 * (x - x.floor()) - 1.0)
}

/// Constant levels between sorted breakpoints; `levels.len() == breaks.len() + 1`.
pub fn piecewise(t: f64, breaks: &[f64], levels: &[f64]) -> f64 {
    levels[breaks.partition_point(|&b| b <= t)]
}

fn signal_channel(kind: SignalKind, spec: &SignalSpec, rng: &mut impl Rng) -> Result<Box<dyn Fn(f64) -> f64>> {
    let amp = draw(rng, spec.amplitude);
    Ok(match kind {
        SignalKind::Sawtooth => {
            let period = draw(rng, spec.period);
            let phase = rng.random_range(0.0..period);
            Box::new(move |t| sawtooth(t, amp, period, phase))
        }
        SignalKind::Piecewise => {
            let (lo, hi) = spec.segments;
            if lo == 0 || lo > hi {
                return Err(Error::Config("piecewise segment range is empty".into()));
            }
            let k = rng.random_range(lo..=hi);
            let mut breaks: Vec<f64> = (1..k).map(|_| rng.random_range(0.05..0.95)).collect();
            breaks.sort_by(f64::total_cmp);
            let levels: Vec<f64> = (0..k).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
            Box::new(move |t| piecewise(t, &breaks, &levels))
        }
        SignalKind::SineMix => {
            let parts: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| (0.5 * amp, rng.random_range(1.0..4.0), rng.random_range(0.0..2.0 * PI)))
                .collect();
            Box::new(move |t| parts.iter().map(|&(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum())
        }
    })
}

fn signal_series(kind: SignalKind, spec: &SignalSpec, id: String, rng: &mut impl Rng) -> Result<IrregularSeries> {
    let funcs = (0..spec.channels)
        .map(|_| signal_channel(kind, spec, rng))
        .collect::<Result<Vec<_>>>()?;
    let times = unit_grid(spec.length);
    let values = times.iter().map(|&t| funcs.iter().map(|f| f(t)).collect()).collect();
    IrregularSeries::fully_observed(id, times, values)
}

fn check_signal_spec(spec: &SignalSpec, n: usize) -> Result<()> {
    check_range("amplitude", spec.amplitude)?;
    check_range("period", spec.period)?;
    if spec.period.0 <= 0.0 || n == 0 || spec.channels == 0 || spec.length < 2 {
        return Err(Error::Config(
            "signals need a positive period, n > 0, channels > 0 and length ≥ 2".into(),
        ));
    }
    Ok(())
}

pub fn gen_signals(kind: SignalKind, spec: &SignalSpec, n: usize, seed: u64) -> Result<Vec<IrregularSeries>> {
    check_signal_spec(spec, n)?;
    let mut rng = rng::stream(seed, streams::DATA);
    let tag = match kind {
        SignalKind::Sawtooth => "sawtooth",
        SignalKind::Piecewise => "piecewise",
        SignalKind::SineMix => "sine-mix",
    };
    (0..n)
        .map(|i| signal_series(kind, spec, format!("{tag}-{i}"), &mut rng))
        .collect()
}

/// Alternating sawtooth and sine-mix samples.
pub fn gen_mixed(spec: &SignalSpec, n: usize, seed: u64) -> Result<Vec<IrregularSeries>> {
    check_signal_spec(spec, n)?;
    let mut rng = rng::stream(seed, streams::DATA);
    (0..n)
        .map(|i| {
            let kind = if i % 2 == 0 {
                SignalKind::Sawtooth
            } else {
                SignalKind::SineMix
            };
            signal_series(kind, spec, format!("mixed-{i}"), &mut rng)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropMode {
    /// Whole timesteps disappear.
    #[default]
    Timestep,
    /// Entries are dropped independently per channel.
    Entry,
}

const MAX_REDRAWS: usize = 10;

/// Masks `⌊rate·len⌋` timesteps (or entries per channel) of `series`, keeping
/// at least two observations per channel.
pub fn drop_observations(series: &IrregularSeries, rate: f64, seed: u64) -> Result<IrregularSeries> {
    let mut rng = rng::stream(seed, streams::DROP);
    drop_observations_with(series, rate, DropMode::Timestep, &mut rng)
}

pub fn drop_observations_with(
    series: &IrregularSeries,
    rate: f64,
    mode: DropMode,
    rng: &mut impl Rng,
) -> Result<IrregularSeries> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("drop rate {rate} outside [0, 1)")));
    }
    let len = series.len();
    let channels = series.channels();
    let count = (rate * len as f64).floor() as usize;
    if count == 0 {
        return Ok(series.clone());
    }
    for _ in 0..MAX_REDRAWS {
        let mut mask = series.mask().to_vec();
        match mode {
            DropMode::Timestep => {
                for i in sample_indices(rng, len, count) {
                    mask[i].iter_mut().for_each(|m| *m = false);
                }
            }
            DropMode::Entry => {
                for c in 0..channels {
                    for i in sample_indices(rng, len, count) {
                        mask[i][c] = false;
                    }
                }
            }
        }
        let ok = (0..channels).all(|c| mask.iter().filter(|r| r[c]).count() >= 2);
        if ok {
            return series.with_mask(mask);
        }
    }
    Err(Error::InvalidSeries {
        id: series.id().to_string(),
        reason: format!("dropping at rate {rate} leaves fewer than two observations in some channel"),
    })
}

/// Applies [`drop_observations`] to every sample with per-sample streams.
pub fn drop_dataset(data: &[IrregularSeries], rate: f64, mode: DropMode, seed: u64) -> Result<Vec<IrregularSeries>> {
    let mut rng = rng::stream(seed, streams::DROP);
    data.iter()
        .map(|s| drop_observations_with(s, rate, mode, &mut rng))
        .collect()
}
