use super::common_shape;
use crate::error::{Error, Result};
use crate::series::IrregularSeries;

/// Normalized `bins`-bin histograms of `a` and `b` over their pooled range.
/// A zero-width range puts all mass in one bin.
pub fn histogram(a: &[f64], b: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if bins == 0 {
        return Err(Error::Config("histograms need at least one bin".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("histogram of an empty sample"));
    }
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let width = hi - lo;
    let fill = |xs: &[f64]| {
        if !(width > 0.0) {
            return vec![1.0];
        }
        let mut h = vec![0.0; bins];
        for &x in xs {
            let k = (((x - lo) / width) * bins as f64).floor() as usize;
            h[k.min(bins - 1)] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    Ok((fill(a), fill(b)))
}

fn observed_at(data: &[IrregularSeries], step: usize, channel: usize) -> Vec<f64> {
    data.iter()
        .filter(|s| s.is_observed(step, channel))
        .map(|s| s.values()[step][channel])
        .collect()
}

/// Mean L1 distance between per-(timestep, channel) marginal histograms, over
/// observed entries. Marginals with no observations on either side are
/// skipped.
pub fn mdd(real: &[IrregularSeries], synthetic: &[IrregularSeries], bins: usize) -> Result<f64> {
    let (len, channels) = common_shape(real, synthetic)?;
    let (mut total, mut count) = (0.0, 0usize);
    for step in 0..len {
        for c in 0..channels {
            let (a, b) = (observed_at(real, step, c), observed_at(synthetic, step, c));
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let (p, q) = histogram(&a, &b, bins)?;
            total += p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::contract("no marginal is observed in both datasets"));
    }
    Ok(total / count as f64)
}

fn pooled(data: &[IrregularSeries]) -> Vec<f64> {
    data.iter()
        .flat_map(|s| {
            s.values()
                .iter()
                .zip(s.mask())
                .flat_map(|(r, m)| r.iter().zip(m).filter(|(_, &o)| o).map(|(&v, _)| v))
        })
        .collect()
}

/// `KL(real ‖ synthetic)` between histograms of all observed values, each
/// bin smoothed by `smoothing` and renormalized.
pub fn kl_divergence(
    real: &[IrregularSeries],
    synthetic: &[IrregularSeries],
    bins: usize,
    smoothing: f64,
) -> Result<f64> {
    common_shape(real, synthetic)?;
    if !(smoothing > 0.0) {
        return Err(Error::Config("KL smoothing must be positive".into()));
    }
    let (p, q) = histogram(&pooled(real), &pooled(synthetic), bins)?;
    let norm = 1.0 + smoothing * p.len() as f64;
    let kl = p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| {
            let (pi, qi) = ((pi + smoothing) / norm, (qi + smoothing) / norm);
            pi * (pi / qi).ln()
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}
