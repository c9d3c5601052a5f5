use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dense_values;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::series::IrregularSeries;
use crate::synthgen::{cubic_abscissa, Cubic, CubicSpec};

/// Least-squares `[a, b, c, d]` of `a x³ + b x² + c x + d` through `(x, y)`,
/// from the normal equations.
pub fn refit_cubic(x: &[f64], y: &[f64]) -> Result<Cubic> {
    if x.len() != y.len() {
        return Err(Error::contract("abscissae and values differ in length"));
    }
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::contract(format!(
            "cubic refit needs 4 distinct abscissae, got {}",
            distinct.len()
        )));
    }
    let mut a = [[0.0f64; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let row = [xi * xi * xi, xi * xi, xi, 1.0];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += row[r] * row[c];
            }
            a[r][4] += row[r] * yi;
        }
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, pivot);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..5 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut coef = [0.0; 4];
    for r in (0..4).rev() {
        let tail: f64 = (r + 1..4).map(|c| a[r][c] * coef[c]).sum();
        coef[r] = (a[r][4] - tail) / a[r][r];
    }
    Ok(coef)
}

/// Exact 1-Wasserstein distance between two empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = f64::NAN;
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if !prev.is_nan() {
            total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        }
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicRecovery {
    /// `|mean(ĉ) − μ|` per coefficient `a, b, c, d`.
    pub mean_error: [f64; 4],
    /// `|std(ĉ) − σ|` per coefficient.
    pub std_error: [f64; 4],
    /// Distance from the reference normal, per coefficient.
    pub w1: [f64; 4],
    pub refits: Vec<Cubic>,
}

/// Refits every generated series (channel 0 on its own time grid) and
/// compares the coefficient distributions with the `CubicSpec` normals.
pub fn cubic_recovery(
    generated: &[IrregularSeries],
    spec: &CubicSpec,
    reference_draws: usize,
    seed: u64,
) -> Result<CubicRecovery> {
    if generated.is_empty() || reference_draws == 0 {
        return Err(Error::contract(
            "cubic recovery needs generated samples and reference draws",
        ));
    }
    let refits = generated
        .iter()
        .map(|s| {
            let x: Vec<f64> = s.times().iter().map(|&t| cubic_abscissa(t)).collect();
            let m = s.channels();
            let y: Vec<f64> = dense_values(s)?.iter().step_by(m).copied().collect();
            refit_cubic(&x, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(seed, streams::METRICS);
    let n = refits.len() as f64;
    let mut out = CubicRecovery {
        mean_error: [0.0; 4],
        std_error: [0.0; 4],
        w1: [0.0; 4],
        refits,
    };
    for (k, p) in spec.coefficients().iter().enumerate() {
        let col: Vec<f64> = out.refits.iter().map(|c| c[k]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let normal = Normal::new(p.mean, p.std).map_err(|e| Error::Config(e.to_string()))?;
        let reference: Vec<f64> = (0..reference_draws).map(|_| normal.sample(&mut rng)).collect();
        out.mean_error[k] = (mean - p.mean).abs();
        out.std_error[k] = (std - p.std).abs();
        out.w1[k] = wasserstein1(&col, &reference);
    }
    Ok(out)
}
