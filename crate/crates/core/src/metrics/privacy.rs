use super::dense_values;
use crate::error::{Error, Result};
use crate::series::IrregularSeries;

fn nearest(x: &[f64], pool: &[Vec<f64>]) -> f64 {
    pool.iter()
        .map(|p| p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Nearest-neighbor membership attack: a real sample is called a training
/// member when its distance to the closest synthetic sample is below the
/// median distance over all real samples. Returns the attack accuracy.
pub fn mir(train: &[IrregularSeries], holdout: &[IrregularSeries], synthetic: &[IrregularSeries]) -> Result<f64> {
    if train.is_empty() || holdout.is_empty() || synthetic.is_empty() {
        return Err(Error::contract(
            "membership inference needs train, holdout and synthetic samples",
        ));
    }
    if train.len() != holdout.len() {
        log::warn!(
            "membership sets differ in size ({} train vs {} holdout); accuracy is not balanced",
            train.len(),
            holdout.len()
        );
    }
    let dense = |d: &[IrregularSeries]| d.iter().map(dense_values).collect::<Result<Vec<_>>>();
    let (tr, ho, syn) = (dense(train)?, dense(holdout)?, dense(synthetic)?);
    let dim = syn[0].len();
    if tr.iter().chain(&ho).chain(&syn).any(|v| v.len() != dim) {
        return Err(Error::contract("membership inference needs equally shaped samples"));
    }
    let d_tr: Vec<f64> = tr.iter().map(|x| nearest(x, &syn)).collect();
    let d_ho: Vec<f64> = ho.iter().map(|x| nearest(x, &syn)).collect();
    let mut all: Vec<f64> = d_tr.iter().chain(&d_ho).copied().collect();
    all.sort_by(f64::total_cmp);
    let n = all.len();
    let threshold = if n % 2 == 1 {
        all[n / 2]
    } else {
        0.5 * (all[n / 2 - 1] + all[n / 2])
    };
    let hits = d_tr.iter().filter(|&&d| d < threshold).count() + d_ho.iter().filter(|&&d| d >= threshold).count();
    Ok(hits as f64 / n as f64)
}
