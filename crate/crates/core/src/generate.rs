//! Continuous generation from a trained MoE-NCDE and joint diffusion model.

use rayon::prelude::*;

use crate::diffusion::{DiffusionModel, JointSample};
use crate::error::{Error, Result};
use crate::ncde::MoeNcde;
use crate::series::IrregularSeries;
use crate::spline::{fit_control_path, ControlPath};

const CHUNK: usize = 32;

/// `factor·(L−1)+1` times: every grid time plus `factor − 1` equally spaced
/// times inside each interval. Grid times are copied, not recomputed.
pub fn refined_grid(grid: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::Config("refine factor must be at least 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::contract("cannot refine an empty grid"));
    }
    let mut out = Vec::with_capacity(factor * (grid.len() - 1) + 1);
    for w in grid.windows(2) {
        out.push(w[0]);
        for j in 1..factor {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
        }
    }
    out.push(grid[grid.len() - 1]);
    Ok(out)
}

/// Solves the MoE-NCDE along each joint sample's regular series with its
/// sampled weights and decodes at `query`.
pub fn decode_samples(
    ncde: &MoeNcde<f64>,
    samples: &[JointSample],
    grid: &[f64],
    query: &[f64],
) -> Result<Vec<IrregularSeries>> {
    let m = ncde.channels();
    if grid.len() != ncde.grid_len() {
        return Err(Error::contract(format!(
            "generation grid has {} times, the model was trained on {}",
            grid.len(),
            ncde.grid_len()
        )));
    }
    let series = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.series.len() != grid.len() * m {
                return Err(Error::contract("joint sample does not match the grid"));
            }
            IrregularSeries::fully_observed(
                format!("gen-{i}"),
                grid.to_vec(),
                s.series.chunks(m).map(<[f64]>::to_vec).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let parts = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let paths = chunk
                .iter()
                .map(|&i| fit_control_path::<f64>(&series[i]))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ControlPath<f64>> = paths.iter().collect();
            let weights: Vec<&[f64]> = chunk.iter().map(|&i| samples[i].weights.as_slice()).collect();
            ncde.solve_batch(&weights, &refs, query, true)
        })
        .collect::<Result<Vec<_>>>()?;
    parts
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, rows)| IrregularSeries::fully_observed(format!("gen-{i}"), query.to_vec(), rows))
        .collect()
}

/// `n` generated series on the grid refined by `factor` (1 keeps the grid).
pub fn generate(
    ncde: &MoeNcde<f64>,
    diffusion: &DiffusionModel,
    grid: &[f64],
    n: usize,
    factor: usize,
    seed: u64,
) -> Result<Vec<IrregularSeries>> {
    let query = refined_grid(grid, factor)?;
    let samples = diffusion.generate(n, seed)?;
    decode_samples(ncde, &samples, grid, &query)
}
