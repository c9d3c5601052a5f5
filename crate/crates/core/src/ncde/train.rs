use std::collections::BTreeMap;

use diffmn_nn::nn::Parameterized;
use diffmn_nn::optim::Adam;
use diffmn_nn::tape::Tape;
use diffmn_nn::tensor::Tensor;
use diffmn_nn::{clip_global_norm, Scalar, Var};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{cde_integrate, BoundModel, MoeNcde, NcdeConfig};
use crate::autoencoder::masked_mse;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::series::IrregularSeries;
use crate::spline::{fit_control_path, ControlPath};

/// Inference batch size; also the unit of parallel work.
const CHUNK: usize = 32;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NcdeReport {
    /// Observed-point reconstruction loss before training, then per epoch.
    pub losses: Vec<f64>,
}

/// Final routing weights of every training sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainedWeights {
    pub ids: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

struct Prepared<S> {
    path: ControlPath<S>,
    router_in: Vec<S>,
    /// `len × M`, zero where unobserved.
    target: Vec<S>,
    mask: Vec<S>,
}

fn prepare<S: Scalar>(model: &MoeNcde<S>, s: &IrregularSeries) -> Result<Prepared<S>> {
    let path = fit_control_path::<S>(s)?;
    let router_in = model.router_input(&path)?;
    let mut target = Vec::with_capacity(s.len() * s.channels());
    let mut mask = Vec::with_capacity(target.capacity());
    for (row, m) in s.values().iter().zip(s.mask()) {
        for (&v, &o) in row.iter().zip(m) {
            target.push(if o { S::lit(v) } else { S::zero() });
            mask.push(if o { S::one() } else { S::zero() });
        }
    }
    Ok(Prepared {
        path,
        router_in,
        target,
        mask,
    })
}

/// Indices grouped by identical time grids, in a deterministic order.
fn group_by_grid(data: &[IrregularSeries]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        let key = s.times().iter().map(|t| t.to_bits()).collect();
        groups.entry(key).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Routing weights on the tape for a batch, `batch × N_e`.
fn routed<S: Scalar>(tape: &mut Tape<S>, bound: &BoundModel, batch: &[&Prepared<S>]) -> Result<Var> {
    let cols = batch[0].router_in.len();
    let data = batch.iter().flat_map(|p| p.router_in.iter().copied()).collect();
    let x = tape.constant(Tensor::matrix(batch.len(), cols, data)?);
    let logits = bound.router.forward(tape, x)?;
    Ok(tape.softmax(logits))
}

fn batch_loss<S: Scalar>(
    model: &MoeNcde<S>,
    tape: &mut Tape<S>,
    bound: &BoundModel,
    batch: &[&Prepared<S>],
) -> Result<(Var, f64)> {
    let s = routed(tape, bound, batch)?;
    let paths: Vec<&ControlPath<S>> = batch.iter().map(|p| &p.path).collect();
    let z0 = model.initial_state(tape, bound, &paths)?;
    let grid = paths[0].grid().to_vec();
    let states = cde_integrate(
        tape,
        |t, z, dx| bound.experts.field(t, z, s, dx),
        z0,
        &paths,
        model.substeps(),
        &grid,
    )?;
    let z = tape.concat_rows(&states)?;
    let out = bound.readout.forward(tape, z)?;

    let m = model.channels();
    let len = grid.len();
    let mut target = Vec::with_capacity(len * batch.len() * m);
    let mut mask = Vec::with_capacity(target.capacity());
    for i in 0..len {
        for p in batch {
            target.extend_from_slice(&p.target[i * m..(i + 1) * m]);
            mask.extend_from_slice(&p.mask[i * m..(i + 1) * m]);
        }
    }
    let rows = len * batch.len();
    let observed: f64 = mask.iter().map(|v| v.as_f64()).sum();
    let target = tape.constant(Tensor::matrix(rows, m, target)?);
    let mask = tape.constant(Tensor::matrix(rows, m, mask)?);
    Ok((masked_mse(tape, out, target, mask)?, observed))
}

fn full_loss<S: Scalar>(model: &MoeNcde<S>, prepared: &[Prepared<S>], groups: &[Vec<usize>]) -> Result<f64> {
    let chunks: Vec<Vec<&Prepared<S>>> = groups
        .iter()
        .flat_map(|g| g.chunks(CHUNK).map(|c| c.iter().map(|&i| &prepared[i]).collect()))
        .collect();
    let parts = chunks
        .par_iter()
        .map(|batch| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, false)?;
            let (loss, observed) = batch_loss(model, &mut tape, &bound, batch)?;
            Ok((tape.value(loss).item().as_f64() * observed, observed))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sum, count) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Ok(sum / count.max(1.0))
}

fn diverged(detail: impl Into<String>) -> Error {
    Error::Diverged {
        stage: "moe-ncde",
        detail: detail.into(),
    }
}

impl<S: Scalar> MoeNcde<S> {
    /// Trains experts and router (plus the coupled codec, if present) on the
    /// observed points of `data`; a frozen autoencoder is never touched.
    ///
    /// On divergence the model is rolled back to the last completed epoch and
    /// an error is returned.
    pub fn train(
        &mut self,
        data: &[IrregularSeries],
        cfg: &NcdeConfig,
        seed: u64,
    ) -> Result<(NcdeReport, TrainedWeights)> {
        if data.is_empty() {
            return Err(Error::contract("dynamics training needs a non-empty dataset"));
        }
        if cfg.batch == 0 {
            return Err(Error::Config("dynamics batch size must be positive".into()));
        }
        let prepared = data.iter().map(|s| prepare(self, s)).collect::<Result<Vec<_>>>()?;
        let groups = group_by_grid(data);
        let mut rng = rng::stream(seed, streams::NCDE);
        let mut adam = Adam::<S>::new(cfg.lr);
        let mut losses = vec![full_loss(self, &prepared, &groups)?];
        log::info!("moe-ncde initial loss {:.4e}", losses[0]);

        for epoch in 0..cfg.epochs {
            let snapshot = self.clone();
            let mut batches: Vec<Vec<usize>> = Vec::new();
            for g in &groups {
                let mut g = g.clone();
                g.shuffle(&mut rng);
                batches.extend(g.chunks(cfg.batch).map(<[usize]>::to_vec));
            }
            batches.shuffle(&mut rng);
            let (mut sum, mut count) = (0.0, 0.0);
            for idx in &batches {
                let batch: Vec<&Prepared<S>> = idx.iter().map(|&i| &prepared[i]).collect();
                let step = self.train_step(&mut adam, &batch, cfg.grad_clip);
                match step {
                    Ok((loss, observed)) => {
                        sum += loss * observed;
                        count += observed;
                    }
                    Err(e) => {
                        *self = snapshot;
                        return Err(diverged(format!("epoch {epoch}: {e}")));
                    }
                }
            }
            let mean = sum / count.max(1.0);
            log::debug!("moe-ncde epoch {epoch} loss {mean:.4e}");
            losses.push(mean);
        }

        let weights = prepared
            .par_iter()
            .map(|p| Ok(self.route_path(&p.path)?.weights.iter().map(|w| w.as_f64()).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let ids = data.iter().map(|s| s.id().to_string()).collect();
        Ok((NcdeReport { losses }, TrainedWeights { ids, weights }))
    }

    fn train_step(&mut self, adam: &mut Adam<S>, batch: &[&Prepared<S>], clip: f64) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true)?;
        let (loss, observed) = batch_loss(self, &mut tape, &bound, batch)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(diverged(format!("loss became {value}")));
        }
        let grads = tape.backward(loss)?;
        let mut grads: Vec<Tensor<S>> = bound
            .trainable
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.value(v)))
            .collect();
        if clip > 0.0 {
            clip_global_norm(&mut grads, S::lit(clip));
        }
        adam.step(self.parameters_mut(), &grads)?;
        Ok((value, observed))
    }

    /// Observed-point reconstruction loss over `data`.
    pub fn reconstruction_loss(&self, data: &[IrregularSeries]) -> Result<f64> {
        let prepared = data.iter().map(|s| prepare(self, s)).collect::<Result<Vec<_>>>()?;
        full_loss(self, &prepared, &group_by_grid(data))
    }

    /// Decoded values of every sample on its own grid, routed by the model.
    pub fn impute(&self, series: &IrregularSeries) -> Result<IrregularSeries> {
        Ok(self.impute_dataset(std::slice::from_ref(series))?.remove(0))
    }

    pub fn impute_dataset(&self, data: &[IrregularSeries]) -> Result<Vec<IrregularSeries>> {
        let chunks: Vec<Vec<usize>> = group_by_grid(data)
            .into_iter()
            .flat_map(|g| g.chunks(CHUNK).map(<[usize]>::to_vec).collect::<Vec<_>>())
            .collect();
        let solved = chunks
            .par_iter()
            .map(|idx| {
                let paths = idx
                    .iter()
                    .map(|&i| fit_control_path::<S>(&data[i]))
                    .collect::<Result<Vec<_>>>()?;
                let weights = paths
                    .iter()
                    .map(|p| Ok(self.route_path(p)?.weights))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&ControlPath<S>> = paths.iter().collect();
                let w: Vec<&[S]> = weights.iter().map(Vec::as_slice).collect();
                let grid = refs[0].grid().to_vec();
                let out = self.solve_batch(&w, &refs, &grid, true)?;
                Ok(idx.iter().copied().zip(out).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out: Vec<Option<IrregularSeries>> = vec![None; data.len()];
        for (i, rows) in solved.into_iter().flatten() {
            let values = rows
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.as_f64()).collect())
                .collect();
            out[i] = Some(IrregularSeries::fully_observed(
                data[i].id(),
                data[i].times().to_vec(),
                values,
            )?);
        }
        Ok(out.into_iter().map(|s| s.expect("every sample solved")).collect())
    }
}
