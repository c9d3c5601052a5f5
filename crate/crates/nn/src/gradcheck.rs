//! Central finite-difference gradient checking.
//!
//! The numeric side only ever reads forward values, so it is independent of
//! the reverse sweep it validates.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Per-input `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn loss_value<F>(inputs: &[Tensor<f64>], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::contract("gradcheck loss must be scalar"));
    }
    Ok(v.item())
}

/// Compares tape gradients of `build` against central differences with the
/// given `step`, for every entry of every input.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], build: F, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut probe = inputs.to_vec();
    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input);
        let mut numeric = Vec::with_capacity(input.len());
        for j in 0..input.len() {
            let x = input.data()[j];
            probe[i].data_mut()[j] = x + step;
            let up = loss_value(&probe, &build)?;
            probe[i].data_mut()[j] = x - step;
            let down = loss_value(&probe, &build)?;
            probe[i].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * step));
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let denom = na.max(nn);
        relative_errors.push(if denom == 0.0 { 0.0 } else { diff / denom });
    }
    Ok(GradCheck { relative_errors })
}
