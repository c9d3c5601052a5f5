use rand::Rng;

use super::{xavier_uniform, Parameterized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gated recurrent unit.
///
/// Gate blocks are packed column-wise in the order reset, update, candidate:
///
/// ```text
/// r  = σ(x·Wxr + bxr + h·Whr + bhr)
/// u  = σ(x·Wxu + bxu + h·Whu + bhu)
/// n  = tanh(x·Wxn + bxn + r ⊙ (h·Whn + bhn))
/// h' = (1 − u) ⊙ h + u ⊙ n
/// ```
///
/// An update gate saturated at 1 replaces the state with the candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell<S> {
    pub w_input: Tensor<S>,
    pub b_input: Tensor<S>,
    pub w_hidden: Tensor<S>,
    pub b_hidden: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct BoundGru {
    w_input: Var,
    b_input: Var,
    w_hidden: Var,
    b_hidden: Var,
    input_dim: usize,
    hidden_dim: usize,
}

impl<S: Scalar> GruCell<S> {
    pub fn xavier<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            w_input: xavier_uniform(input_dim, 3 * hidden_dim, rng),
            b_input: Tensor::zeros(&[3 * hidden_dim]),
            w_hidden: xavier_uniform(hidden_dim, 3 * hidden_dim, rng),
            b_hidden: Tensor::zeros(&[3 * hidden_dim]),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_input: Tensor::zeros(&[input_dim, 3 * hidden_dim]),
            b_input: Tensor::zeros(&[3 * hidden_dim]),
            w_hidden: Tensor::zeros(&[hidden_dim, 3 * hidden_dim]),
            b_hidden: Tensor::zeros(&[3 * hidden_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> BoundGru {
        BoundGru {
            w_input: tape.leaf(self.w_input.clone(), trainable),
            b_input: tape.leaf(self.b_input.clone(), trainable),
            w_hidden: tape.leaf(self.w_hidden.clone(), trainable),
            b_hidden: tape.leaf(self.b_hidden.clone(), trainable),
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
        }
    }
}

impl BoundGru {
    /// Wraps tensors that are already on a tape, in `GruCell` field order.
    pub fn from_vars(vars: [Var; 4], input_dim: usize, hidden_dim: usize) -> Self {
        let [w_input, b_input, w_hidden, b_hidden] = vars;
        Self {
            w_input,
            b_input,
            w_hidden,
            b_hidden,
            input_dim,
            hidden_dim,
        }
    }

    pub fn step<S: Scalar>(&self, tape: &mut Tape<S>, hidden: Var, input: Var) -> Result<Var> {
        let (hv, xv) = (tape.value(hidden), tape.value(input));
        if xv.cols() != self.input_dim || hv.cols() != self.hidden_dim || hv.rows() != xv.rows() {
            return Err(Error::shape("gru_cell", hv.shape(), xv.shape()));
        }
        let h = self.hidden_dim;
        let gx = tape.matmul(input, self.w_input)?;
        let gx = tape.add_bias(gx, self.b_input)?;
        let gh = tape.matmul(hidden, self.w_hidden)?;
        let gh = tape.add_bias(gh, self.b_hidden)?;

        let xr = tape.slice_cols(gx, 0, h)?;
        let hr = tape.slice_cols(gh, 0, h)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);

        let xu = tape.slice_cols(gx, h, h)?;
        let hu = tape.slice_cols(gh, h, h)?;
        let u = tape.add(xu, hu)?;
        let u = tape.sigmoid(u);

        let xn = tape.slice_cols(gx, 2 * h, h)?;
        let hn = tape.slice_cols(gh, 2 * h, h)?;
        let gated = tape.mul(r, hn)?;
        let n = tape.add(xn, gated)?;
        let n = tape.tanh(n);

        let delta = tape.sub(n, hidden)?;
        let step = tape.mul(u, delta)?;
        tape.add(hidden, step)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_input, self.b_input, self.w_hidden, self.b_hidden]
    }
}

/// One recurrence step outside of any training loop.
pub fn gru_cell<S: Scalar>(params: &GruCell<S>, hidden: &Tensor<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let cell = params.bind(&mut tape, false);
    let h = tape.constant(hidden.clone());
    let x = tape.constant(input.clone());
    let out = cell.step(&mut tape, h, x)?;
    Ok(tape.value(out).clone())
}

impl<S: Scalar> Parameterized<S> for GruCell<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        vec![
            ("w_input".into(), &self.w_input),
            ("b_input".into(), &self.b_input),
            ("w_hidden".into(), &self.w_hidden),
            ("b_hidden".into(), &self.b_hidden),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![
            ("w_input".into(), &mut self.w_input),
            ("b_input".into(), &mut self.b_input),
            ("w_hidden".into(), &mut self.w_hidden),
            ("b_hidden".into(), &mut self.b_hidden),
        ]
    }
}
