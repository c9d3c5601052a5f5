use rand::Rng;

use super::{xavier_uniform, Parameterized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<S: Scalar>(self, tape: &mut Tape<S>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Fully connected layer `act(x·W + b)` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub activation: Activation,
}

impl<S: Scalar> Dense<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>, activation: Activation) -> Result<Self> {
        let (_, out) = weight.dims2();
        if weight.shape().len() != 2 || bias.len() != out {
            return Err(Error::shape("Dense::new", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: xavier_uniform(fan_in, fan_out, rng),
            bias: Tensor::zeros(&[fan_out]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Multilayer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    layers: Vec<Dense<S>>,
}

/// An [`Mlp`] whose tensors have been placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var, Activation)>,
    input_dim: usize,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(layers: Vec<Dense<S>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape("Mlp::new", pair[0].weight.shape(), pair[1].weight.shape()));
            }
        }
        Ok(Self { layers })
    }

    /// Xavier-initialized MLP through `dims` (`dims[0]` in, last out).
    pub fn xavier<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::xavier(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<S>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.leaf(l.weight.clone(), trainable);
                let b = tape.leaf(l.bias.clone(), trainable);
                (w, b, l.activation)
            })
            .collect();
        BoundMlp {
            layers,
            input_dim: self.input_dim(),
        }
    }

    /// Evaluates on a scratch tape and returns the output value.
    pub fn infer(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = mlp_forward(self, x, &mut tape)?;
        Ok(tape.value(y).clone())
    }
}

impl BoundMlp {
    /// Wraps `(weight, bias, activation)` triples already on a tape.
    pub fn from_vars(layers: Vec<(Var, Var, Activation)>, input_dim: usize) -> Self {
        Self { layers, input_dim }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, input: Var) -> Result<Var> {
        let cols = tape.value(input).cols();
        if cols != self.input_dim {
            return Err(Error::shape(
                "mlp_forward",
                tape.value(input).shape(),
                &[self.input_dim],
            ));
        }
        let mut h = input;
        for &(w, b, act) in &self.layers {
            let lin = tape.matmul(h, w)?;
            let lin = tape.add_bias(lin, b)?;
            h = act.apply(tape, lin);
        }
        Ok(h)
    }

    /// Weight and bias handles in [`Parameterized::parameters`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}

/// Binds `params` as trainable leaves and runs them on `input`.
pub fn mlp_forward<S: Scalar>(params: &Mlp<S>, input: Var, tape: &mut Tape<S>) -> Result<Var> {
    params.bind(tape, true).forward(tape, input)
}

impl<S: Scalar> Parameterized<S> for Mlp<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), &l.weight),
                    (format!("layer{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), &mut l.weight),
                    (format!("layer{i}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }
}
