//! Minimal dense numerics for the diffmn workspace: tensors, an eager
//! reverse-mode tape, MLP and GRU layers, and Adam.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the crate-root
//! aliases fix the precision to `f64`, which is what the rest of the
//! workspace uses.

pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{gradcheck, GradCheck};
pub use nn::{gru_cell, mlp_forward, Activation, BoundGru, BoundMlp, Parameterized};
pub use optim::clip_global_norm;
pub use scalar::Scalar;
pub use tape::{softmax_rows, Var};

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tape::Tape<f64>;
pub type Gradients = tape::Gradients<f64>;
pub type Mlp = nn::Mlp<f64>;
pub type Dense = nn::Dense<f64>;
pub type GruCell = nn::GruCell<f64>;
pub type Adam = optim::Adam<f64>;
