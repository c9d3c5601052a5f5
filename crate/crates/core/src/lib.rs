#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autoencoder;
pub mod diffusion;
pub mod error;
pub mod generate;
pub mod metrics;
pub mod ncde;
pub mod rng;
pub mod series;
pub mod spline;
pub mod synthgen;

pub use error::{Error, Result};
pub use series::IrregularSeries;

pub type ControlPath = spline::ControlPath<f64>;
pub type ChannelSpline = spline::ChannelSpline<f64>;
