mod gru;
mod init;
mod mlp;

pub use gru::{gru_cell, BoundGru, GruCell};
pub use init::xavier_uniform;
pub use mlp::{mlp_forward, Activation, BoundMlp, Dense, Mlp};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything that owns trainable tensors in a fixed, named order.
///
/// The order of `parameters` and `parameters_mut` must agree; optimizers and
/// checkpoints rely on it.
pub trait Parameterized<S: Scalar> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)>;
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Order-sensitive FNV-1a digest over the exact bit patterns.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in self.parameters() {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
            for &x in t.data() {
                for b in x.as_f64().to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
