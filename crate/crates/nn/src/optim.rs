//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: S::lit(lr),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Entries whose gradient is exactly zero are left
    /// untouched, moments included.
    pub fn step(&mut self, params: Vec<(String, &mut Tensor<S>)>, grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "adam got {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::Diverged { param: name.clone() });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len() || self.first.iter().zip(grads).any(|(m, g)| m.shape() != g.shape()) {
            return Err(Error::contract("adam moment shapes changed between steps"));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);

        for (i, (_, p)) in params.into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                if gj == S::zero() {
                    continue;
                }
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: S) -> S {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&x| x * x)
        .sum::<S>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= c;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_but_advances_step() {
        let mut p = Tensor::<f64>::vector(vec![1.0, -2.0]);
        let mut opt = Adam::new(1e-3);
        opt.step(vec![("p".into(), &mut p)], &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        for g in [3.0, -0.02] {
            let mut p = Tensor::<f64>::scalar(0.5);
            let mut opt = Adam::new(1e-3);
            opt.step(vec![("p".into(), &mut p)], &[Tensor::scalar(g)]).unwrap();
            let expected = 0.5 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((p.item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut a = Tensor::<f64>::scalar(0.0);
        let mut b = Tensor::<f64>::scalar(0.0);
        let mut opt = Adam::new(1e-3);
        let err = opt
            .step(
                vec![("alpha".into(), &mut a), ("beta".into(), &mut b)],
                &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)],
            )
            .unwrap_err();
        assert_eq!(err, Error::Diverged { param: "beta".into() });
        assert_eq!(a.item(), 0.0, "no partial update on failure");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [1.5, -0.5, 2.0];
        let loss = |p: &Tensor<f64>| -> f64 { p.data().iter().zip(&target).map(|(x, t)| (x - t).powi(2)).sum() };
        let mut p = Tensor::<f64>::vector(vec![0.0; 3]);
        let initial = loss(&p);
        let mut opt = Adam::new(5e-2);
        for _ in 0..200 {
            let g: Vec<f64> = p.data().iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.step(vec![("p".into(), &mut p)], &[Tensor::vector(g)]).unwrap();
        }
        assert!(loss(&p) * 10.0 < initial, "{} vs {}", loss(&p), initial);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::<f64>::vector(vec![3.0, 4.0])];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
