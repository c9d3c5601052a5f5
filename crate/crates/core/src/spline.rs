//! Natural cubic spline control paths.
//!
//! Each data channel is interpolated through its own observed knots, so a
//! channel's missing timesteps are filled by its spline. The path carries an
//! extra identity channel `t ↦ t` after the data channels.

use diffmn_nn::Scalar;

use crate::error::{Error, Result};
use crate::series::IrregularSeries;

/// Cubic on `[x_k, x_{k+1}]`: `a + b·u + c·u² + d·u³` with `u = t − x_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece<S> {
    pub a: S,
    pub b: S,
    pub c: S,
    pub d: S,
}

/// Natural cubic spline of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpline<S> {
    knots: Vec<S>,
    pieces: Vec<Piece<S>>,
    /// Value at the last knot; the final piece only covers up to it.
    last_value: S,
}

impl<S: Scalar> ChannelSpline<S> {
    /// Fits through `(knots[i], values[i])`. One knot gives a constant path,
    /// two a straight line.
    pub fn fit(knots: &[S], values: &[S]) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::contract(format!(
                "spline needs matching non-empty knots and values, got {} and {}",
                knots.len(),
                values.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("spline knots must be strictly increasing"));
        }
        let n = knots.len();
        let second = natural_second_derivatives(knots, values);
        let six = S::lit(6.0);
        let two = S::lit(2.0);
        let pieces = (0..n.saturating_sub(1))
            .map(|k| {
                let h = knots[k + 1] - knots[k];
                let (m0, m1) = (second[k], second[k + 1]);
                Piece {
                    a: values[k],
                    b: (values[k + 1] - values[k]) / h - h * (two * m0 + m1) / six,
                    c: m0 / two,
                    d: (m1 - m0) / (six * h),
                }
            })
            .collect();
        Ok(Self {
            knots: knots.to_vec(),
            pieces,
            last_value: values[n - 1],
        })
    }

    pub fn knots(&self) -> &[S] {
        &self.knots
    }

    pub fn pieces(&self) -> &[Piece<S>] {
        &self.pieces
    }

    /// Locates `t`: `Inside(k, u)` on piece `k`, or a linear run-off with
    /// the anchor value, slope and offset.
    fn locate(&self, t: S) -> Loc<S> {
        let n = self.knots.len();
        if n == 1 {
            return Loc::Linear(self.last_value, S::zero(), S::zero());
        }
        let first = self.knots[0];
        let last = self.knots[n - 1];
        if t < first {
            return Loc::Linear(self.pieces[0].a, self.pieces[0].b, t - first);
        }
        if t > last {
            let (value, slope) = self.end_state();
            return Loc::Linear(value, slope, t - last);
        }
        let k = self.knots.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
        Loc::Inside(k, t - self.knots[k])
    }

    fn end_state(&self) -> (S, S) {
        let p = self.pieces.last().expect("at least two knots");
        let h = self.knots[self.knots.len() - 1] - self.knots[self.knots.len() - 2];
        let slope = p.b + S::lit(2.0) * p.c * h + S::lit(3.0) * p.d * h * h;
        (self.last_value, slope)
    }

    pub fn eval(&self, t: S) -> S {
        match self.locate(t) {
            Loc::Linear(v, slope, off) => v + slope * off,
            Loc::Inside(k, u) => {
                let p = &self.pieces[k];
                p.a + u * (p.b + u * (p.c + u * p.d))
            }
        }
    }

    pub fn deriv(&self, t: S) -> S {
        match self.locate(t) {
            Loc::Linear(_, slope, _) => slope,
            Loc::Inside(k, u) => {
                let p = &self.pieces[k];
                p.b + u * (S::lit(2.0) * p.c + S::lit(3.0) * p.d * u)
            }
        }
    }

    pub fn second_deriv(&self, t: S) -> S {
        match self.locate(t) {
            Loc::Linear(..) => S::zero(),
            Loc::Inside(k, u) => {
                let p = &self.pieces[k];
                S::lit(2.0) * p.c + S::lit(6.0) * p.d * u
            }
        }
    }
}

enum Loc<S> {
    Inside(usize, S),
    Linear(S, S, S),
}

/// Second derivatives at the knots with zero curvature at both ends, by the
/// Thomas algorithm on the interior tridiagonal system.
fn natural_second_derivatives<S: Scalar>(x: &[S], y: &[S]) -> Vec<S> {
    let n = x.len();
    let mut m = vec![S::zero(); n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    let six = S::lit(6.0);
    let two = S::lit(2.0);
    let mut diag = vec![S::zero(); inner];
    let mut upper = vec![S::zero(); inner];
    let mut rhs = vec![S::zero(); inner];
    let mut lower = vec![S::zero(); inner];
    for i in 0..inner {
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        lower[i] = h0;
        diag[i] = two * (h0 + h1);
        upper[i] = h1;
        rhs[i] = six * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
    }
    for i in 1..inner {
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        let prev = rhs[i - 1];
        rhs[i] -= w * prev;
    }
    m[inner] = rhs[inner - 1] / diag[inner - 1];
    for i in (0..inner - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

/// Continuous path `X(t) ∈ ℝ^{M+1}` of one sample: one spline per data
/// channel followed by the time channel. `M = 0` is a pure time path.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPath<S> {
    channels: Vec<ChannelSpline<S>>,
    grid: Vec<S>,
}

impl<S: Scalar> ControlPath<S> {
    pub fn from_channels(channels: Vec<ChannelSpline<S>>, grid: Vec<S>) -> Result<Self> {
        if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("control path grid must be non-empty and increasing"));
        }
        Ok(Self { channels, grid })
    }

    /// Number of data channels `M`.
    pub fn data_channels(&self) -> usize {
        self.channels.len()
    }

    /// Path dimension `M + 1`.
    pub fn dim(&self) -> usize {
        self.channels.len() + 1
    }

    /// The sample's timestamps, observed or not.
    pub fn grid(&self) -> &[S] {
        &self.grid
    }

    pub fn channel(&self, i: usize) -> &ChannelSpline<S> {
        &self.channels[i]
    }

    fn check_time(t: S) -> Result<()> {
        if t.is_nan() {
            Err(Error::contract("control path evaluated at NaN"))
        } else {
            Ok(())
        }
    }

    pub fn eval(&self, t: S) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: S, out: &mut [S]) -> Result<()> {
        Self::check_time(t)?;
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c.eval(t);
        }
        out[self.channels.len()] = t;
        Ok(())
    }

    pub fn deriv(&self, t: S) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.dim()];
        self.deriv_into(t, &mut out)?;
        Ok(out)
    }

    pub fn deriv_into(&self, t: S, out: &mut [S]) -> Result<()> {
        Self::check_time(t)?;
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c.deriv(t);
        }
        out[self.channels.len()] = S::one();
        Ok(())
    }

    /// Data-channel values at every grid time, row-major `len × M`.
    pub fn filled_grid(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.grid.len() * self.channels.len());
        for &t in &self.grid {
            out.extend(self.channels.iter().map(|c| c.eval(t)));
        }
        out
    }
}

/// Fits every data channel of `series` through its observed points.
pub fn fit_control_path<S: Scalar>(series: &IrregularSeries) -> Result<ControlPath<S>> {
    let channels = (0..series.channels())
        .map(|c| {
            let (ts, vs): (Vec<S>, Vec<S>) = series.observed(c).map(|(t, v)| (S::lit(t), S::lit(v))).unzip();
            if ts.is_empty() {
                return Err(Error::UnfitChannel {
                    id: series.id().to_string(),
                    channel: c,
                });
            }
            ChannelSpline::fit(&ts, &vs)
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = series.times().iter().map(|&t| S::lit(t)).collect();
    ControlPath::from_channels(channels, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_are_linear() {
        let s = ChannelSpline::<f64>::fit(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!((s.eval(0.5) - 0.5).abs() < 1e-15);
        for t in [-0.3, 0.0, 0.2, 0.9, 1.0, 1.4] {
            assert!((s.deriv(t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_knot_is_constant() {
        let s = ChannelSpline::fit(&[0.4], &[2.5]).unwrap();
        for t in [0.0, 0.4, 1.0] {
            assert_eq!(s.eval(t), 2.5);
            assert_eq!(s.deriv(t), 0.0);
        }
    }

    #[test]
    fn empty_channel_is_named() {
        let series = IrregularSeries::new(
            "x",
            vec![0.0, 1.0],
            vec![vec![1.0, 0.0], vec![2.0, 0.0]],
            vec![vec![true, false], vec![true, false]],
        )
        .unwrap();
        match fit_control_path::<f64>(&series) {
            Err(Error::UnfitChannel { channel, .. }) => assert_eq!(channel, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn time_channel_is_identity_and_nan_rejected() {
        let series =
            IrregularSeries::fully_observed("t", vec![0.0, 0.5, 1.0], vec![vec![0.0], vec![1.0], vec![0.0]]).unwrap();
        let path = fit_control_path::<f64>(&series).unwrap();
        assert_eq!(path.eval(0.3).unwrap()[1], 0.3);
        assert_eq!(path.deriv(0.3).unwrap()[1], 1.0);
        assert!(path.eval(f64::NAN).is_err());
    }
}
