//! Fixed-step RK4 for `dz = f(z) dX`, recorded on a tape so gradients flow
//! through every stage.

use diffmn_nn::tape::Tape;
use diffmn_nn::tensor::Tensor;
use diffmn_nn::{Scalar, Var};

use crate::error::{Error, Result};
use crate::spline::ControlPath;

/// Step points: every grid interval split into `substeps` equal steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice<S> {
    points: Vec<S>,
    substeps: usize,
}

impl<S: Scalar> Lattice<S> {
    pub fn new(grid: &[S], substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::Config("solver substeps must be positive".into()));
        }
        if grid.is_empty() {
            return Err(Error::contract("solver grid is empty"));
        }
        let mut points = Vec::with_capacity((grid.len() - 1) * substeps + 1);
        for w in grid.windows(2) {
            let h = (w[1] - w[0]) / S::lit(substeps as f64);
            points.extend((0..substeps).map(|j| w[0] + S::lit(j as f64) * h));
        }
        points.push(grid[grid.len() - 1]);
        Ok(Self { points, substeps })
    }

    pub fn points(&self) -> &[S] {
        &self.points
    }

    /// Lattice index of grid time `k`.
    pub fn grid_index(&self, k: usize) -> usize {
        k * self.substeps
    }

    /// Index of the last point not after `t`, or 0 before the start.
    fn anchor(&self, t: S) -> usize {
        self.points.partition_point(|&p| p <= t).saturating_sub(1)
    }
}

/// Batched control-path derivatives as tape constants.
struct Drive<'a, S> {
    paths: &'a [&'a ControlPath<S>],
    dim: usize,
}

impl<S: Scalar> Drive<'_, S> {
    fn at(&self, tape: &mut Tape<S>, t: S) -> Result<Var> {
        let mut data = vec![S::zero(); self.paths.len() * self.dim];
        for (row, p) in data.chunks_mut(self.dim).zip(self.paths) {
            p.deriv_into(t, row)?;
        }
        Ok(tape.constant(Tensor::matrix(self.paths.len(), self.dim, data)?))
    }
}

fn rk4_step<S, F>(tape: &mut Tape<S>, f: &mut F, z: Var, h: S, dx: [Var; 3]) -> Result<Var>
where
    S: Scalar,
    F: FnMut(&mut Tape<S>, Var, Var) -> Result<Var>,
{
    let half = h / S::lit(2.0);
    let k1 = f(tape, z, dx[0])?;
    let a = tape.add_scaled(z, k1, half)?;
    let k2 = f(tape, a, dx[1])?;
    let b = tape.add_scaled(z, k2, half)?;
    let k3 = f(tape, b, dx[1])?;
    let c = tape.add_scaled(z, k3, h)?;
    let k4 = f(tape, c, dx[2])?;
    let acc = tape.add_scaled(k1, k2, S::lit(2.0))?;
    let acc = tape.add_scaled(acc, k3, S::lit(2.0))?;
    let acc = tape.add(acc, k4)?;
    Ok(tape.add_scaled(z, acc, h / S::lit(6.0))?)
}

fn check_finite<S: Scalar>(tape: &Tape<S>, z: Var, t: S) -> Result<()> {
    if tape.value(z).all_finite() {
        Ok(())
    } else {
        Err(Error::BlowUp { time: t.as_f64() })
    }
}

/// Integrates `dz/dt = f(z, dX/dt)` for a batch of paths that share one grid,
/// starting from `z0` (`batch × d`) at the first grid time.
///
/// `f` receives the current state and the batched derivative `batch × (M+1)`.
/// Returns the state at each query time. Queries on the lattice are read off
/// the main trajectory; others get one extra RK4 step from the nearest
/// preceding lattice point, which leaves the main trajectory untouched.
pub fn cde_integrate<S, F>(
    tape: &mut Tape<S>,
    mut f: F,
    z0: Var,
    paths: &[&ControlPath<S>],
    substeps: usize,
    query: &[S],
) -> Result<Vec<Var>>
where
    S: Scalar,
    F: FnMut(&mut Tape<S>, Var, Var) -> Result<Var>,
{
    let first = paths
        .first()
        .ok_or_else(|| Error::contract("cde_integrate on an empty batch"))?;
    let grid = first.grid();
    if paths.iter().any(|p| p.grid() != grid || p.dim() != first.dim()) {
        return Err(Error::contract("batched paths must share grid and channel count"));
    }
    if tape.value(z0).rows() != paths.len() {
        return Err(Error::contract("initial state rows must match the batch size"));
    }
    if query.iter().any(|q| q.is_nan()) || query.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::contract("query times must be sorted and not NaN"));
    }
    let lattice = Lattice::new(grid, substeps)?;
    let drive = Drive {
        paths,
        dim: first.dim(),
    };
    let pts = lattice.points();
    let last_needed = query.last().map_or(0, |&q| lattice.anchor(q));

    let mut states = Vec::with_capacity(last_needed + 1);
    states.push(z0);
    let mut dx_start = drive.at(tape, pts[0])?;
    let mut starts = vec![dx_start];
    for i in 0..last_needed {
        let (t0, t1) = (pts[i], pts[i + 1]);
        let h = t1 - t0;
        let mid = drive.at(tape, t0 + h / S::lit(2.0))?;
        let end = drive.at(tape, t1)?;
        let z = rk4_step(tape, &mut f, states[i], h, [dx_start, mid, end])?;
        check_finite(tape, z, t1)?;
        states.push(z);
        starts.push(end);
        dx_start = end;
    }

    query
        .iter()
        .map(|&q| {
            let i = lattice.anchor(q);
            if pts[i] == q {
                return Ok(states[i]);
            }
            let h = q - pts[i];
            let mid = drive.at(tape, pts[i] + h / S::lit(2.0))?;
            let end = drive.at(tape, q)?;
            let z = rk4_step(tape, &mut f, states[i], h, [starts[i], mid, end])?;
            check_finite(tape, z, q)?;
            Ok(z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_keeps_grid_times_exact() {
        let grid = [0.0, 0.1, 0.35, 1.0];
        let l = Lattice::new(&grid, 4).unwrap();
        assert_eq!(l.points().len(), 13);
        for (k, g) in grid.iter().enumerate() {
            assert_eq!(l.points()[l.grid_index(k)], *g);
        }
    }
}
