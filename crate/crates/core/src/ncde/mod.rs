//! Mixture-of-experts neural CDE.
//!
//! The latent state follows `dz = Σ_i s_i f_i(z) dX`, where each expert `f_i`
//! maps `z ∈ ℝ^d` to a `d × (M+1)` matrix and `s` is the per-sample softmax
//! routing computed from the sample's spline-filled grid values. The initial
//! state and the readout go through a frozen channel-wise autoencoder, or
//! through jointly trained networks in the coupled variant.

mod solver;
mod train;

pub use solver::{cde_integrate, Lattice};
pub use train::{NcdeReport, TrainedWeights};

use diffmn_nn::nn::{Mlp, Parameterized};
use diffmn_nn::tape::Tape;
use diffmn_nn::tensor::Tensor;
use diffmn_nn::{softmax_rows, Activation, BoundMlp, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::ChannelAutoencoder;
use crate::error::{Error, Result};
use crate::series::IrregularSeries;
use crate::spline::{fit_control_path, ControlPath};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// One expert as deep as the whole bank.
    NoMoe,
    /// Trainable initial-state and readout networks instead of the frozen
    /// autoencoder.
    NoDecoupled,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no-moe" => Ok(Self::NoMoe),
            "no-decoupled" => Ok(Self::NoDecoupled),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcdeConfig {
    pub experts: usize,
    pub expert_hidden: usize,
    /// Dense layers per expert.
    pub expert_layers: usize,
    pub router_hidden: usize,
    /// RK4 steps per grid interval.
    pub substeps: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub grad_clip: f64,
    pub variant: Variant,
    /// Hidden width of the coupled variant's initial-state and readout nets.
    pub coupled_hidden: usize,
}

impl Default for NcdeConfig {
    fn default() -> Self {
        Self {
            experts: 4,
            expert_hidden: 32,
            expert_layers: 2,
            router_hidden: 32,
            substeps: 4,
            epochs: 60,
            lr: 1e-3,
            batch: 32,
            grad_clip: 1.0,
            variant: Variant::Full,
            coupled_hidden: 32,
        }
    }
}

impl NcdeConfig {
    /// `(count, layers)` of the expert bank after applying the variant.
    pub fn expert_shape(&self) -> (usize, usize) {
        match self.variant {
            Variant::NoMoe => (1, self.experts * self.expert_layers),
            _ => (self.experts, self.expert_layers),
        }
    }
}

/// Initial-state and readout maps.
#[derive(Clone, Debug, PartialEq)]
pub enum Codec<S> {
    Frozen(ChannelAutoencoder<S>),
    Joint { init: Mlp<S>, readout: Mlp<S> },
}

impl<S: Scalar> Codec<S> {
    fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> (BoundMlp, BoundMlp) {
        match self {
            Codec::Frozen(ae) => {
                let b = ae.bind_frozen(tape);
                (b.encoder, b.decoder)
            }
            Codec::Joint { init, readout } => (init.bind(tape, trainable), readout.bind(tape, trainable)),
        }
    }

    fn is_trainable(&self) -> bool {
        matches!(self, Codec::Joint { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouterOutput<S> {
    pub logits: Vec<S>,
    pub weights: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory<S> {
    pub times: Vec<S>,
    /// One latent vector per query time.
    pub states: Vec<Vec<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoeNcde<S> {
    experts: Vec<Mlp<S>>,
    router: Mlp<S>,
    codec: Codec<S>,
    substeps: usize,
    grid_len: usize,
}

/// Expert bank bound to a tape as one wide network.
#[derive(Clone, Debug)]
pub struct BoundExperts {
    layers: Vec<(Var, Var, Activation)>,
    count: usize,
    block: usize,
    leaves: Vec<Var>,
}

impl BoundExperts {
    /// Fuses per-expert `(weight, bias, activation)` layers already on the
    /// tape. Every expert must have the same architecture.
    pub fn fuse<S: Scalar>(tape: &mut Tape<S>, experts: &[Vec<(Var, Var, Activation)>]) -> Result<Self> {
        let count = experts.len();
        let depth = experts.first().map_or(0, Vec::len);
        if count == 0 || depth == 0 || experts.iter().any(|e| e.len() != depth) {
            return Err(Error::contract("experts must be non-empty and share one architecture"));
        }
        let leaves = experts
            .iter()
            .flat_map(|e| e.iter().flat_map(|&(w, b, _)| [w, b]))
            .collect();
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let ws: Vec<Var> = experts.iter().map(|e| e[l].0).collect();
            let bs: Vec<Var> = experts.iter().map(|e| e[l].1).collect();
            let act = experts[0][l].2;
            let (w, b) = if count == 1 {
                (ws[0], bs[0])
            } else if l == 0 {
                (tape.concat_cols(&ws)?, tape.concat_cols(&bs)?)
            } else {
                (tape.concat_rows(&ws)?, tape.concat_cols(&bs)?)
            };
            layers.push((w, b, act));
        }
        let block = tape.value(experts[0][depth - 1].0).cols();
        Ok(Self {
            layers,
            count,
            block,
            leaves,
        })
    }

    /// Leaf handles in expert-major parameter order.
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    /// `Σ_i s_i f_i(z)` flattened row-major, `batch × d(M+1)`.
    pub fn mix<S: Scalar>(&self, tape: &mut Tape<S>, z: Var, s: Var) -> Result<Var> {
        let mut h = z;
        for (l, &(w, b, act)) in self.layers.iter().enumerate() {
            let lin = if l == 0 || self.count == 1 {
                tape.matmul(h, w)?
            } else {
                tape.block_matmul(h, w, self.count)?
            };
            let lin = tape.add_bias(lin, b)?;
            h = act.apply(tape, lin);
        }
        if self.count == 1 {
            return Ok(h);
        }
        let scaled = tape.scale_blocks(h, s, self.block)?;
        Ok(tape.sum_blocks(scaled, self.block)?)
    }

    /// Vector field `Σ_i s_i f_i(z) · dX`.
    pub fn field<S: Scalar>(&self, tape: &mut Tape<S>, z: Var, s: Var, dx: Var) -> Result<Var> {
        let f = self.mix(tape, z, s)?;
        Ok(tape.contract(f, dx)?)
    }
}

/// Handles of a model bound for one forward pass.
pub(crate) struct BoundModel {
    pub experts: BoundExperts,
    pub router: BoundMlp,
    pub init: BoundMlp,
    pub readout: BoundMlp,
    /// Trainable leaves in [`Parameterized::parameters_mut`] order.
    pub trainable: Vec<Var>,
}

fn check_simplex<S: Scalar>(s: &[S]) -> Result<()> {
    let tol = 1e-6;
    let sum: f64 = s.iter().map(|v| v.as_f64()).sum();
    if s.iter().any(|v| !(v.as_f64() >= -tol)) || (sum - 1.0).abs() > tol {
        return Err(Error::contract(format!("routing weights {s:?} are not on the simplex")));
    }
    Ok(())
}

impl<S: Scalar> MoeNcde<S> {
    /// Fresh model for `channels` data channels on a grid of `grid_len` times.
    /// The coupled variant ignores `ae` apart from its latent size.
    pub fn new<R: Rng + ?Sized>(
        ae: ChannelAutoencoder<S>,
        grid_len: usize,
        cfg: &NcdeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.experts == 0 || cfg.expert_layers == 0 {
            return Err(Error::Config("at least one expert with one layer is required".into()));
        }
        if !ae.is_frozen() && cfg.variant != Variant::NoDecoupled {
            return Err(Error::contract(
                "the autoencoder must be frozen before dynamics training",
            ));
        }
        let (m, d) = (ae.channels(), ae.latent());
        let (count, layers) = cfg.expert_shape();
        let mut dims = vec![d];
        dims.extend(std::iter::repeat_n(cfg.expert_hidden, layers - 1));
        dims.push(d * (m + 1));
        let experts = (0..count)
            .map(|_| Mlp::xavier(&dims, Activation::Tanh, Activation::Tanh, rng))
            .collect();
        let router = Mlp::xavier(
            &[grid_len * m, cfg.router_hidden, count],
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        let codec = match cfg.variant {
            Variant::NoDecoupled => Codec::Joint {
                init: Mlp::xavier(&[m, cfg.coupled_hidden, d], Activation::Tanh, Activation::Identity, rng),
                readout: Mlp::xavier(&[d, cfg.coupled_hidden, m], Activation::Tanh, Activation::Identity, rng),
            },
            _ => Codec::Frozen(ae),
        };
        Self::from_parts(experts, router, codec, cfg.substeps, grid_len)
    }

    pub fn from_parts(
        experts: Vec<Mlp<S>>,
        router: Mlp<S>,
        codec: Codec<S>,
        substeps: usize,
        grid_len: usize,
    ) -> Result<Self> {
        let (m, d) = match &codec {
            Codec::Frozen(ae) => (ae.channels(), ae.latent()),
            Codec::Joint { init, readout } => {
                if init.output_dim() != readout.input_dim() || init.input_dim() != readout.output_dim() {
                    return Err(Error::contract("initial-state and readout networks do not match"));
                }
                (init.input_dim(), init.output_dim())
            }
        };
        let first = experts.first().ok_or_else(|| Error::contract("no experts"))?;
        let shape = |e: &Mlp<S>| e.layers().iter().map(|l| l.weight.shape().to_vec()).collect::<Vec<_>>();
        if experts.iter().any(|e| shape(e) != shape(first)) {
            return Err(Error::contract("experts must share one architecture"));
        }
        if first.input_dim() != d || first.output_dim() != d * (m + 1) {
            return Err(Error::contract(format!(
                "expert maps {}→{}, expected {d}→{}",
                first.input_dim(),
                first.output_dim(),
                d * (m + 1)
            )));
        }
        if router.input_dim() != grid_len * m || router.output_dim() != experts.len() {
            return Err(Error::contract(format!(
                "router maps {}→{}, expected {}→{}",
                router.input_dim(),
                router.output_dim(),
                grid_len * m,
                experts.len()
            )));
        }
        if substeps == 0 {
            return Err(Error::Config("solver substeps must be positive".into()));
        }
        Ok(Self {
            experts,
            router,
            codec,
            substeps,
            grid_len,
        })
    }

    pub fn experts(&self) -> &[Mlp<S>] {
        &self.experts
    }

    pub fn router(&self) -> &Mlp<S> {
        &self.router
    }

    pub fn router_mut(&mut self) -> &mut Mlp<S> {
        &mut self.router
    }

    pub fn experts_mut(&mut self) -> &mut [Mlp<S>] {
        &mut self.experts
    }

    pub fn codec(&self) -> &Codec<S> {
        &self.codec
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn set_substeps(&mut self, substeps: usize) -> Result<()> {
        if substeps == 0 {
            return Err(Error::Config("solver substeps must be positive".into()));
        }
        self.substeps = substeps;
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn channels(&self) -> usize {
        self.router.input_dim() / self.grid_len
    }

    pub fn latent(&self) -> usize {
        self.experts[0].input_dim()
    }

    pub(crate) fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<BoundModel> {
        let per_expert: Vec<Vec<(Var, Var, Activation)>> = self
            .experts
            .iter()
            .map(|e| {
                e.layers()
                    .iter()
                    .map(|l| {
                        let w = tape.leaf(l.weight.clone(), trainable);
                        let b = tape.leaf(l.bias.clone(), trainable);
                        (w, b, l.activation)
                    })
                    .collect()
            })
            .collect();
        let experts = BoundExperts::fuse(tape, &per_expert)?;
        let router = self.router.bind(tape, trainable);
        let (init, readout) = self.codec.bind(tape, trainable);
        let mut vars = experts.leaves().to_vec();
        vars.extend(router.vars());
        if self.codec.is_trainable() {
            vars.extend(init.vars());
            vars.extend(readout.vars());
        }
        Ok(BoundModel {
            experts,
            router,
            init,
            readout,
            trainable: if trainable { vars } else { Vec::new() },
        })
    }

    /// Router input: the sample's spline-filled grid values, flattened.
    pub fn router_input(&self, path: &ControlPath<S>) -> Result<Vec<S>> {
        if path.grid().len() != self.grid_len || path.data_channels() != self.channels() {
            return Err(Error::contract(format!(
                "router expects a {}×{} grid, sample has {}×{}",
                self.grid_len,
                self.channels(),
                path.grid().len(),
                path.data_channels()
            )));
        }
        Ok(path.filled_grid())
    }

    pub fn route_path(&self, path: &ControlPath<S>) -> Result<RouterOutput<S>> {
        let input = Tensor::vector(self.router_input(path)?);
        let logits = self.router.infer(&input)?;
        let weights = softmax_rows(&logits).into_data();
        Ok(RouterOutput {
            logits: logits.into_data(),
            weights,
        })
    }

    pub fn route(&self, series: &IrregularSeries) -> Result<RouterOutput<S>> {
        self.route_path(&fit_control_path(series)?)
    }

    /// `Σ_i s_i f_i(z)` as a `d × (M+1)` matrix.
    pub fn moe_dynamics(&self, z: &[S], s: &[S]) -> Result<Tensor<S>> {
        if s.len() != self.num_experts() || z.len() != self.latent() {
            return Err(Error::contract(format!(
                "moe_dynamics needs {} weights and a {}-vector",
                self.num_experts(),
                self.latent()
            )));
        }
        check_simplex(s)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
        let sv = tape.constant(Tensor::matrix(1, s.len(), s.to_vec())?);
        let f = bound.experts.mix(&mut tape, zv, sv)?;
        Ok(tape
            .value(f)
            .clone()
            .reshape(vec![self.latent(), self.channels() + 1])?)
    }

    /// Latent states at `query` for given routing weights, starting from the
    /// encoding of `X(t_0)`.
    pub fn cde_solve(&self, s: &[S], path: &ControlPath<S>, query: &[S]) -> Result<LatentTrajectory<S>> {
        let states = self.solve_batch(&[s], &[path], query, false)?;
        Ok(LatentTrajectory {
            times: query.to_vec(),
            states: states.into_iter().next().expect("one sample"),
        })
    }

    /// Decoded values at `query`, one row per query time.
    pub fn continuous_generate(&self, s: &[S], path: &ControlPath<S>, query: &[S]) -> Result<Vec<Vec<S>>> {
        Ok(self
            .solve_batch(&[s], &[path], query, true)?
            .into_iter()
            .next()
            .expect("one sample"))
    }

    /// Latent (or decoded) trajectories of several samples sharing one grid.
    pub fn solve_batch(
        &self,
        weights: &[&[S]],
        paths: &[&ControlPath<S>],
        query: &[S],
        decode: bool,
    ) -> Result<Vec<Vec<Vec<S>>>> {
        if weights.len() != paths.len() {
            return Err(Error::contract("one weight vector per path is required"));
        }
        for s in weights {
            if s.len() != self.num_experts() {
                return Err(Error::contract("weight vector length differs from the expert count"));
            }
            check_simplex(s)?;
        }
        let b = paths.len();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let s = tape.constant(Tensor::matrix(
            b,
            self.num_experts(),
            weights.iter().flat_map(|w| w.iter().copied()).collect(),
        )?);
        let z0 = self.initial_state(&mut tape, &bound, paths)?;
        let states = cde_integrate(
            &mut tape,
            |t, z, dx| bound.experts.field(t, z, s, dx),
            z0,
            paths,
            self.substeps,
            query,
        )?;
        let mut out = vec![Vec::with_capacity(query.len()); b];
        for z in states {
            let v = if decode {
                bound.readout.forward(&mut tape, z)?
            } else {
                z
            };
            let val = tape.value(v);
            for (i, o) in out.iter_mut().enumerate() {
                o.push(val.row(i).to_vec());
            }
        }
        Ok(out)
    }

    pub(crate) fn initial_state(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundModel,
        paths: &[&ControlPath<S>],
    ) -> Result<Var> {
        let m = self.channels();
        let mut x0 = Vec::with_capacity(paths.len() * m);
        for p in paths {
            if p.data_channels() != m {
                return Err(Error::contract("path channel count differs from the model"));
            }
            let v = p.eval(p.grid()[0])?;
            x0.extend_from_slice(&v[..m]);
        }
        let x0 = tape.constant(Tensor::matrix(paths.len(), m, x0)?);
        Ok(bound.init.forward(tape, x0)?)
    }
}

impl<S: Scalar> Parameterized<S> for MoeNcde<S> {
    /// Trainable tensors: experts, router, then the coupled codec if any.
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, e) in self.experts.iter().enumerate() {
            out.extend(
                e.parameters()
                    .into_iter()
                    .map(|(n, t)| (format!("experts[{i}].{n}"), t)),
            );
        }
        out.extend(
            self.router
                .parameters()
                .into_iter()
                .map(|(n, t)| (format!("router.{n}"), t)),
        );
        if let Codec::Joint { init, readout } = &self.codec {
            out.extend(init.parameters().into_iter().map(|(n, t)| (format!("init.{n}"), t)));
            out.extend(
                readout
                    .parameters()
                    .into_iter()
                    .map(|(n, t)| (format!("readout.{n}"), t)),
            );
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, e) in self.experts.iter_mut().enumerate() {
            out.extend(
                e.parameters_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("experts[{i}].{n}"), t)),
            );
        }
        out.extend(
            self.router
                .parameters_mut()
                .into_iter()
                .map(|(n, t)| (format!("router.{n}"), t)),
        );
        if let Codec::Joint { init, readout } = &mut self.codec {
            out.extend(init.parameters_mut().into_iter().map(|(n, t)| (format!("init.{n}"), t)));
            out.extend(
                readout
                    .parameters_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("readout.{n}"), t)),
            );
        }
        out
    }
}
