//! Eager reverse-mode differentiation over a linear operation record.
//!
//! Every operation computes its value immediately and appends a node. Since a
//! node can only reference earlier nodes, the record is already in topological
//! order and `backward` is a single reverse sweep.
//!
//! Besides the usual primitives the tape carries a few block-structured ops
//! (`block_matmul`, `scale_blocks`, `sum_blocks`, `contract`) that let a bank
//! of same-shaped experts run as one wide layer instead of one node per expert.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddScaled(Var, Var, S),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { src: Var, start: usize, len: usize },
    SumAll(Var),
    ScaleBlocks { x: Var, w: Var, block: usize },
    SumBlocks { x: Var, block: usize },
    Contract { f: Var, u: Var },
    BlockMatMul { x: Var, w: Var, blocks: usize },
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar loss with respect to the leaves that requested them.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor<S>) -> Tensor<S> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn stable_softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that takes part in differentiation.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    /// Adds `bias` (length = column count) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let cols = xv.cols();
        if bv.len() != cols {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let g = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(x, bias), g))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let value = av.zip_map(bv, name, f)?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + c·b`
    pub fn add_scaled(&mut self, a: Var, b: Var, c: S) -> Result<Var> {
        self.binary(a, b, "add_scaled", move |x, y| x + c * y, Op::AddScaled(a, b, c))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x * c);
        let g = self.ng(a);
        self.push(value, Op::Scale(a, c), g)
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let value = self.value(a).map(f);
        let g = self.ng(a);
        self.push(value, op, g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, S::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(S::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, stable_softplus, Op::Softplus(a))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let g = self.ng(a);
        self.push(value, Op::Softmax(a), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape("concat_cols", self.value(*first).shape(), v.shape()));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let g = parts.iter().any(|&p| self.ng(p));
        let value = Tensor::matrix(rows, total, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), g))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let cols = self.value(*first).cols();
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape("concat_rows", self.value(*first).shape(), v.shape()));
            }
            out.extend_from_slice(v.data());
        }
        let rows = out.len() / cols;
        let g = parts.iter().any(|&p| self.ng(p));
        let value = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), g))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(src);
        let (rows, cols) = v.dims2();
        if len == 0 || start + len > cols {
            return Err(Error::shape("slice_cols", v.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(rows, len, out)?;
        let g = self.ng(src);
        Ok(self.push(value, Op::SliceCols { src, start, len }, g))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let g = self.ng(a);
        self.push(value, Op::SumAll(a), g)
    }

    /// `out[r, i·block + j] = x[r, i·block + j] · w[r, i]`
    pub fn scale_blocks(&mut self, x: Var, w: Var, block: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (rows, cols) = xv.dims2();
        let (wr, nb) = wv.dims2();
        if wr != rows || nb * block != cols {
            return Err(Error::shape("scale_blocks", xv.shape(), wv.shape()));
        }
        let mut out = xv.data().to_vec();
        for r in 0..rows {
            for i in 0..nb {
                let s = wv.data()[r * nb + i];
                for o in &mut out[r * cols + i * block..r * cols + (i + 1) * block] {
                    *o *= s;
                }
            }
        }
        let value = Tensor::matrix(rows, cols, out)?;
        let g = self.ng(x) || self.ng(w);
        Ok(self.push(value, Op::ScaleBlocks { x, w, block }, g))
    }

    /// `out[r, j] = Σ_i x[r, i·block + j]`
    pub fn sum_blocks(&mut self, x: Var, block: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if block == 0 || cols % block != 0 {
            return Err(Error::shape("sum_blocks", xv.shape(), &[block]));
        }
        let mut out = vec![S::zero(); rows * block];
        for r in 0..rows {
            let dst = &mut out[r * block..(r + 1) * block];
            for chunk in xv.row(r).chunks(block) {
                for (d, &s) in dst.iter_mut().zip(chunk) {
                    *d += s;
                }
            }
        }
        let value = Tensor::matrix(rows, block, out)?;
        let g = self.ng(x);
        Ok(self.push(value, Op::SumBlocks { x, block }, g))
    }

    /// Row-wise matrix–vector product: each row of `f` holds a `q × w`
    /// matrix (row-major) that is applied to the matching row of `u`.
    pub fn contract(&mut self, f: Var, u: Var) -> Result<Var> {
        let (fv, uv) = (self.value(f), self.value(u));
        let (rows, fc) = fv.dims2();
        let (ur, w) = uv.dims2();
        if ur != rows || fc % w != 0 {
            return Err(Error::shape("contract", fv.shape(), uv.shape()));
        }
        let q = fc / w;
        let mut out = vec![S::zero(); rows * q];
        for r in 0..rows {
            let frow = fv.row(r);
            let urow = uv.row(r);
            for k in 0..q {
                out[r * q + k] = frow[k * w..(k + 1) * w].iter().zip(urow).map(|(&a, &b)| a * b).sum();
            }
        }
        let value = Tensor::matrix(rows, q, out)?;
        let g = self.ng(f) || self.ng(u);
        Ok(self.push(value, Op::Contract { f, u }, g))
    }

    /// Block-diagonal product. `x` is `r × (blocks·a)`, `w` stacks `blocks`
    /// matrices of `a × b` along its rows; block `i` of the output is
    /// `x_i · w_i`.
    pub fn block_matmul(&mut self, x: Var, w: Var, blocks: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (rows, xc) = xv.dims2();
        let (wr, b) = wv.dims2();
        if blocks == 0 || xc % blocks != 0 || wr != xc {
            return Err(Error::shape("block_matmul", xv.shape(), wv.shape()));
        }
        let a = xc / blocks;
        let oc = blocks * b;
        let mut out = vec![S::zero(); rows * oc];
        for i in 0..blocks {
            S::gemm(
                rows,
                a,
                b,
                S::one(),
                (&xv.data()[i * a..], xc as isize, 1),
                (&wv.data()[i * a * b..], b as isize, 1),
                S::zero(),
                (&mut out[i * b..], oc as isize, 1),
            );
        }
        let value = Tensor::matrix(rows, oc, out)?;
        let g = self.ng(x) || self.ng(w);
        Ok(self.push(value, Op::BlockMatMul { x, w, blocks }, g))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; n];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let n = bv.cols();
                if let Some(da) = self.buf(*a, grads) {
                    // dA += dC · Bᵀ
                    S::gemm(
                        m,
                        n,
                        k,
                        S::one(),
                        (gd, n as isize, 1),
                        (bv.data(), 1, n as isize),
                        S::one(),
                        (da, k as isize, 1),
                    );
                }
                if let Some(db) = self.buf(*b, grads) {
                    // dB += Aᵀ · dC
                    S::gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        (av.data(), 1, k as isize),
                        (gd, n as isize, 1),
                        S::one(),
                        (db, n as isize, 1),
                    );
                }
            }
            Op::AddBias(x, b) => {
                if let Some(dx) = self.buf(*x, grads) {
                    axpy(dx, gd, S::one());
                }
                let cols = g.cols();
                if let Some(db) = self.buf(*b, grads) {
                    for row in gd.chunks(cols) {
                        axpy(db, row, S::one());
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.buf(*a, grads) {
                    axpy(da, gd, S::one());
                }
                if let Some(db) = self.buf(*b, grads) {
                    axpy(db, gd, S::one());
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.buf(*a, grads) {
                    axpy(da, gd, S::one());
                }
                if let Some(db) = self.buf(*b, grads) {
                    axpy(db, gd, -S::one());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.buf(*a, grads) {
                    for ((d, &gi), &bi) in da.iter_mut().zip(gd).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.buf(*b, grads) {
                    for ((d, &gi), &ai) in db.iter_mut().zip(gd).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = self.buf(*a, grads) {
                    axpy(da, gd, *c);
                }
            }
            Op::AddScaled(a, b, c) => {
                if let Some(da) = self.buf(*a, grads) {
                    axpy(da, gd, S::one());
                }
                if let Some(db) = self.buf(*b, grads) {
                    axpy(db, gd, *c);
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(da) = self.buf(*a, grads) {
                    for ((d, &gi), &yi) in da.iter_mut().zip(gd).zip(y) {
                        *d += gi * (S::one() - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(da) = self.buf(*a, grads) {
                    for ((d, &gi), &yi) in da.iter_mut().zip(gd).zip(y) {
                        *d += gi * yi * (S::one() - yi);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(da) = self.buf(*a, grads) {
                    for ((d, &gi), &xi) in da.iter_mut().zip(gd).zip(x) {
                        if xi > S::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                if let Some(da) = self.buf(*a, grads) {
                    for ((d, &gi), &xi) in da.iter_mut().zip(gd).zip(x) {
                        *d += gi * sigmoid(xi);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                if let Some(da) = self.buf(*a, grads) {
                    for ((drow, grow), yrow) in da.chunks_mut(cols).zip(gd.chunks(cols)).zip(y.data().chunks(cols)) {
                        let dot: S = grow.iter().zip(yrow).map(|(&gi, &yi)| gi * yi).sum();
                        for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if let Some(dp) = self.buf(p, grads) {
                        for (drow, grow) in dp.chunks_mut(pc).zip(gd.chunks(total)) {
                            axpy(drow, &grow[offset..offset + pc], S::one());
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(dp) = self.buf(p, grads) {
                        axpy(dp, &gd[offset..offset + len], S::one());
                    }
                    offset += len;
                }
            }
            Op::SliceCols { src, start, len } => {
                let cols = self.value(*src).cols();
                if let Some(ds) = self.buf(*src, grads) {
                    for (drow, grow) in ds.chunks_mut(cols).zip(gd.chunks(*len)) {
                        axpy(&mut drow[*start..*start + *len], grow, S::one());
                    }
                }
            }
            Op::SumAll(a) => {
                let g0 = gd[0];
                if let Some(da) = self.buf(*a, grads) {
                    for d in da.iter_mut() {
                        *d += g0;
                    }
                }
            }
            Op::ScaleBlocks { x, w, block } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let cols = xv.cols();
                let nb = wv.cols();
                if let Some(dx) = self.buf(*x, grads) {
                    for (r, (drow, grow)) in dx.chunks_mut(cols).zip(gd.chunks(cols)).enumerate() {
                        for i in 0..nb {
                            let s = wv.data()[r * nb + i];
                            let span = i * block..(i + 1) * block;
                            axpy(&mut drow[span.clone()], &grow[span], s);
                        }
                    }
                }
                if let Some(dw) = self.buf(*w, grads) {
                    for r in 0..xv.rows() {
                        let grow = &gd[r * cols..(r + 1) * cols];
                        let xrow = xv.row(r);
                        for i in 0..nb {
                            let span = i * block..(i + 1) * block;
                            dw[r * nb + i] += grow[span.clone()]
                                .iter()
                                .zip(&xrow[span])
                                .map(|(&a, &b)| a * b)
                                .sum::<S>();
                        }
                    }
                }
            }
            Op::SumBlocks { x, block } => {
                let cols = self.value(*x).cols();
                if let Some(dx) = self.buf(*x, grads) {
                    for (drow, grow) in dx.chunks_mut(cols).zip(gd.chunks(*block)) {
                        for chunk in drow.chunks_mut(*block) {
                            axpy(chunk, grow, S::one());
                        }
                    }
                }
            }
            Op::Contract { f, u } => {
                let (fv, uv) = (self.value(*f), self.value(*u));
                let w = uv.cols();
                let fc = fv.cols();
                let q = fc / w;
                if let Some(df) = self.buf(*f, grads) {
                    for r in 0..fv.rows() {
                        let urow = uv.row(r);
                        for k in 0..q {
                            let gk = gd[r * q + k];
                            axpy(&mut df[r * fc + k * w..r * fc + (k + 1) * w], urow, gk);
                        }
                    }
                }
                if let Some(du) = self.buf(*u, grads) {
                    for r in 0..fv.rows() {
                        let frow = fv.row(r);
                        let drow = &mut du[r * w..(r + 1) * w];
                        for k in 0..q {
                            axpy(drow, &frow[k * w..(k + 1) * w], gd[r * q + k]);
                        }
                    }
                }
            }
            Op::BlockMatMul { x, w, blocks } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, xc) = xv.dims2();
                let b = wv.cols();
                let a = xc / blocks;
                let oc = blocks * b;
                if let Some(dx) = self.buf(*x, grads) {
                    for i in 0..*blocks {
                        S::gemm(
                            rows,
                            b,
                            a,
                            S::one(),
                            (&gd[i * b..], oc as isize, 1),
                            (&wv.data()[i * a * b..], 1, b as isize),
                            S::one(),
                            (&mut dx[i * a..], xc as isize, 1),
                        );
                    }
                }
                if let Some(dw) = self.buf(*w, grads) {
                    for i in 0..*blocks {
                        S::gemm(
                            a,
                            rows,
                            b,
                            S::one(),
                            (&xv.data()[i * a..], 1, xc as isize),
                            (&gd[i * b..], oc as isize, 1),
                            S::one(),
                            (&mut dw[i * a * b..], b as isize, 1),
                        );
                    }
                }
            }
        }
    }

    /// Gradient accumulator for `var`, allocated on first use; `None` when the
    /// node does not take part in differentiation.
    fn buf<'g>(&self, var: Var, grads: &'g mut [Option<Tensor<S>>]) -> Option<&'g mut [S]> {
        let node = &self.nodes[var.0];
        if !node.needs_grad {
            return None;
        }
        let slot = &mut grads[var.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(node.value.shape()));
        }
        slot.as_mut().map(Tensor::data_mut)
    }
}

fn axpy<S: Scalar>(dst: &mut [S], src: &[S], c: S) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let cols = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 5.0, 0.0, 1.0]).unwrap());
        let loss = tape.sum_all(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.tanh(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn shared_node_accumulates_from_all_consumers() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0));
        let a = tape.scale(x, 3.0);
        let b = tape.mul(x, x).unwrap();
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 3.0 + 4.0);
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let logits = Tensor::<f64>::matrix(1, 4, vec![0.5, -2.0, 3.0, 1.0]).unwrap();
        let base = softmax_rows(&logits);
        assert!((base.sum() - 1.0).abs() < 1e-12);
        for shift in [-100.0, 0.0, 100.0] {
            let shifted = softmax_rows(&logits.map(|x| x + shift));
            for (a, b) in shifted.data().iter().zip(base.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors_name_both_operands() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
