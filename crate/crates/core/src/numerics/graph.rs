//! Dynamic reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking them backwards is a valid topological order
//! and visits each node exactly once.

use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm, matrix_dims, Mat, MatMut, Tensor};

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f32>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        rows: Vec<usize>,
    },
    Mean(Var),
    Sum(Var),
    Mse {
        x: Var,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `x[.., k] * w[k, n] + b[n]`; leading axes of `x` are flattened.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let (k, n) = matrix_dims(self.value(w), "linear")?;
        if xv.cols() != k {
            return Err(Error::dim(
                "linear",
                format!("input {:?} vs weight {:?}", xv.shape(), self.value(w).shape()),
            ));
        }
        if let Some(b) = b {
            if self.value(b).numel() != n {
                return Err(Error::dim(
                    "linear",
                    format!("bias {:?} vs {n} outputs", self.value(b).shape()),
                ));
            }
        }
        let m = xv.rows();
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            m,
            k,
            n,
            1.0,
            Mat::row_major(xv.data(), k),
            Mat::row_major(self.value(w).data(), n),
            1.0,
            MatMut::row_major(&mut out, n),
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let ng = self.any_grad(&[x, w]) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_parts(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).scaled(s);
        let ng = self.needs_grad(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| gelu(x)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let ng = self.needs_grad(a);
        self.push(out, Op::Gelu(a), ng)
    }

    /// Per-row normalisation over the last axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if d == 0 || self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "input {:?}, gain {:?}, bias {:?}",
                    xv.shape(),
                    self.value(gain).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / d as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
            inv_std[r] = istd as f32;
            for j in 0..d {
                let h = ((row[j] as f64 - mean) * istd) as f32;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let ng = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention. `q: [Lq, d]`, `k, v: [Lk, d]`;
    /// head `h` uses columns `h*d/heads .. (h+1)*d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (lq, d) = matrix_dims(self.value(q), "attention")?;
        let (lk, dk) = matrix_dims(self.value(k), "attention")?;
        let (lv, dv) = matrix_dims(self.value(v), "attention")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {d} is not divisible by {heads} heads"
            )));
        }
        if dk != d || dv != d || lv != lk || lk == 0 {
            return Err(Error::dim(
                "attention",
                format!("q [{lq},{d}], k [{lk},{dk}], v [{lv},{dv}]"),
            ));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * d];
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            gemm(
                lq,
                dh,
                lk,
                scale,
                Mat::strided(&qd[off..], d, 1),
                Mat::strided(&kd[off..], 1, d),
                0.0,
                MatMut::row_major(p, lk),
            );
            softmax_rows(p, lk);
            gemm(
                lq,
                lk,
                dh,
                1.0,
                Mat::row_major(p, lk),
                Mat::strided(&vd[off..], d, 1),
                0.0,
                MatMut::strided(&mut out[off..], d, 1),
            );
        }
        let ng = self.any_grad(&[q, k, v]);
        Ok(self.push(
            Tensor::from_parts(vec![lq, d], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Concatenate along the last axis; all inputs must share their row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::dim("concat_cols", "no inputs"));
        };
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let ng = self.any_grad(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if start + len > cols {
            return Err(Error::dim(
                "slice_cols",
                format!("{start}..{} of {cols} columns", start + len),
            ));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.needs_grad(x);
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], out),
            Op::SliceCols { x, start },
            ng,
        ))
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let n = tv.rows();
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {n}")));
        }
        let d = tv.cols();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(tv.row(r));
        }
        let ng = self.needs_grad(table);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), d], out),
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data().iter().map(|&v| v as f64).sum::<f64>() / xv.numel().max(1) as f64;
        let ng = self.needs_grad(x);
        self.push(Tensor::scalar(m as f32), Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>();
        let ng = self.needs_grad(x);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), ng)
    }

    /// Mean squared difference against a constant target.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(Error::dim(
                "mse",
                format!("{:?} vs {:?}", xv.shape(), target.shape()),
            ));
        }
        let m = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / xv.numel().max(1) as f64;
        let ng = self.needs_grad(x);
        Ok(self.push(Tensor::scalar(m as f32), Op::Mse { x, target }, ng))
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        self.backward_with(vec![(loss, Tensor::scalar(1.0))])
    }

    /// Backpropagate from explicit output gradients. Seeds on the same node
    /// are summed.
    pub fn backward_with(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            if g.numel() != self.value(v).numel() {
                return Err(Error::dim(
                    "backward",
                    format!(
                        "seed {:?} for node of shape {:?}",
                        g.shape(),
                        self.value(v).shape()
                    ),
                ));
            }
            last = last.max(v.0 + 1);
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(Tensor::from_parts(self.value(v).shape().to_vec(), g.into_data())),
            }
        }
        for id in (0..last).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims(self.value(*a), "matmul").unwrap();
                let n = self.value(*b).cols();
                if let Some(da) = self.slot(grads, *a) {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        Mat::row_major(gd, n),
                        Mat::transposed(self.value(*b).data(), n),
                        1.0,
                        MatMut::row_major(da, k),
                    );
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        Mat::transposed(self.value(*a).data(), k),
                        Mat::row_major(gd, n),
                        1.0,
                        MatMut::row_major(db, n),
                    );
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let (k, n) = (xv.cols(), self.value(*w).cols());
                let m = xv.rows();
                if let Some(dx) = self.slot(grads, *x) {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        Mat::row_major(gd, n),
                        Mat::transposed(self.value(*w).data(), n),
                        1.0,
                        MatMut::row_major(dx, k),
                    );
                }
                if let Some(dw) = self.slot(grads, *w) {
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        Mat::transposed(xv.data(), k),
                        Mat::row_major(gd, n),
                        1.0,
                        MatMut::row_major(dw, n),
                    );
                }
                if let Some(db) = b.and_then(|b| self.slot(grads, b)) {
                    for row in gd.chunks_exact(n) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(dv) = self.slot(grads, v) {
                        axpy(dv, 1.0, gd);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    axpy(da, 1.0, gd);
                }
                if let Some(db) = self.slot(grads, *b) {
                    axpy(db, -1.0, gd);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((acc, g), y) in da.iter_mut().zip(gd).zip(self.value(*b).data()) {
                        *acc += g * y;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((acc, g), x) in db.iter_mut().zip(gd).zip(self.value(*a).data()) {
                        *acc += g * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = self.slot(grads, *a) {
                    axpy(da, *s, gd);
                }
            }
            Op::Gelu(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((acc, g), &x) in da.iter_mut().zip(gd).zip(self.value(*a).data()) {
                        *acc += g * gelu_grad(x);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.value(*x).cols();
                let gain_v = self.value(*gain).data();
                if let Some(dg) = self.slot(grads, *gain) {
                    for (grow, hrow) in gd.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *bias) {
                    for grow in gd.chunks_exact(d) {
                        axpy(db, 1.0, grow);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let mut dxhat = vec![0.0f32; d];
                    for (r, (grow, hrow)) in gd.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                        let mut mean_dh = 0.0f32;
                        let mut mean_dhh = 0.0f32;
                        for j in 0..d {
                            dxhat[j] = grow[j] * gain_v[j];
                            mean_dh += dxhat[j];
                            mean_dhh += dxhat[j] * hrow[j];
                        }
                        mean_dh /= d as f32;
                        mean_dhh /= d as f32;
                        let out = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += inv_std[r] * (dxhat[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, probs, gd, grads),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if let Some(dp) = self.slot(grads, *p) {
                        for r in 0..rows {
                            axpy(
                                &mut dp[r * c..(r + 1) * c],
                                1.0,
                                &gd[r * total + off..r * total + off + c],
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let len = g.cols();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, grow) in gd.chunks_exact(len).enumerate() {
                        axpy(&mut dx[r * cols + start..r * cols + start + len], 1.0, grow);
                    }
                }
            }
            Op::GatherRows { table, rows } => {
                let d = self.value(*table).cols();
                if let Some(dt) = self.slot(grads, *table) {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(&mut dt[r * d..(r + 1) * d], 1.0, &gd[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1) as f32;
                if let Some(dx) = self.slot(grads, *x) {
                    let s = gd[0] / n;
                    dx.iter_mut().for_each(|v| *v += s);
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|v| *v += gd[0]);
                }
            }
            Op::Mse { x, target } => {
                let xv = self.value(*x);
                let s = 2.0 * gd[0] / xv.numel().max(1) as f32;
                if let Some(dx) = self.slot(grads, *x) {
                    for ((acc, a), t) in dx.iter_mut().zip(xv.data()).zip(target.data()) {
                        *acc += s * (a - t);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f32],
        gd: &[f32],
        grads: &mut [Option<Tensor>],
    ) {
        let (lq, d) = (self.value(q).rows(), self.value(q).cols());
        let lk = self.value(k).rows();
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut ds = vec![0.0f32; lq * lk];
        for h in 0..heads {
            let off = h * dh;
            let p = &probs[h * lq * lk..(h + 1) * lq * lk];
            if let Some(dv) = self.slot(grads, v) {
                gemm(
                    lk,
                    lq,
                    dh,
                    1.0,
                    Mat::transposed(p, lk),
                    Mat::strided(&gd[off..], d, 1),
                    1.0,
                    MatMut::strided(&mut dv[off..], d, 1),
                );
            }
            if !(self.needs_grad(q) || self.needs_grad(k)) {
                continue;
            }
            gemm(
                lq,
                dh,
                lk,
                1.0,
                Mat::strided(&gd[off..], d, 1),
                Mat::strided(&vd[off..], 1, d),
                0.0,
                MatMut::row_major(&mut ds, lk),
            );
            for (srow, prow) in ds.chunks_exact_mut(lk).zip(p.chunks_exact(lk)) {
                let dot: f32 = srow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (s, pv) in srow.iter_mut().zip(prow) {
                    *s = pv * (*s - dot);
                }
            }
            if let Some(dq) = self.slot(grads, q) {
                gemm(
                    lq,
                    lk,
                    dh,
                    scale,
                    Mat::row_major(&ds, lk),
                    Mat::strided(&kd[off..], d, 1),
                    1.0,
                    MatMut::strided(&mut dq[off..], d, 1),
                );
            }
            if let Some(dk) = self.slot(grads, k) {
                gemm(
                    lk,
                    lq,
                    dh,
                    scale,
                    Mat::transposed(&ds, lk),
                    Mat::strided(&qd[off..], d, 1),
                    1.0,
                    MatMut::strided(&mut dk[off..], d, 1),
                );
            }
        }
    }

    /// Gradient accumulator for `v`, allocated on first use. `None` when
    /// `v` does not participate in differentiation.
    #[allow(clippy::mut_from_ref)]
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f32]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.value(v).shape();
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
                .data_mut(),
        )
    }
}

/// Gradients of the leaves of a graph after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The gradient of `v`, or zeros of its shape when it did not take part.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape().to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

pub(crate) fn gelu(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place numerically stable softmax over rows of width `cols`.
pub fn softmax_rows(data: &mut [f32], cols: usize) {
    for row in data.chunks_exact_mut(cols) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = 1.0 / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}
