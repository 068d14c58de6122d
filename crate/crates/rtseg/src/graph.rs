//! Reverse-mode differentiation over a flat operation tape.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Each op
//! appends a node whose inputs are earlier nodes, so tape order is already a
//! topological order and `backward` walks it once in reverse, summing the
//! contribution of every use of a tensor into its gradient buffer.
//!
//! Every public op validates shapes up front and checks its output for
//! non-finite values; NaN/Inf anywhere is an error, never a silent state.
//! The only broadcast is bias addition over the last axis.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    AddBias { x: TensorId, bias: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    Scale { x: TensorId, factor: f64 },
    Shift { x: TensorId },
    Gelu { x: TensorId },
    Softmax { x: TensorId, axis: usize },
    LogSoftmax { x: TensorId, axis: usize },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Embedding { table: TensorId, ids: Vec<usize> },
    Concat { parts: Vec<TensorId>, axis: usize },
    SliceRows { x: TensorId, start: usize },
    SliceCols { x: TensorId, start: usize },
    Transpose { x: TensorId },
    Reshape { x: TensorId },
    Sum { x: TensorId },
    Mean { x: TensorId },
    RowSum { x: TensorId },
    Upsample { x: TensorId, dst_h: usize, dst_w: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// GELU tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + GELU_CUBIC·x³))).
pub const GELU_CUBIC: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = c * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

// ── Raw matmul kernels ──────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m,k] = A[m,n] · B[k,n]ᵀ (rows of both operands are contiguous)
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            c[i * k + p] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · B[m,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Bilinear interpolation weights for one axis (align-corners mapping, so
/// constants and corner samples are preserved exactly).
fn lerp_table(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|d| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = d as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<TensorId> {
        if !value.is_finite() {
            return Err(Error::numeric(format!("non-finite output from {name}")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Insert a plain tensor as a leaf. Gradient tracking follows the
    /// tensor's `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        let rg = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: rg,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Constant leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> TensorId {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Insert a named parameter from the store as a trainable leaf and
    /// remember the association so its gradient can be read back. A
    /// parameter used by several components binds to a single leaf, so all
    /// its uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, pid: ParamId) -> TensorId {
        if let Some(&(_, tid)) = self.params.iter().find(|&&(p, _)| p == pid) {
            return tid;
        }
        let t = store.value(pid).clone().with_grad();
        let id = self.leaf(t);
        self.params.push((pid, id));
        id
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    /// Gradient of a node after `backward`; `None` if untracked.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    /// (param, gradient) pairs for every registered parameter, post-backward.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(pid, tid)| self.grad(tid).map(|g| (pid, g)))
            .collect()
    }

    // ── Forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_nn(self.data(a), self.data(b), m, k, n);
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], data)?, Op::Matmul { a, b }, rg, "matmul")
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::shape(format!("add: shape {sa:?} vs {sb:?}")));
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(sa, data)?, Op::Add { a, b }, rg, "add")
    }

    /// x + bias, bias broadcast over the last axis. The single permitted
    /// broadcast in this library.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        let d = *sx.last().unwrap();
        if sb != [d] {
            return Err(Error::shape(format!(
                "add_bias: bias {sb:?} does not match last axis of {sx:?}"
            )));
        }
        let bias_data = self.data(bias).to_vec();
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias_data[i % d])
            .collect();
        let rg = self.needs(x) || self.needs(bias);
        self.push(Tensor::new(sx, data)?, Op::AddBias { x, bias }, rg, "add_bias")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::shape(format!("mul: shape {sa:?} vs {sb:?}")));
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(sa, data)?, Op::Mul { a, b }, rg, "mul")
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::shape(format!("div: shape {sa:?} vs {sb:?}")));
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x / y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(sa, data)?, Op::Div { a, b }, rg, "div")
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        let data: Vec<f64> = self.data(x).iter().map(|v| v * factor).collect();
        let rg = self.needs(x);
        self.push(Tensor::new(s, data)?, Op::Scale { x, factor }, rg, "scale")
    }

    pub fn shift(&mut self, x: TensorId, offset: f64) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        let data: Vec<f64> = self.data(x).iter().map(|v| v + offset).collect();
        let rg = self.needs(x);
        self.push(Tensor::new(s, data)?, Op::Shift { x }, rg, "shift")
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        let data: Vec<f64> = self.data(x).iter().map(|&v| gelu_scalar(v)).collect();
        let rg = self.needs(x);
        self.push(Tensor::new(s, data)?, Op::Gelu { x }, rg, "gelu")
    }

    /// Iterate `f` over (outer, inner) slice coordinates of `axis`.
    fn axis_slices(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        (outer, len, inner)
    }

    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape(format!("softmax: axis {axis} out of range for {s:?}")));
        }
        let xd = self.data(x);
        let (outer, len, inner) = Self::axis_slices(&s, axis);
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| o * len * inner + a * inner + i;
                let max = (0..len).map(|a| xd[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for a in 0..len {
                    let e = (xd[idx(a)] - max).exp();
                    data[idx(a)] = e;
                    sum += e;
                }
                for a in 0..len {
                    data[idx(a)] /= sum;
                }
            }
        }
        let rg = self.needs(x);
        self.push(Tensor::new(s, data)?, Op::Softmax { x, axis }, rg, "softmax")
    }

    pub fn log_softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape(format!(
                "log_softmax: axis {axis} out of range for {s:?}"
            )));
        }
        let xd = self.data(x);
        let (outer, len, inner) = Self::axis_slices(&s, axis);
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| o * len * inner + a * inner + i;
                let max = (0..len).map(|a| xd[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = (0..len).map(|a| (xd[idx(a)] - max).exp()).sum::<f64>().ln() + max;
                for a in 0..len {
                    data[idx(a)] = xd[idx(a)] - lse;
                }
            }
        }
        let rg = self.needs(x);
        self.push(Tensor::new(s, data)?, Op::LogSoftmax { x, axis }, rg, "log_softmax")
    }

    /// Normalize the last axis to mean 0 / variance 1, then apply γ·x̂ + β.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(format!(
                "layer_norm: gamma {:?} / beta {:?} must be [{d}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if eps <= 0.0 {
            return Err(Error::config(format!("layer_norm: eps must be positive, got {eps}")));
        }
        let xd = self.data(x);
        let gd = self.data(gamma).to_vec();
        let bd = self.data(beta).to_vec();
        let mut data = vec![0.0; xd.len()];
        for (row, chunk) in xd.chunks_exact(d).enumerate() {
            let mean = chunk.iter().sum::<f64>() / d as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data[row * d + j] = (chunk[j] - mean) * inv_std * gd[j] + bd[j];
            }
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Tensor::new(s, data)?,
            Op::LayerNorm { x, gamma, beta, eps },
            rg,
            "layer_norm",
        )
    }

    /// Row lookup: table[V, D] gathered at `ids` → [len(ids), D].
    pub fn embedding(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::shape(format!("embedding: table must be 2D, got {st:?}")));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::data(format!("embedding: id {bad} out of vocabulary 0..{v}")));
        }
        if ids.is_empty() {
            return Err(Error::shape("embedding: empty id list"));
        }
        let td = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        let rg = self.needs(table);
        self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding { table, ids: ids.to_vec() },
            rg,
            "embedding",
        )
    }

    /// Concatenate 2D tensors along rows (axis 0) or columns (axis 1).
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::shape("concat: no parts"));
        }
        if axis > 1 {
            return Err(Error::shape(format!("concat: axis {axis} unsupported (2D only)")));
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
        if shapes.iter().any(|s| s.len() != 2) {
            return Err(Error::shape(format!("concat: all parts must be 2D, got {shapes:?}")));
        }
        let fixed = 1 - axis;
        if shapes.iter().any(|s| s[fixed] != shapes[0][fixed]) {
            return Err(Error::shape(format!(
                "concat: mismatched extent on axis {fixed}: {shapes:?}"
            )));
        }
        let out_shape = if axis == 0 {
            vec![shapes.iter().map(|s| s[0]).sum(), shapes[0][1]]
        } else {
            vec![shapes[0][0], shapes.iter().map(|s| s[1]).sum()]
        };
        let mut data = Vec::with_capacity(out_shape[0] * out_shape[1]);
        if axis == 0 {
            for &p in parts {
                data.extend_from_slice(self.data(p));
            }
        } else {
            for r in 0..out_shape[0] {
                for (&p, s) in parts.iter().zip(&shapes) {
                    let c = s[1];
                    let row = &self.data(p)[r * c..(r + 1) * c];
                    data.extend_from_slice(row);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat { parts: parts.to_vec(), axis },
            rg,
            "concat",
        )
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[0] || len == 0 {
            return Err(Error::shape(format!(
                "slice_rows: rows {start}..{} out of {s:?}",
                start + len
            )));
        }
        let c = s[1];
        let data = self.data(x)[start * c..(start + len) * c].to_vec();
        let rg = self.needs(x);
        self.push(
            Tensor::new(vec![len, c], data)?,
            Op::SliceRows { x, start },
            rg,
            "slice_rows",
        )
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(Error::shape(format!(
                "slice_cols: cols {start}..{} out of {s:?}",
                start + len
            )));
        }
        let (r, c) = (s[0], s[1]);
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&self.data(x)[row * c + start..row * c + start + len]);
        }
        let rg = self.needs(x);
        self.push(
            Tensor::new(vec![r, len], data)?,
            Op::SliceCols { x, start },
            rg,
            "slice_cols",
        )
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose: need 2D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.data(x);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xd[i * c + j];
            }
        }
        let rg = self.needs(x);
        self.push(Tensor::new(vec![c, r], data)?, Op::Transpose { x }, rg, "transpose")
    }

    pub fn reshape(&mut self, x: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.data(x).len() {
            return Err(Error::shape(format!(
                "reshape: {:?} ({} elements) to {new_shape:?} ({numel})",
                self.shape(x),
                self.data(x).len()
            )));
        }
        let data = self.data(x).to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(new_shape, data)?, Op::Reshape { x }, rg, "reshape")
    }

    /// Sum of all elements → scalar [1].
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg, "sum")
    }

    /// Mean of all elements → scalar [1].
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.data(x).len() as f64;
        let s: f64 = self.data(x).iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s / n), Op::Mean { x }, rg, "mean")
    }

    /// Sum over the last axis: [r, c] → [r].
    pub fn row_sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("row_sum: need 2D, got {s:?}")));
        }
        let c = s[1];
        let data: Vec<f64> = self.data(x).chunks_exact(c).map(|row| row.iter().sum()).collect();
        let rg = self.needs(x);
        self.push(Tensor::new(vec![s[0]], data)?, Op::RowSum { x }, rg, "row_sum")
    }

    /// Bilinear upsample of per-channel planes: [C, h, w] → [C, dst_h, dst_w].
    pub fn upsample_bilinear(&mut self, x: TensorId, dst_h: usize, dst_w: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!("upsample: need [C,h,w], got {s:?}")));
        }
        let (ch, h, w) = (s[0], s[1], s[2]);
        if dst_h < h || dst_w < w {
            return Err(Error::shape(format!(
                "upsample: target {dst_h}x{dst_w} smaller than source {h}x{w}"
            )));
        }
        let ys = lerp_table(h, dst_h);
        let xs = lerp_table(w, dst_w);
        let xd = self.data(x);
        let mut data = vec![0.0; ch * dst_h * dst_w];
        for c in 0..ch {
            let plane = &xd[c * h * w..(c + 1) * h * w];
            let out = &mut data[c * dst_h * dst_w..(c + 1) * dst_h * dst_w];
            for (dy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (dx, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let v00 = plane[y0 * w + x0];
                    let v01 = plane[y0 * w + x1];
                    let v10 = plane[y1 * w + x0];
                    let v11 = plane[y1 * w + x1];
                    let top = v00 + (v01 - v00) * wx;
                    let bot = v10 + (v11 - v10) * wx;
                    out[dy * dst_w + dx] = top + (bot - top) * wy;
                }
            }
        }
        let rg = self.needs(x);
        self.push(
            Tensor::new(vec![ch, dst_h, dst_w], data)?,
            Op::Upsample { x, dst_h, dst_w },
            rg,
            "upsample",
        )
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Accumulate ∂loss/∂node for every gradient-tracked node reachable from
    /// `loss`, which must be a scalar.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(Error::numeric(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|node| {
                if node.requires_grad {
                    vec![0.0; node.value.numel()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0][0] = 1.0;
        }

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad || grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.apply_backward(i, &g, &mut grads);
            grads[i] = g;
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn apply_backward(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let mut add_into = |id: TensorId, contrib: &[f64]| {
            let buf = &mut grads[id.0];
            if buf.is_empty() {
                return; // untracked input
            }
            for (a, b) in buf.iter_mut().zip(contrib) {
                *a += b;
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let da = matmul_nt(g, self.data(*b), m, n, k);
                let db = matmul_tn(self.data(*a), g, m, k, n);
                add_into(*a, &da);
                add_into(*b, &db);
            }
            Op::Add { a, b } => {
                add_into(*a, g);
                add_into(*b, g);
            }
            Op::AddBias { x, bias } => {
                add_into(*x, g);
                let d = self.shape(*bias)[0];
                let mut db = vec![0.0; d];
                for (i, v) in g.iter().enumerate() {
                    db[i % d] += v;
                }
                add_into(*bias, &db);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                add_into(*a, &da);
                add_into(*b, &db);
            }
            Op::Div { a, b } => {
                let bd = self.data(*b);
                let ad = self.data(*a);
                let da: Vec<f64> = g.iter().zip(bd).map(|(g, y)| g / y).collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(ad.iter().zip(bd))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                add_into(*a, &da);
                add_into(*b, &db);
            }
            Op::Scale { x, factor } => {
                let dx: Vec<f64> = g.iter().map(|v| v * factor).collect();
                add_into(*x, &dx);
            }
            Op::Shift { x } => {
                add_into(*x, g);
            }
            Op::Gelu { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.data(*x))
                    .map(|(g, &v)| g * gelu_grad_scalar(v))
                    .collect();
                add_into(*x, &dx);
            }
            Op::Softmax { x, axis } => {
                // dx_a = s_a · (g_a − Σ_b g_b s_b) per slice
                let s = self.data(TensorId(i));
                let shape = self.shape(TensorId(i)).to_vec();
                let (outer, len, inner) = Self::axis_slices(&shape, *axis);
                let mut dx = vec![0.0; s.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let idx = |a: usize| o * len * inner + a * inner + ii;
                        let dot: f64 = (0..len).map(|a| g[idx(a)] * s[idx(a)]).sum();
                        for a in 0..len {
                            dx[idx(a)] = s[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                add_into(*x, &dx);
            }
            Op::LogSoftmax { x, axis } => {
                // dx_a = g_a − softmax_a · Σ_b g_b
                let y = self.data(TensorId(i));
                let shape = self.shape(TensorId(i)).to_vec();
                let (outer, len, inner) = Self::axis_slices(&shape, *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let idx = |a: usize| o * len * inner + a * inner + ii;
                        let gsum: f64 = (0..len).map(|a| g[idx(a)]).sum();
                        for a in 0..len {
                            dx[idx(a)] = g[idx(a)] - y[idx(a)].exp() * gsum;
                        }
                    }
                }
                add_into(*x, &dx);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xd = self.data(*x);
                let gd = self.data(*gamma);
                let d = self.shape(*gamma)[0];
                let rows = xd.len() / d;
                let mut dx = vec![0.0; xd.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let xs = &xd[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mean = xs.iter().sum::<f64>() / d as f64;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xs.iter().map(|v| (v - mean) * inv_std).collect();
                    for j in 0..d {
                        dgamma[j] += gs[j] * xhat[j];
                        dbeta[j] += gs[j];
                    }
                    let dxhat: Vec<f64> = (0..d).map(|j| gs[j] * gd[j]).collect();
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    let df = d as f64;
                    for j in 0..d {
                        dx[r * d + j] =
                            inv_std / df * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                add_into(*x, &dx);
                add_into(*gamma, &dgamma);
                add_into(*beta, &dbeta);
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![0.0; self.data(*table).len()];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[row * d + j];
                    }
                }
                add_into(*table, &dt);
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.data(p).len();
                        add_into(p, &g[offset..offset + n]);
                        offset += n;
                    }
                } else {
                    let rows = self.shape(TensorId(i))[0];
                    let total_cols = self.shape(TensorId(i))[1];
                    let mut col_offset = 0;
                    for &p in parts {
                        let c = self.shape(p)[1];
                        let mut dp = vec![0.0; rows * c];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c].copy_from_slice(
                                &g[r * total_cols + col_offset..r * total_cols + col_offset + c],
                            );
                        }
                        add_into(p, &dp);
                        col_offset += c;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.shape(*x)[1];
                let mut dx = vec![0.0; self.data(*x).len()];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                add_into(*x, &dx);
            }
            Op::SliceCols { x, start } => {
                let sx = self.shape(*x);
                let (r, c) = (sx[0], sx[1]);
                let len = self.shape(TensorId(i))[1];
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    dx[row * c + start..row * c + start + len]
                        .copy_from_slice(&g[row * len..(row + 1) * len]);
                }
                add_into(*x, &dx);
            }
            Op::Transpose { x } => {
                let out_shape = self.shape(TensorId(i)).to_vec();
                let (r, c) = (out_shape[0], out_shape[1]);
                let mut dx = vec![0.0; g.len()];
                for a in 0..r {
                    for b in 0..c {
                        dx[b * r + a] = g[a * c + b];
                    }
                }
                add_into(*x, &dx);
            }
            Op::Reshape { x } => {
                add_into(*x, g);
            }
            Op::Sum { x } => {
                let dx = vec![g[0]; self.data(*x).len()];
                add_into(*x, &dx);
            }
            Op::Mean { x } => {
                let n = self.data(*x).len() as f64;
                let dx = vec![g[0] / n; self.data(*x).len()];
                add_into(*x, &dx);
            }
            Op::RowSum { x } => {
                let c = self.shape(*x)[1];
                let mut dx = vec![0.0; self.data(*x).len()];
                for (r, chunk) in dx.chunks_exact_mut(c).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = g[r]);
                }
                add_into(*x, &dx);
            }
            Op::Upsample { x, dst_h, dst_w } => {
                let sx = self.shape(*x).to_vec();
                let (ch, h, w) = (sx[0], sx[1], sx[2]);
                let ys = lerp_table(h, *dst_h);
                let xs = lerp_table(w, *dst_w);
                let mut dx = vec![0.0; ch * h * w];
                for c in 0..ch {
                    let gp = &g[c * dst_h * dst_w..(c + 1) * dst_h * dst_w];
                    let dp = &mut dx[c * h * w..(c + 1) * h * w];
                    for (dy, &(y0, y1, wy)) in ys.iter().enumerate() {
                        for (dxi, &(x0, x1, wx)) in xs.iter().enumerate() {
                            let gv = gp[dy * *dst_w + dxi];
                            dp[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                            dp[y0 * w + x1] += gv * (1.0 - wy) * wx;
                            dp[y1 * w + x0] += gv * wy * (1.0 - wx);
                            dp[y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
                add_into(*x, &dx);
            }
        }
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, TensorId)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}
