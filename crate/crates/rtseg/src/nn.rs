//! Reusable transformer building blocks over the autodiff graph.
//!
//! Components own `ParamId` handles into a [`ParamStore`] and are pure
//! functions of (inputs, parameters) at forward time, so concurrent forward
//! passes over a shared read-only store are safe.

use crate::error::Result;
use crate::graph::{Graph, TensorId};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Additive attention bias: 0 where attention is allowed, a large negative
/// value where it is masked (finite, so no NaN can leak out of softmax).
pub const MASK_OFF: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        trainable: bool,
        rng: &mut Rng,
    ) -> Self {
        let w = store.register_with(
            format!("{prefix}.w"),
            Tensor::xavier_uniform(vec![in_dim, out_dim], rng),
            trainable,
        );
        let b = store.register_with(format!("{prefix}.b"), Tensor::zeros(vec![out_dim]), trainable);
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let h = g.matmul(x, w)?;
        g.add_bias(h, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, trainable: bool) -> Self {
        let gamma = store.register_with(
            format!("{prefix}.gamma"),
            Tensor::full(vec![dim], 1.0),
            trainable,
        );
        let beta =
            store.register_with(format!("{prefix}.beta"), Tensor::zeros(vec![dim]), trainable);
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Boolean attention pattern; `allowed[q][k]` says whether query row q may
/// read key row k. Materialized as an additive bias inside the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttnMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Lower-triangular causal pattern over a square sequence.
    pub fn causal(len: usize) -> Self {
        let mut allowed = vec![false; len * len];
        for q in 0..len {
            for k in 0..=q {
                allowed[q * len + k] = true;
            }
        }
        AttnMask {
            rows: len,
            cols: len,
            allowed,
        }
    }

    pub fn is_allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.cols + k]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn bias_tensor(&self) -> Tensor {
        let data: Vec<f64> = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { MASK_OFF })
            .collect();
        Tensor::new(vec![self.rows, self.cols], data).expect("mask bias")
    }
}

/// Multi-head scaled dot-product attention. Queries come from `q_input`,
/// keys and values from `kv_input`, so the same component serves self- and
/// cross-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        trainable: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        MultiHeadAttention {
            wq: Linear::init(store, &format!("{prefix}.wq"), dim, dim, trainable, rng),
            wk: Linear::init(store, &format!("{prefix}.wk"), dim, dim, trainable, rng),
            wv: Linear::init(store, &format!("{prefix}.wv"), dim, dim, trainable, rng),
            wo: Linear::init(store, &format!("{prefix}.wo"), dim, dim, trainable, rng),
            heads,
            head_dim: dim / heads,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_input: TensorId,
        kv_input: TensorId,
        mask: Option<&AttnMask>,
    ) -> Result<TensorId> {
        let q = self.wq.forward(g, store, q_input)?;
        let k = self.wk.forward(g, store, kv_input)?;
        let v = self.wv.forward(g, store, kv_input)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let bias = mask.map(|m| {
            let t = m.bias_tensor();
            g.constant(t)
        });
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qs = g.slice_cols(q, h * self.head_dim, self.head_dim)?;
            let ks = g.slice_cols(k, h * self.head_dim, self.head_dim)?;
            let vs = g.slice_cols(v, h * self.head_dim, self.head_dim)?;
            let qs = g.scale(qs, scale)?;
            let kt = g.transpose(ks)?;
            let mut scores = g.matmul(qs, kt)?;
            if let Some(b) = bias {
                scores = g.add(scores, b)?;
            }
            let attn = g.softmax(scores, 1)?;
            head_outs.push(g.matmul(attn, vs)?);
        }
        let merged = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            g.concat(&head_outs, 1)?
        };
        self.wo.forward(g, store, merged)
    }
}

/// Pre-norm transformer block: x + attn(ln(x)), then h + mlp(ln(h)).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl TransformerBlock {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        trainable: bool,
        rng: &mut Rng,
    ) -> Self {
        let hidden = dim * mlp_ratio;
        TransformerBlock {
            ln1: LayerNorm::init(store, &format!("{prefix}.ln1"), dim, trainable),
            attn: MultiHeadAttention::init(store, &format!("{prefix}.attn"), dim, heads, trainable, rng),
            ln2: LayerNorm::init(store, &format!("{prefix}.ln2"), dim, trainable),
            mlp_in: Linear::init(store, &format!("{prefix}.mlp_in"), dim, hidden, trainable, rng),
            mlp_out: Linear::init(store, &format!("{prefix}.mlp_out"), hidden, dim, trainable, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: TensorId,
        mask: Option<&AttnMask>,
    ) -> Result<TensorId> {
        let normed = self.ln1.forward(g, store, x)?;
        let attended = self.attn.forward(g, store, normed, normed, mask)?;
        let x = g.add(x, attended)?;
        let normed = self.ln2.forward(g, store, x)?;
        let h = self.mlp_in.forward(g, store, normed)?;
        let h = g.gelu(h)?;
        let h = self.mlp_out.forward(g, store, h)?;
        g.add(x, h)
    }
}
