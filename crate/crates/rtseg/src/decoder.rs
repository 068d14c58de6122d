//! Lightweight mask decoder.
//!
//! Codebook tokens and the projected visual grid exchange information in one
//! cross-attention round trip (tokens query grid, then grid queries tokens);
//! per-class logits are dot products between class tokens and grid features,
//! bilinearly upsampled to the input resolution.

use crate::encoder::PatchTokensNode;
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::nn::{LayerNorm, Linear, MultiHeadAttention};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    pub d_dec: usize,
    pub heads: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { d_dec: 64, heads: 1 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_dec == 0 || self.heads == 0 {
            return Err(Error::config("decoder: all dimensions must be positive"));
        }
        if self.d_dec % self.heads != 0 {
            return Err(Error::config(format!(
                "decoder: d_dec {} not divisible by heads {}",
                self.d_dec, self.heads
            )));
        }
        Ok(())
    }
}

/// Spatial feature grid produced by the vision-to-decoder projection.
#[derive(Debug, Clone, Copy)]
pub struct FeatureGridNode {
    pub features: TensorId,
    pub grid: (usize, usize),
    /// Source raster resolution the logits will be upsampled back to.
    pub source: (usize, usize),
}

/// Per-class logits at input resolution, materialized out of a graph.
#[derive(Debug, Clone)]
pub struct MaskLogits {
    tensor: Tensor,
}

impl MaskLogits {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let s = tensor.shape();
        if s.len() != 3 || s[0] != NUM_CLASSES {
            return Err(Error::shape(format!(
                "mask logits must be [{NUM_CLASSES}, H, W], got {s:?}"
            )));
        }
        Ok(MaskLogits { tensor })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn logit(&self, class: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.height(), self.width());
        self.tensor.data()[(class * h + y) * w + x]
    }
}

/// Per-pixel argmax over classes; ties go to the lowest class id.
pub fn predict(logits: &MaskLogits) -> Vec<u8> {
    let (h, w) = (logits.height(), logits.width());
    let data = logits.tensor.data();
    let plane = h * w;
    let mut labels = vec![0u8; plane];
    for p in 0..plane {
        let mut best_class = 0usize;
        let mut best = data[p];
        for c in 1..NUM_CLASSES {
            let v = data[c * plane + p];
            if v > best {
                best = v;
                best_class = c;
            }
        }
        labels[p] = best_class as u8;
    }
    labels
}

#[derive(Debug, Clone)]
pub struct MaskDecoder {
    cfg: DecoderConfig,
    v2d: Linear,
    code_map: Linear,
    ln_tokens: LayerNorm,
    tokens_to_grid: MultiHeadAttention,
    ln_grid: LayerNorm,
    grid_to_tokens: MultiHeadAttention,
    vision_dim: usize,
    d_llm: usize,
    n_code: usize,
}

impl MaskDecoder {
    pub fn init(
        store: &mut ParamStore,
        cfg: &DecoderConfig,
        vision_dim: usize,
        d_llm: usize,
        n_code: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if n_code < NUM_CLASSES {
            return Err(Error::config(format!(
                "decoder: n_code {n_code} below class count {NUM_CLASSES}"
            )));
        }
        let d = cfg.d_dec;
        Ok(MaskDecoder {
            cfg: cfg.clone(),
            v2d: Linear::init(store, "dec.v2d", 2 * vision_dim, d, true, rng),
            code_map: Linear::init(store, "dec.code_map", d_llm, d, true, rng),
            ln_tokens: LayerNorm::init(store, "dec.ln_tokens", d, true),
            tokens_to_grid: MultiHeadAttention::init(store, "dec.t2g", d, cfg.heads, true, rng),
            ln_grid: LayerNorm::init(store, "dec.ln_grid", d, true),
            grid_to_tokens: MultiHeadAttention::init(store, "dec.g2t", d, cfg.heads, true, rng),
            vision_dim,
            d_llm,
            n_code,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// p_{V→D}: per-position [rgb ‖ thermal] concatenation followed by a
    /// linear map into the decoder feature space.
    pub fn project_v2d(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_rgb: &PatchTokensNode,
        f_thr: &PatchTokensNode,
        source: (usize, usize),
    ) -> Result<FeatureGridNode> {
        if f_rgb.grid != f_thr.grid {
            return Err(Error::shape(format!(
                "project_v2d: grids disagree: {:?} vs {:?}",
                f_rgb.grid, f_thr.grid
            )));
        }
        for node in [f_rgb, f_thr] {
            let s = g.shape(node.tokens).to_vec();
            if s.len() != 2 || s[1] != self.vision_dim {
                return Err(Error::shape(format!(
                    "project_v2d: tokens {s:?} do not match vision dim {}",
                    self.vision_dim
                )));
            }
        }
        let paired = g.concat(&[f_rgb.tokens, f_thr.tokens], 1)?;
        let features = self.v2d.forward(g, store, paired)?;
        Ok(FeatureGridNode {
            features,
            grid: f_rgb.grid,
            source,
        })
    }

    /// Fused codebook + feature grid → per-class logits at the grid's source
    /// resolution.
    pub fn decode_masks(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        c_out: TensorId,
        grid: &FeatureGridNode,
    ) -> Result<TensorId> {
        let cs = g.shape(c_out).to_vec();
        if cs.len() != 2 || cs[1] != self.d_llm {
            return Err(Error::shape(format!(
                "decode_masks: C_out {cs:?} must be [_, {}]",
                self.d_llm
            )));
        }
        if cs[0] < NUM_CLASSES {
            return Err(Error::config(format!(
                "decode_masks: {} codebook tokens cannot cover {NUM_CLASSES} classes",
                cs[0]
            )));
        }
        let (rows, cols) = grid.grid;
        let (h, w) = grid.source;

        // (a) map C_out into the decoder space
        let tokens = self.code_map.forward(g, store, c_out)?;
        // (b) one cross-attention round trip
        let tq = self.ln_tokens.forward(g, store, tokens)?;
        let attended = self.tokens_to_grid.forward(g, store, tq, grid.features, None)?;
        let tokens = g.add(tokens, attended)?;
        let gq = self.ln_grid.forward(g, store, grid.features)?;
        let attended = self.grid_to_tokens.forward(g, store, gq, tokens, None)?;
        let cells = g.add(grid.features, attended)?;
        // (c) class logits: dot(class token, cell feature); class i reads
        // codebook token i
        let class_tokens = g.slice_rows(tokens, 0, NUM_CLASSES)?;
        let class_t = g.transpose(class_tokens)?;
        let cell_logits = g.matmul(cells, class_t)?; // [N_patch, n_class]
        let planes = g.transpose(cell_logits)?; // [n_class, N_patch]
        let planes = g.reshape(planes, vec![NUM_CLASSES, rows, cols])?;
        // (d) upsample to the source resolution
        g.upsample_bilinear(planes, h, w)
    }

    pub fn n_code(&self) -> usize {
        self.n_code
    }
}
