//! Dual-path patch-transformer encoders.
//!
//! Each modality (3-channel RGB, 1-channel thermal) has its own patch
//! embedding and positional table; the transformer trunk is shared between
//! paths only when `share_trunk` is set. Paths never interact before fusion.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::nn::{LayerNorm, TransformerBlock};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const RGB_CHANNELS: usize = 3;
pub const THERMAL_CHANNELS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Thermal,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => RGB_CHANNELS,
            Modality::Thermal => THERMAL_CHANNELS,
        }
    }
}

/// Channel-major raster with values normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct ImageRaster {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageRaster {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::shape(format!(
                "raster {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::data(format!("raster value {bad} outside [0,1]")));
        }
        Ok(ImageRaster {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageRaster {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn set_pixel(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.values[(c * self.height + y) * self.width + x] = v;
    }

    /// Same geometry, all values zero. Used by the ablation flags.
    pub fn zeroed_like(&self) -> ImageRaster {
        ImageRaster::zeros(self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub share_trunk: bool,
    /// Keep encoder parameters out of optimizer updates.
    pub frozen: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 8,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            share_trunk: false,
            frozen: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0
            || self.embed_dim == 0
            || self.depth == 0
            || self.heads == 0
            || self.mlp_ratio == 0
        {
            return Err(Error::config("encoder: all dimensions must be positive"));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "encoder: embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Patch tokens produced inside a graph, still differentiable.
#[derive(Debug, Clone, Copy)]
pub struct PatchTokensNode {
    pub tokens: TensorId,
    pub grid: (usize, usize),
    pub modality: Modality,
}

/// Materialized patch tokens for inspection outside a graph.
#[derive(Debug, Clone)]
pub struct PatchTokens {
    pub tokens: Tensor,
    pub grid: (usize, usize),
    pub modality: Modality,
}

/// Flatten an image into its patch matrix [N_patch × (C·p²)]. Patches are
/// ordered row-major over the grid; within a patch, values are laid out
/// channel-major, then row-major.
pub fn patchify(img: &ImageRaster, patch_size: usize) -> Result<Tensor> {
    let (c, h, w) = (img.channels, img.height, img.width);
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::shape(format!(
            "patchify: {h}x{w} image not divisible by patch size {patch_size}"
        )));
    }
    let (rows, cols) = (h / patch_size, w / patch_size);
    let patch_len = c * patch_size * patch_size;
    let mut data = Vec::with_capacity(rows * cols * patch_len);
    for gy in 0..rows {
        for gx in 0..cols {
            for ch in 0..c {
                for py in 0..patch_size {
                    for px in 0..patch_size {
                        data.push(img.pixel(ch, gy * patch_size + py, gx * patch_size + px));
                    }
                }
            }
        }
    }
    Tensor::new(vec![rows * cols, patch_len], data)
}

#[derive(Debug, Clone)]
struct Path {
    patch_w: crate::params::ParamId,
    patch_b: crate::params::ParamId,
    pos: crate::params::ParamId,
}

#[derive(Debug, Clone)]
struct Trunk {
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNorm,
}

impl Trunk {
    fn init(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::init(
                    store,
                    &format!("{prefix}.block{i}"),
                    cfg.embed_dim,
                    cfg.heads,
                    cfg.mlp_ratio,
                    !cfg.frozen,
                    rng,
                )
            })
            .collect();
        let final_ln = LayerNorm::init(store, &format!("{prefix}.ln_out"), cfg.embed_dim, !cfg.frozen);
        Trunk { blocks, final_ln }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: TensorId) -> Result<TensorId> {
        for block in &self.blocks {
            x = block.forward(g, store, x, None)?;
        }
        self.final_ln.forward(g, store, x)
    }
}

/// Both modality paths plus their (possibly shared) trunks, bound to a
/// fixed input resolution chosen at init time.
#[derive(Debug, Clone)]
pub struct DualEncoder {
    cfg: EncoderConfig,
    height: usize,
    width: usize,
    grid: (usize, usize),
    rgb: Path,
    thermal: Path,
    rgb_trunk: Trunk,
    thermal_trunk: Option<Trunk>,
}

impl DualEncoder {
    pub fn init(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        height: usize,
        width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if height % cfg.patch_size != 0 || width % cfg.patch_size != 0 {
            return Err(Error::config(format!(
                "encoder: resolution {height}x{width} not divisible by patch size {}",
                cfg.patch_size
            )));
        }
        let grid = (height / cfg.patch_size, width / cfg.patch_size);
        let n_patch = grid.0 * grid.1;
        let trainable = !cfg.frozen;
        let init_path = |store: &mut ParamStore, name: &str, channels: usize, rng: &mut Rng| -> Path {
            let patch_len = channels * cfg.patch_size * cfg.patch_size;
            Path {
                patch_w: store.register_with(
                    format!("enc.{name}.patch.w"),
                    Tensor::xavier_uniform(vec![patch_len, cfg.embed_dim], rng),
                    trainable,
                ),
                patch_b: store.register_with(
                    format!("enc.{name}.patch.b"),
                    Tensor::zeros(vec![cfg.embed_dim]),
                    trainable,
                ),
                pos: store.register_with(
                    format!("enc.{name}.pos"),
                    Tensor::normal_init(vec![n_patch, cfg.embed_dim], 0.02, rng),
                    trainable,
                ),
            }
        };
        let rgb = init_path(store, "rgb", RGB_CHANNELS, rng);
        let thermal = init_path(store, "thr", THERMAL_CHANNELS, rng);
        let (rgb_trunk, thermal_trunk) = if cfg.share_trunk {
            (Trunk::init(store, "enc.trunk", cfg, rng), None)
        } else {
            (
                Trunk::init(store, "enc.rgb", cfg, rng),
                Some(Trunk::init(store, "enc.thr", cfg, rng)),
            )
        };
        Ok(DualEncoder {
            cfg: cfg.clone(),
            height,
            width,
            grid,
            rgb,
            thermal,
            rgb_trunk,
            thermal_trunk,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn n_patch(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn check_input(&self, img: &ImageRaster, modality: Modality) -> Result<()> {
        if img.channels() != modality.channels() {
            return Err(Error::shape(format!(
                "{modality:?} path expects {} channels, raster has {}",
                modality.channels(),
                img.channels()
            )));
        }
        if (img.height(), img.width()) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "encoder built for {}x{}, raster is {}x{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// One modality: patch embed + positions + trunk → [N_patch, D] tokens.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        img: &ImageRaster,
        modality: Modality,
    ) -> Result<PatchTokensNode> {
        self.check_input(img, modality)?;
        let patches = g.constant(patchify(img, self.cfg.patch_size)?);
        let path = match modality {
            Modality::Rgb => &self.rgb,
            Modality::Thermal => &self.thermal,
        };
        let w = g.param(store, path.patch_w);
        let b = g.param(store, path.patch_b);
        let pos = g.param(store, path.pos);
        let emb = g.matmul(patches, w)?;
        let emb = g.add_bias(emb, b)?;
        let emb = g.add(emb, pos)?;
        let trunk = match modality {
            Modality::Rgb => &self.rgb_trunk,
            Modality::Thermal => self.thermal_trunk.as_ref().unwrap_or(&self.rgb_trunk),
        };
        let tokens = trunk.forward(g, store, emb)?;
        Ok(PatchTokensNode {
            tokens,
            grid: self.grid,
            modality,
        })
    }

    /// Both paths on a spatially aligned pair.
    pub fn dual_encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        rgb: &ImageRaster,
        thermal: &ImageRaster,
    ) -> Result<(PatchTokensNode, PatchTokensNode)> {
        if (rgb.height(), rgb.width()) != (thermal.height(), thermal.width()) {
            return Err(Error::shape(format!(
                "modalities disagree spatially: rgb {}x{}, thermal {}x{}",
                rgb.height(),
                rgb.width(),
                thermal.height(),
                thermal.width()
            )));
        }
        let f_rgb = self.encode(g, store, rgb, Modality::Rgb)?;
        let f_thr = self.encode(g, store, thermal, Modality::Thermal)?;
        Ok((f_rgb, f_thr))
    }

    /// Convenience: run one modality in a scratch graph and materialize the
    /// tokens.
    pub fn encode_value(
        &self,
        store: &ParamStore,
        img: &ImageRaster,
        modality: Modality,
    ) -> Result<PatchTokens> {
        let mut g = Graph::new();
        let node = self.encode(&mut g, store, img, modality)?;
        Ok(PatchTokens {
            tokens: g.value(node.tokens).clone(),
            grid: node.grid,
            modality,
        })
    }
}
