//! RGB-thermal semantic segmentation with text-prompted token fusion.
//!
//! The pipeline: two patch-transformer encoders turn an RGB raster and a
//! thermal raster into token matrices, a projection lifts both into the
//! embedding space of a small decoder-only transformer, the prompt tokens
//! and a learnable codebook are appended, and the transformer's hidden
//! states at the codebook positions drive a lightweight mask decoder that
//! emits per-class logits at input resolution. Everything runs on a
//! self-contained f64 autodiff core that is verified by finite differences.
//!
//! The `book/` directory at the repository root walks through each layer;
//! its code snippets compile as doc-tests via the [`guide`] module.

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod guide;
pub mod model;
pub mod nn;
pub mod params;
pub mod report;
pub mod rng;
pub mod run_config;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, TensorId};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;

/// Number of segmentation classes: background plus eight foreground classes.
pub const NUM_CLASSES: usize = 9;

/// Label value excluded from loss and metrics.
pub const IGNORE_LABEL: u8 = 255;
