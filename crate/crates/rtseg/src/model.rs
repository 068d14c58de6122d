//! Full pipeline: dual encoders → vision-to-language projection → token
//! assembly → fusion transformer → vision-to-decoder projection → mask
//! decoder. One [`SegModel`] owns the parameter store and every component's
//! handles into it.

use crate::decoder::{predict, MaskDecoder, MaskLogits};
use crate::encoder::{DualEncoder, ImageRaster};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, Vocabulary};
use crate::graph::{Graph, TensorId};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::run_config::RunConfig;

/// Rng stream label for parameter initialization.
const INIT_STREAM: u64 = 100;

#[derive(Clone, Debug)]
pub struct SegModel {
    store: ParamStore,
    pub encoder: DualEncoder,
    pub fusion: FusionModel,
    pub decoder: MaskDecoder,
    vocab: Vocabulary,
    config: RunConfig,
}

impl SegModel {
    /// Build a model with freshly initialized parameters. The same config
    /// and seed always produce bit-identical parameters.
    pub fn init(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let vocab = config.vocabulary()?;
        let mut rng = Rng::new(config.seed).child(INIT_STREAM);
        let mut store = ParamStore::new();
        let encoder = DualEncoder::init(
            &mut store,
            &config.encoder,
            config.scene.height,
            config.scene.width,
            &mut rng,
        )?;
        let fusion = FusionModel::init(&mut store, &config.fusion, config.encoder.embed_dim, &mut rng)?;
        let decoder = MaskDecoder::init(
            &mut store,
            &config.decoder,
            config.encoder.embed_dim,
            config.fusion.d_llm,
            config.fusion.n_code,
            &mut rng,
        )?;
        Ok(SegModel {
            store,
            encoder,
            fusion,
            decoder,
            vocab,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn tokenize(&self, prompt: &str) -> Vec<usize> {
        self.vocab.tokenize(prompt)
    }

    /// Full differentiable forward pass to per-class logits [9, H, W].
    pub fn forward(
        &self,
        g: &mut Graph,
        rgb: &ImageRaster,
        thermal: &ImageRaster,
        prompt_ids: &[usize],
    ) -> Result<TensorId> {
        let (f_rgb, f_thr) = self.encoder.dual_encode(g, &self.store, rgb, thermal)?;
        let rgb_t = self.fusion.project_v2t(g, &self.store, f_rgb.tokens)?;
        let thr_t = self.fusion.project_v2t(g, &self.store, f_thr.tokens)?;
        let x_txt = self.fusion.embed_text(g, &self.store, prompt_ids)?;
        let c_in = self.fusion.codebook_in(g, &self.store);
        let seq = self.fusion.assemble(g, rgb_t, thr_t, x_txt, c_in)?;
        let c_out = self.fusion.fuse(g, &self.store, &seq)?;
        let grid = self.decoder.project_v2d(
            g,
            &self.store,
            &f_rgb,
            &f_thr,
            (rgb.height(), rgb.width()),
        )?;
        self.decoder.decode_masks(g, &self.store, c_out, &grid)
    }

    /// Inference: logits materialized out of a scratch graph.
    pub fn infer_logits(
        &self,
        rgb: &ImageRaster,
        thermal: &ImageRaster,
        prompt_ids: &[usize],
    ) -> Result<MaskLogits> {
        if (rgb.height(), rgb.width()) != (thermal.height(), thermal.width()) {
            return Err(Error::shape(format!(
                "rgb {}x{} and thermal {}x{} rasters disagree",
                rgb.height(),
                rgb.width(),
                thermal.height(),
                thermal.width()
            )));
        }
        let mut g = Graph::new();
        let logits = self.forward(&mut g, rgb, thermal, prompt_ids)?;
        MaskLogits::new(g.value(logits).clone())
    }

    /// Inference straight to a label grid.
    pub fn predict_labels(
        &self,
        rgb: &ImageRaster,
        thermal: &ImageRaster,
        prompt_ids: &[usize],
    ) -> Result<Vec<u8>> {
        Ok(predict(&self.infer_logits(rgb, thermal, prompt_ids)?))
    }

    /// Names of every parameter, in registry order.
    pub fn param_names(&self) -> Vec<String> {
        self.store.iter().map(|(_, p)| p.name.clone()).collect()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Perturb nothing, verify everything: finite-difference check of the
    /// end-to-end pipeline on `n_params` randomly chosen parameters,
    /// probing one random coordinate of each. Returns the max guarded
    /// relative error.
    pub fn spot_gradcheck(
        &self,
        rgb: &ImageRaster,
        thermal: &ImageRaster,
        prompt_ids: &[usize],
        labels: &crate::data::LabelGrid,
        n_params: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut pick = Rng::new(seed);
        let loss_of = |store: &ParamStore| -> Result<f64> {
            let mut g = Graph::new();
            let mut model = self.clone();
            model.store = store.clone();
            let logits = model.forward(&mut g, rgb, thermal, prompt_ids)?;
            let loss = crate::train::seg_loss(&mut g, logits, labels, &self.config.train)?;
            Ok(g.data(loss)[0])
        };

        // analytic gradients once
        let mut g = Graph::new();
        let logits = self.forward(&mut g, rgb, thermal, prompt_ids)?;
        let loss = crate::train::seg_loss(&mut g, logits, labels, &self.config.train)?;
        g.backward(loss)?;
        let grads = g.param_grads();

        let mut worst = 0.0f64;
        for _ in 0..n_params {
            let (pid, grad) = grads[pick.below(grads.len())];
            let ei = pick.below(grad.len());
            let h = crate::gradcheck::FD_STEP;
            let mut plus = self.store.clone();
            plus.value_mut(pid).data_mut()[ei] += h;
            let mut minus = self.store.clone();
            minus.value_mut(pid).data_mut()[ei] -= h;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
            worst = worst.max(crate::gradcheck::rel_err(grad[ei], numeric));
        }
        Ok(worst)
    }
}

/// Replace one input with zeros, for the eval ablation flags.
pub fn maybe_zeroed(img: &ImageRaster, zero: bool) -> ImageRaster {
    if zero {
        img.zeroed_like()
    } else {
        img.clone()
    }
}

/// Readable summary line for CLI output.
pub fn describe(model: &SegModel) -> String {
    let cfg = model.config();
    format!(
        "encoder D={} depth={} | fusion D_llm={} depth={} n_code={} | decoder D_dec={} | {} params",
        cfg.encoder.embed_dim,
        cfg.encoder.depth,
        cfg.fusion.d_llm,
        cfg.fusion.depth,
        cfg.fusion.n_code,
        cfg.decoder.d_dec,
        model.param_count()
    )
}

/// Test-sized configuration used across the crate's tests and the book:
/// 16×16 scenes, small dims, short sequences.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.encoder.patch_size = 8;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.depth = 1;
    cfg.encoder.heads = 2;
    cfg.encoder.mlp_ratio = 2;
    cfg.fusion.d_llm = 24;
    cfg.fusion.depth = 1;
    cfg.fusion.heads = 2;
    cfg.fusion.max_len = 64;
    cfg.decoder.d_dec = 16;
    cfg.scene.height = 16;
    cfg.scene.width = 16;
    cfg.scene.min_objects = 1;
    cfg.scene.max_objects = 3;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneSpec};
    use crate::gradcheck::GRAD_TOL;

    fn sample_for(cfg: &RunConfig, seed: u64) -> crate::data::SegmentationSample {
        generate_scene(&SceneSpec {
            seed,
            height: cfg.scene.height,
            width: cfg.scene.width,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn forward_shape_and_determinism() {
        let cfg = tiny_config();
        let model = SegModel::init(&cfg).unwrap();
        let sample = sample_for(&cfg, 3);
        let ids = model.tokenize(&cfg.prompt);
        let a = model.infer_logits(&sample.rgb, &sample.thermal, &ids).unwrap();
        assert_eq!(a.tensor().shape(), &[9, 16, 16]);
        let b = model.infer_logits(&sample.rgb, &sample.thermal, &ids).unwrap();
        assert!(a
            .tensor()
            .data()
            .iter()
            .zip(b.tensor().data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = tiny_config();
        let a = SegModel::init(&cfg).unwrap();
        let b = SegModel::init(&cfg).unwrap();
        for (ia, ib) in a.store().iter().zip(b.store().iter()) {
            assert_eq!(ia.1.name, ib.1.name);
            assert_eq!(ia.1.value.data(), ib.1.value.data());
        }
    }

    #[test]
    fn end_to_end_spot_gradcheck() {
        let cfg = tiny_config();
        let model = SegModel::init(&cfg).unwrap();
        let sample = sample_for(&cfg, 5);
        let ids = model.tokenize("segment the scene");
        let err = model
            .spot_gradcheck(&sample.rgb, &sample.thermal, &ids, &sample.labels, 5, 77)
            .unwrap();
        assert!(err < GRAD_TOL, "end-to-end rel err {err}");
    }

    #[test]
    fn every_component_receives_gradients() {
        let cfg = tiny_config();
        let model = SegModel::init(&cfg).unwrap();
        let sample = sample_for(&cfg, 6);
        let ids = model.tokenize(&cfg.prompt);
        let mut g = Graph::new();
        let logits = model.forward(&mut g, &sample.rgb, &sample.thermal, &ids).unwrap();
        let loss = crate::train::seg_loss(&mut g, logits, &sample.labels, &cfg.train).unwrap();
        g.backward(loss).unwrap();
        let grads = g.param_grads();
        for prefix in ["enc.rgb", "enc.thr", "fuse.v2t_in", "fuse.codebook", "fuse.block0", "dec.v2d", "dec.code_map"] {
            let hit = grads.iter().any(|&(pid, g)| {
                model.store().name(pid).starts_with(prefix) && g.iter().any(|&v| v != 0.0)
            });
            assert!(hit, "no nonzero gradient under {prefix}");
        }
    }

    #[test]
    fn mismatched_input_sizes_are_rejected() {
        let cfg = tiny_config();
        let model = SegModel::init(&cfg).unwrap();
        let rgb = ImageRaster::zeros(3, 16, 16);
        let thr = ImageRaster::zeros(1, 8, 8);
        let err = model.infer_logits(&rgb, &thr, &[]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }
}
