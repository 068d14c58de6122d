//! Run configuration: one flat key-value text file drives every command.
//!
//! Format: `key = value` lines, `#` comments, unknown keys rejected. The
//! same serialization is echoed into checkpoints so a trained model can be
//! rebuilt without the original file. Flag overrides (`--seed`, `--prompt`)
//! win over file values.

use std::path::PathBuf;

use crate::data::{Illumination, SceneSpec};
use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, Vocabulary};
use crate::train::TrainConfig;
use crate::NUM_CLASSES;

/// Default prompt: the class table read out in id order.
pub const DEFAULT_PROMPT: &str =
    "segment: background car person bike curve stop guardrail cone bump";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub scene: SceneSpec,
    pub prompt: String,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub vocab_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
            scene: SceneSpec::default(),
            prompt: DEFAULT_PROMPT.to_string(),
            seed: 0,
            data_dir: None,
            out: None,
            vocab_file: None,
        }
    }
}

impl RunConfig {
    /// Load the vocabulary this run uses (built-in unless `vocab_file` is
    /// set) and check it against the fusion config.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let vocab = match &self.vocab_file {
            None => Vocabulary::default_vocab(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::data(format!("cannot read vocabulary {}: {e}", path.display()))
                })?;
                Vocabulary::from_lines(&text)?
            }
        };
        if vocab.len() != self.fusion.vocab_size {
            return Err(Error::config(format!(
                "fusion.vocab_size = {} but vocabulary has {} entries",
                self.fusion.vocab_size,
                vocab.len()
            )));
        }
        Ok(vocab)
    }

    /// Cross-field consistency on top of per-module validation.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.fusion.validate()?;
        self.decoder.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        if self.fusion.n_code < NUM_CLASSES {
            return Err(Error::config(format!(
                "fusion.n_code = {} must cover all {NUM_CLASSES} classes",
                self.fusion.n_code
            )));
        }
        if self.scene.height % self.encoder.patch_size != 0
            || self.scene.width % self.encoder.patch_size != 0
        {
            return Err(Error::config(format!(
                "scene.{{height,width}} = {}x{} not divisible by encoder.patch_size = {}",
                self.scene.height, self.scene.width, self.encoder.patch_size
            )));
        }
        let n_patch = (self.scene.height / self.encoder.patch_size)
            * (self.scene.width / self.encoder.patch_size);
        let vocab = self.vocabulary()?;
        let prompt_len = vocab.tokenize(&self.prompt).len();
        let needed = 2 * n_patch + prompt_len + self.fusion.n_code;
        if needed > self.fusion.max_len {
            return Err(Error::config(format!(
                "fusion.max_len = {} too small: sequence needs {needed} rows \
                 (2×{n_patch} visual + {prompt_len} prompt + {} codebook)",
                self.fusion.max_len, self.fusion.n_code
            )));
        }
        Ok(())
    }

    /// Serialize as the flat key-value format, all keys in fixed order.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "prompt", self.prompt.clone());
        if let Some(p) = &self.data_dir {
            kv(&mut s, "data_dir", p.display().to_string());
        }
        if let Some(p) = &self.out {
            kv(&mut s, "out", p.display().to_string());
        }
        if let Some(p) = &self.vocab_file {
            kv(&mut s, "vocab_file", p.display().to_string());
        }
        kv(&mut s, "encoder.patch_size", self.encoder.patch_size.to_string());
        kv(&mut s, "encoder.embed_dim", self.encoder.embed_dim.to_string());
        kv(&mut s, "encoder.depth", self.encoder.depth.to_string());
        kv(&mut s, "encoder.heads", self.encoder.heads.to_string());
        kv(&mut s, "encoder.mlp_ratio", self.encoder.mlp_ratio.to_string());
        kv(&mut s, "encoder.share_trunk", self.encoder.share_trunk.to_string());
        kv(&mut s, "encoder.frozen", self.encoder.frozen.to_string());
        kv(&mut s, "fusion.d_llm", self.fusion.d_llm.to_string());
        kv(&mut s, "fusion.depth", self.fusion.depth.to_string());
        kv(&mut s, "fusion.heads", self.fusion.heads.to_string());
        kv(&mut s, "fusion.vocab_size", self.fusion.vocab_size.to_string());
        kv(&mut s, "fusion.n_code", self.fusion.n_code.to_string());
        kv(&mut s, "fusion.max_len", self.fusion.max_len.to_string());
        kv(&mut s, "fusion.causal", self.fusion.causal.to_string());
        kv(&mut s, "decoder.d_dec", self.decoder.d_dec.to_string());
        kv(&mut s, "decoder.heads", self.decoder.heads.to_string());
        kv(&mut s, "train.lr", fmt_f64(self.train.lr));
        kv(&mut s, "train.beta1", fmt_f64(self.train.beta1));
        kv(&mut s, "train.beta2", fmt_f64(self.train.beta2));
        kv(&mut s, "train.weight_decay", fmt_f64(self.train.weight_decay));
        kv(&mut s, "train.steps", self.train.steps.to_string());
        kv(&mut s, "train.batch_size", self.train.batch_size.to_string());
        kv(&mut s, "train.seed", self.train.seed.to_string());
        kv(&mut s, "train.ce_weight", fmt_f64(self.train.ce_weight));
        kv(&mut s, "train.dice_weight", fmt_f64(self.train.dice_weight));
        kv(&mut s, "train.ignore_index", self.train.ignore_index.to_string());
        kv(&mut s, "train.checkpoint_every", self.train.checkpoint_every.to_string());
        kv(&mut s, "scene.height", self.scene.height.to_string());
        kv(&mut s, "scene.width", self.scene.width.to_string());
        kv(&mut s, "scene.min_objects", self.scene.min_objects.to_string());
        kv(&mut s, "scene.max_objects", self.scene.max_objects.to_string());
        kv(
            &mut s,
            "scene.illumination",
            match self.scene.illumination {
                Illumination::Day => "day".to_string(),
                Illumination::Night => "night".to_string(),
            },
        );
        kv(&mut s, "scene.noise", fmt_f64(self.scene.noise));
        kv(&mut s, "scene.seed", self.scene.seed.to_string());
        kv(&mut s, "scene.emissivity", csv_f64(&self.scene.emissivity));
        let flat_colors: Vec<f64> = self.scene.colors.iter().flatten().copied().collect();
        kv(&mut s, "scene.colors", csv_f64(&flat_colors));
        s
    }

    /// Parse the flat key-value format on top of defaults. Unknown keys and
    /// malformed values are config errors naming the key.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut train_seed_set = false;
        let mut scene_seed_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key = value, got {line}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "seed" => cfg.seed = parse(key, value)?,
                "prompt" => cfg.prompt = value.to_string(),
                "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "vocab_file" => cfg.vocab_file = Some(PathBuf::from(value)),
                "encoder.patch_size" => cfg.encoder.patch_size = parse(key, value)?,
                "encoder.embed_dim" => cfg.encoder.embed_dim = parse(key, value)?,
                "encoder.depth" => cfg.encoder.depth = parse(key, value)?,
                "encoder.heads" => cfg.encoder.heads = parse(key, value)?,
                "encoder.mlp_ratio" => cfg.encoder.mlp_ratio = parse(key, value)?,
                "encoder.share_trunk" => cfg.encoder.share_trunk = parse(key, value)?,
                "encoder.frozen" => cfg.encoder.frozen = parse(key, value)?,
                "fusion.d_llm" => cfg.fusion.d_llm = parse(key, value)?,
                "fusion.depth" => cfg.fusion.depth = parse(key, value)?,
                "fusion.heads" => cfg.fusion.heads = parse(key, value)?,
                "fusion.vocab_size" => cfg.fusion.vocab_size = parse(key, value)?,
                "fusion.n_code" => cfg.fusion.n_code = parse(key, value)?,
                "fusion.max_len" => cfg.fusion.max_len = parse(key, value)?,
                "fusion.causal" => cfg.fusion.causal = parse(key, value)?,
                "decoder.d_dec" => cfg.decoder.d_dec = parse(key, value)?,
                "decoder.heads" => cfg.decoder.heads = parse(key, value)?,
                "train.lr" => cfg.train.lr = parse(key, value)?,
                "train.beta1" => cfg.train.beta1 = parse(key, value)?,
                "train.beta2" => cfg.train.beta2 = parse(key, value)?,
                "train.weight_decay" => cfg.train.weight_decay = parse(key, value)?,
                "train.steps" => cfg.train.steps = parse(key, value)?,
                "train.batch_size" => cfg.train.batch_size = parse(key, value)?,
                "train.seed" => {
                    cfg.train.seed = parse(key, value)?;
                    train_seed_set = true;
                }
                "train.ce_weight" => cfg.train.ce_weight = parse(key, value)?,
                "train.dice_weight" => cfg.train.dice_weight = parse(key, value)?,
                "train.ignore_index" => cfg.train.ignore_index = parse(key, value)?,
                "train.checkpoint_every" => cfg.train.checkpoint_every = parse(key, value)?,
                "scene.height" => cfg.scene.height = parse(key, value)?,
                "scene.width" => cfg.scene.width = parse(key, value)?,
                "scene.min_objects" => cfg.scene.min_objects = parse(key, value)?,
                "scene.max_objects" => cfg.scene.max_objects = parse(key, value)?,
                "scene.illumination" => cfg.scene.illumination = value.parse()?,
                "scene.noise" => cfg.scene.noise = parse(key, value)?,
                "scene.seed" => {
                    cfg.scene.seed = parse(key, value)?;
                    scene_seed_set = true;
                }
                "scene.emissivity" => {
                    let v = parse_csv_f64(key, value, NUM_CLASSES)?;
                    cfg.scene.emissivity.copy_from_slice(&v);
                }
                "scene.colors" => {
                    let v = parse_csv_f64(key, value, 3 * NUM_CLASSES)?;
                    for (i, chunk) in v.chunks_exact(3).enumerate() {
                        cfg.scene.colors[i].copy_from_slice(chunk);
                    }
                }
                other => {
                    return Err(Error::config(format!("unknown config key {other}")));
                }
            }
        }
        if !train_seed_set {
            cfg.train.seed = cfg.seed;
        }
        if !scene_seed_set {
            cfg.scene.seed = cfg.seed;
        }
        Ok(cfg)
    }

    /// Apply the shared `--seed` override; flags win over the file.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.scene.seed = seed;
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap(), v);
    s
}

fn csv_f64(vals: &[f64]) -> String {
    vals.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("config key {key}: cannot parse {value}")))
}

fn parse_csv_f64(key: &str, value: &str, expect: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect::<Result<_>>()?;
    if vals.len() != expect {
        return Err(Error::config(format!(
            "config key {key}: expected {expect} comma-separated values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_preserves_everything() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.prompt = "segment the car".to_string();
        cfg.encoder.depth = 2;
        cfg.fusion.causal = false;
        cfg.train.lr = 1e-3;
        cfg.scene.illumination = Illumination::Night;
        cfg.data_dir = Some(PathBuf::from("/tmp/data"));
        let text = cfg.to_kv_text();
        let back = RunConfig::from_kv_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::from_kv_text("encoder.patch_sise = 8").unwrap_err();
        assert!(err.to_string().contains("patch_sise"), "{err}");
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = RunConfig::from_kv_text("train.lr = fast").unwrap_err();
        assert!(err.to_string().contains("train.lr"), "{err}");
    }

    #[test]
    fn dependent_seeds_follow_global_seed_unless_set() {
        let cfg = RunConfig::from_kv_text("seed = 9").unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.scene.seed, 9);
        let cfg = RunConfig::from_kv_text("seed = 9\ntrain.seed = 4").unwrap();
        assert_eq!(cfg.train.seed, 4);
    }

    #[test]
    fn validate_catches_cross_field_problems() {
        let mut cfg = RunConfig::default();
        cfg.fusion.n_code = 5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("n_code"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.scene.height = 60; // not divisible by 8
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.fusion.max_len = 64;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("max_len"), "{err}");
    }

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = RunConfig::from_kv_text("# a comment\n\nseed = 3\n").unwrap();
        assert_eq!(cfg.seed, 3);
    }
}
