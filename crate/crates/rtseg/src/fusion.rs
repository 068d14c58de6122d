//! Text-conditioned token fusion.
//!
//! Visual tokens from both encoder paths are projected into the embedding
//! space of a small decoder-only transformer, concatenated with prompt
//! embeddings and a learnable codebook, and run through causally masked
//! blocks. The hidden states at the codebook positions — which sit last and
//! therefore attend to every modality — are the fused output that drives
//! the mask decoder.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::nn::{AttnMask, LayerNorm, Linear, TransformerBlock};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BEGIN_ID: usize = 2;
pub const END_ID: usize = 3;
pub const RESERVED_TOKENS: usize = 4;

const RESERVED_STRINGS: [&str; RESERVED_TOKENS] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Word-level vocabulary. Persisted as one token per line; the line number
/// is the id and the first four lines are the reserved tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    by_word: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from the full token list including the four reserved entries.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED_TOKENS {
            return Err(Error::config(format!(
                "vocabulary needs at least {RESERVED_TOKENS} reserved entries, got {}",
                tokens.len()
            )));
        }
        for (i, expected) in RESERVED_STRINGS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::data(format!(
                    "vocabulary line {i} must be reserved token {expected}, got {}",
                    tokens[i]
                )));
            }
        }
        let mut by_word = HashMap::new();
        for (id, tok) in tokens.iter().enumerate() {
            if by_word.insert(tok.clone(), id).is_some() {
                return Err(Error::data(format!("duplicate vocabulary entry {tok}")));
            }
        }
        Ok(Vocabulary { tokens, by_word })
    }

    /// The built-in 64-entry vocabulary: reserved ids, class names, and
    /// prompt scaffolding.
    pub fn default_vocab() -> Self {
        let words = [
            "segment", "the", "a", "an", "in", "on", "of", "and", "all", "every", "image",
            "scene", "picture", "classes", "class", "background", "car", "person", "bike",
            "curve", "stop", "guardrail", "cone", "bump", "night", "day", "dark", "bright",
            "thermal", "infrared", "rgb", "visible", "color", "heat", "find", "label", "mask",
            "object", "objects", "region", "regions", "road", "street", "driving", "urban",
            "pixels", "areas", "this", "that", "with", "into", "from", "for", "to", "show",
            "highlight", "everything", "including", "them", "it",
        ];
        let mut tokens: Vec<String> = RESERVED_STRINGS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(tokens).expect("built-in vocabulary is valid")
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
        Vocabulary::from_tokens(tokens)
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            let _ = writeln!(out, "{tok}");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.by_word.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Lowercase, split on anything non-alphanumeric, map unknown words to
    /// the unknown id. The empty prompt is legal and yields no ids.
    pub fn tokenize(&self, prompt: &str) -> Vec<usize> {
        let lower = prompt.to_lowercase();
        lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FusionConfig {
    pub d_llm: usize,
    pub depth: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub n_code: usize,
    pub max_len: usize,
    /// Causal masking (the default); false runs the bidirectional variant.
    pub causal: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d_llm: 96,
            depth: 2,
            heads: 4,
            vocab_size: Vocabulary::default_vocab().len(),
            n_code: 9,
            max_len: 256,
            causal: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_llm == 0
            || self.depth == 0
            || self.heads == 0
            || self.vocab_size == 0
            || self.n_code == 0
            || self.max_len == 0
        {
            return Err(Error::config("fusion: all dimensions must be positive"));
        }
        if self.d_llm % self.heads != 0 {
            return Err(Error::config(format!(
                "fusion: d_llm {} not divisible by heads {}",
                self.d_llm, self.heads
            )));
        }
        if self.vocab_size < RESERVED_TOKENS {
            return Err(Error::config("fusion: vocab_size below reserved range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Rgb,
    Thermal,
    Text,
    Codebook,
}

const SEGMENT_ORDER: [Segment; 4] = [Segment::Rgb, Segment::Thermal, Segment::Text, Segment::Codebook];

/// Assembled fusion input: embedding rows tagged by segment, an attention
/// pattern, and position ids. Rows are packed [rgb][thermal][text][codebook]
/// with no padding, so no row can attend to a pad position.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    rows: TensorId,
    segments: Vec<Segment>,
    mask: AttnMask,
    positions: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn rows(&self) -> TensorId {
        self.rows
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn mask(&self) -> &AttnMask {
        &self.mask
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Row range occupied by a segment; empty range if absent.
    pub fn segment_range(&self, seg: Segment) -> Range<usize> {
        let start = self.segments.iter().position(|&s| s == seg);
        match start {
            None => 0..0,
            Some(start) => {
                let len = self.segments[start..].iter().take_while(|&&s| s == seg).count();
                start..start + len
            }
        }
    }

    fn check_invariants(&self) -> Result<()> {
        // Segment tags must be a subsequence of the fixed order.
        let mut cursor = 0usize;
        for &s in &self.segments {
            while cursor < SEGMENT_ORDER.len() && SEGMENT_ORDER[cursor] != s {
                cursor += 1;
            }
            if cursor == SEGMENT_ORDER.len() {
                return Err(Error::data("token sequence segments out of order"));
            }
        }
        if self.mask.shape() != (self.len(), self.len()) {
            return Err(Error::shape("token sequence mask shape mismatch"));
        }
        Ok(())
    }
}

/// Decoder-only fusion transformer plus its projection layer and codebook.
#[derive(Debug, Clone)]
pub struct FusionModel {
    cfg: FusionConfig,
    /// Token embedding table [V, D_llm].
    embed: ParamId,
    /// Positional table [max_len, D_llm].
    pos: ParamId,
    /// The learnable codebook C_seg [n_code, D_llm]; its post-transformer
    /// states are the fused output.
    codebook: ParamId,
    v2t_in: Linear,
    v2t_out: Linear,
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNorm,
    vision_dim: usize,
}

impl FusionModel {
    pub fn init(
        store: &mut ParamStore,
        cfg: &FusionConfig,
        vision_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let embed = store.register(
            "fuse.embed",
            Tensor::normal_init(vec![cfg.vocab_size, cfg.d_llm], 0.02, rng),
        );
        let pos = store.register(
            "fuse.pos",
            Tensor::normal_init(vec![cfg.max_len, cfg.d_llm], 0.02, rng),
        );
        let codebook = store.register(
            "fuse.codebook",
            Tensor::normal_init(vec![cfg.n_code, cfg.d_llm], 0.02, rng),
        );
        let v2t_in = Linear::init(store, "fuse.v2t_in", vision_dim, cfg.d_llm, true, rng);
        let v2t_out = Linear::init(store, "fuse.v2t_out", cfg.d_llm, cfg.d_llm, true, rng);
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::init(
                    store,
                    &format!("fuse.block{i}"),
                    cfg.d_llm,
                    cfg.heads,
                    4,
                    true,
                    rng,
                )
            })
            .collect();
        let final_ln = LayerNorm::init(store, "fuse.ln_out", cfg.d_llm, true);
        Ok(FusionModel {
            cfg: cfg.clone(),
            embed,
            pos,
            codebook,
            v2t_in,
            v2t_out,
            blocks,
            final_ln,
            vision_dim,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn codebook_param(&self) -> ParamId {
        self.codebook
    }

    /// Vision-to-language projection: 2-layer MLP (linear → GELU → linear)
    /// mapping tokens of the vision dim into the fusion embedding space.
    pub fn project_v2t(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: TensorId,
    ) -> Result<TensorId> {
        let shape = g.shape(tokens).to_vec();
        if shape.len() != 2 || shape[1] != self.vision_dim {
            return Err(Error::shape(format!(
                "project_v2t: tokens {shape:?} do not match vision dim {}",
                self.vision_dim
            )));
        }
        let h = self.v2t_in.forward(g, store, tokens)?;
        let h = g.gelu(h)?;
        self.v2t_out.forward(g, store, h)
    }

    /// Prompt ids → embedding rows; `None` for an empty prompt.
    pub fn embed_text(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[usize],
    ) -> Result<Option<TensorId>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let table = g.param(store, self.embed);
        Ok(Some(g.embedding(table, ids)?))
    }

    /// The learnable codebook rows C_in for this forward pass.
    pub fn codebook_in(&self, g: &mut Graph, store: &ParamStore) -> TensorId {
        g.param(store, self.codebook)
    }

    /// Concatenate [rgb][thermal][text][codebook] rows, tag segments, and
    /// build the attention pattern (causal by default).
    pub fn assemble(
        &self,
        g: &mut Graph,
        f_rgb_t: TensorId,
        f_thr_t: TensorId,
        x_txt: Option<TensorId>,
        c_in: TensorId,
    ) -> Result<TokenSequence> {
        let mut parts = vec![f_rgb_t, f_thr_t];
        if let Some(t) = x_txt {
            parts.push(t);
        }
        parts.push(c_in);
        let mut segments = Vec::new();
        for (&part, seg) in parts.iter().zip(match x_txt {
            Some(_) => vec![Segment::Rgb, Segment::Thermal, Segment::Text, Segment::Codebook],
            None => vec![Segment::Rgb, Segment::Thermal, Segment::Codebook],
        }) {
            let shape = g.shape(part).to_vec();
            if shape.len() != 2 || shape[1] != self.cfg.d_llm {
                return Err(Error::shape(format!(
                    "assemble: {seg:?} rows {shape:?} must be [_, {}]",
                    self.cfg.d_llm
                )));
            }
            segments.extend(std::iter::repeat(seg).take(shape[0]));
        }
        let total = segments.len();
        if total > self.cfg.max_len {
            return Err(Error::shape(format!(
                "assemble: sequence length {total} exceeds max_len {}",
                self.cfg.max_len
            )));
        }
        let rows = g.concat(&parts, 0)?;
        let mask = if self.cfg.causal {
            AttnMask::causal(total)
        } else {
            AttnMask::full(total, total)
        };
        let seq = TokenSequence {
            rows,
            segments,
            mask,
            positions: (0..total).collect(),
        };
        seq.check_invariants()?;
        Ok(seq)
    }

    /// Run the fusion transformer and return the hidden states at the
    /// codebook positions: C_out, shaped [n_code, D_llm].
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, seq: &TokenSequence) -> Result<TensorId> {
        seq.check_invariants()?;
        let code_range = seq.segment_range(Segment::Codebook);
        if code_range.len() != self.cfg.n_code {
            return Err(Error::shape(format!(
                "fuse: expected {} codebook rows, sequence has {}",
                self.cfg.n_code,
                code_range.len()
            )));
        }
        let len = seq.len();
        let pos_table = g.param(store, self.pos);
        let pos = g.slice_rows(pos_table, 0, len)?;
        let mut x = g.add(seq.rows(), pos)?;
        for block in &self.blocks {
            x = block.forward(g, store, x, Some(seq.mask()))?;
        }
        let x = self.final_ln.forward(g, store, x)?;
        g.slice_rows(x, code_range.start, code_range.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, GRAD_TOL};

    #[test]
    fn tokenize_direct_lookup() {
        let vocab = Vocabulary::default_vocab();
        let ids = vocab.tokenize("segment the car");
        assert_eq!(
            ids,
            vec![
                vocab.id("segment").unwrap(),
                vocab.id("the").unwrap(),
                vocab.id("car").unwrap()
            ]
        );
    }

    #[test]
    fn tokenize_empty_prompt() {
        let vocab = Vocabulary::default_vocab();
        assert!(vocab.tokenize("").is_empty());
    }

    #[test]
    fn tokenize_normalizes_case_and_punctuation() {
        let vocab = Vocabulary::default_vocab();
        assert_eq!(vocab.tokenize("Segment the CAR."), vocab.tokenize("segment the car"));
    }

    #[test]
    fn tokenize_maps_unknown_words() {
        let vocab = Vocabulary::default_vocab();
        let ids = vocab.tokenize("segment zebra");
        assert_eq!(ids[1], UNK_ID);
    }

    #[test]
    fn vocab_file_round_trip_and_reserved_ids() {
        let vocab = Vocabulary::default_vocab();
        assert_eq!(vocab.len(), 64);
        assert!(RESERVED_TOKENS < 16);
        let text = vocab.to_lines();
        let reloaded = Vocabulary::from_lines(&text).unwrap();
        assert_eq!(reloaded.to_lines(), text);
        assert_eq!(reloaded.token(PAD_ID), Some("<pad>"));
        assert_eq!(reloaded.token(UNK_ID), Some("<unk>"));
        assert_eq!(reloaded.token(BEGIN_ID), Some("<s>"));
        assert_eq!(reloaded.token(END_ID), Some("</s>"));
    }

    #[test]
    fn vocab_rejects_bad_reserved_lines() {
        let err = Vocabulary::from_lines("<pad>\n<oops>\n<s>\n</s>\nsegment").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    fn toy_cfg() -> FusionConfig {
        FusionConfig {
            d_llm: 12,
            depth: 1,
            heads: 2,
            vocab_size: 64,
            n_code: 8,
            max_len: 64,
            causal: true,
        }
    }

    fn toy_model(seed: u64, cfg: &FusionConfig) -> (ParamStore, FusionModel) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let model = FusionModel::init(&mut store, cfg, 8, &mut rng).unwrap();
        (store, model)
    }

    #[test]
    fn project_v2t_shape_and_dim_check() {
        let cfg = toy_cfg();
        let (store, model) = toy_model(51, &cfg);
        let mut g = Graph::new();
        let tokens = g.constant(Tensor::zeros(vec![16, 8]));
        let out = model.project_v2t(&mut g, &store, tokens).unwrap();
        assert_eq!(g.shape(out), &[16, 12]);

        let wrong = g.constant(Tensor::zeros(vec![16, 9]));
        assert!(model.project_v2t(&mut g, &store, wrong).is_err());
    }

    #[test]
    fn project_v2t_zero_weights_degenerates_to_bias() {
        let cfg = toy_cfg();
        let (mut store, model) = toy_model(52, &cfg);
        for name in ["fuse.v2t_in.w", "fuse.v2t_out.w"] {
            let id = store.lookup(name).unwrap();
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = Tensor::zeros(shape).with_grad();
        }
        let bias: Vec<f64> = (0..12).map(|i| i as f64 / 10.0).collect();
        let bid = store.lookup("fuse.v2t_out.b").unwrap();
        *store.value_mut(bid) = Tensor::new(vec![12], bias.clone()).unwrap().with_grad();

        let mut g = Graph::new();
        let tokens = g.constant(gradcheck::random_input(vec![5, 8], &mut Rng::new(1)));
        let out = model.project_v2t(&mut g, &store, tokens).unwrap();
        for row in g.data(out).chunks_exact(12) {
            for (a, b) in row.iter().zip(&bias) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn project_v2t_gradcheck() {
        let cfg = toy_cfg();
        let (store, model) = toy_model(53, &cfg);
        let mut rng = Rng::new(2);
        let tokens = gradcheck::random_input(vec![4, 8], &mut rng);
        let w = gradcheck::random_input(vec![4, 12], &mut rng);
        let err = gradcheck::max_grad_err(
            |g: &mut Graph, ids: &[TensorId]| {
                let out = model.project_v2t(g, &store, ids[0])?;
                let wid = g.constant(w.clone());
                let p = g.mul(out, wid)?;
                g.sum(p)
            },
            &[tokens],
        )
        .unwrap();
        assert!(err < GRAD_TOL, "v2t rel err {err}");
    }

    fn assemble_fixture(
        g: &mut Graph,
        model: &FusionModel,
        store: &ParamStore,
        n_rgb: usize,
        n_thr: usize,
        text_len: usize,
        seed: u64,
    ) -> TokenSequence {
        let mut rng = Rng::new(seed);
        let rgb = g.leaf(gradcheck::random_input(vec![n_rgb, 12], &mut rng));
        let thr = g.leaf(gradcheck::random_input(vec![n_thr, 12], &mut rng));
        let txt = if text_len > 0 {
            Some(g.leaf(gradcheck::random_input(vec![text_len, 12], &mut rng)))
        } else {
            None
        };
        let c_in = model.codebook_in(g, store);
        model.assemble(g, rgb, thr, txt, c_in).unwrap()
    }

    #[test]
    fn assemble_bookkeeping() {
        let cfg = toy_cfg();
        let (store, model) = toy_model(54, &cfg);
        let mut g = Graph::new();
        let seq = assemble_fixture(&mut g, &model, &store, 16, 16, 3, 3);
        assert_eq!(seq.len(), 43);
        assert_eq!(g.shape(seq.rows()), &[43, 12]);
        assert!(seq.segments()[35..].iter().all(|&s| s == Segment::Codebook));
        assert_eq!(seq.segment_range(Segment::Codebook), 35..43);
        assert_eq!(seq.positions(), (0..43).collect::<Vec<_>>());

        // causal contract: last row sees everything, first row only itself
        for k in 0..43 {
            assert!(seq.mask().is_allowed(42, k));
        }
        assert!(seq.mask().is_allowed(0, 0));
        for k in 1..43 {
            assert!(!seq.mask().is_allowed(0, k));
        }
    }

    #[test]
    fn assemble_empty_prompt_is_valid() {
        let cfg = toy_cfg();
        let (store, model) = toy_model(55, &cfg);
        let mut g = Graph::new();
        let seq = assemble_fixture(&mut g, &model, &store, 16, 16, 0, 4);
        assert_eq!(seq.len(), 40);
        assert_eq!(seq.segment_range(Segment::Text), 0..0);
        assert_eq!(seq.segment_range(Segment::Codebook), 32..40);
    }

    #[test]
    fn assemble_overflow_is_an_error() {
        let cfg = toy_cfg();
        let (store, model) = toy_model(56, &cfg);
        let mut g = Graph::new();
        let rgb = g.constant(Tensor::zeros(vec![40, 12]));
        let thr = g.constant(Tensor::zeros(vec![40, 12]));
        let c_in = model.codebook_in(&mut g, &store);
        let err = model.assemble(&mut g, rgb, thr, None, c_in).unwrap_err();
        assert!(err.to_string().contains("max_len"), "{err}");
    }

    #[test]
    fn fuse_output_contract() {
        let cfg = toy_cfg();
        let (store, model) = toy_model(57, &cfg);
        let mut g = Graph::new();
        let seq = assemble_fixture(&mut g, &model, &store, 6, 6, 2, 5);
        let c_out = model.fuse(&mut g, &store, &seq).unwrap();
        assert_eq!(g.shape(c_out), &[8, 12]);
        assert!(g.value(c_out).is_finite());
    }

    /// Rebuild the same sequence with one row perturbed, returning both
    /// C_out matrices.
    fn fuse_with_perturbation(
        cfg: &FusionConfig,
        seed: u64,
        perturb: Option<(usize, f64)>,
    ) -> Vec<f64> {
        let (store, model) = toy_model(58, cfg);
        let mut rng = Rng::new(seed);
        let mut rgb = gradcheck::random_input(vec![5, 12], &mut rng);
        let mut thr = gradcheck::random_input(vec![5, 12], &mut rng);
        let mut txt = gradcheck::random_input(vec![3, 12], &mut rng);
        if let Some((row, delta)) = perturb {
            let (t, local) = if row < 5 {
                (&mut rgb, row)
            } else if row < 10 {
                (&mut thr, row - 5)
            } else {
                (&mut txt, row - 10)
            };
            // single component: a uniform row shift sits in layer norm's
            // null space and never reaches the codebook rows
            t.data_mut()[local * 12] += delta;
        }
        let mut g = Graph::new();
        let rgb = g.leaf(rgb);
        let thr = g.leaf(thr);
        let txt = g.leaf(txt);
        let c_in = model.codebook_in(&mut g, &store);
        let seq = model.assemble(&mut g, rgb, thr, Some(txt), c_in).unwrap();
        let c_out = model.fuse(&mut g, &store, &seq).unwrap();
        g.data(c_out).to_vec()
    }

    #[test]
    fn every_modality_influences_fused_output() {
        let cfg = toy_cfg();
        let baseline = fuse_with_perturbation(&cfg, 9, None);
        for trial in 0..10 {
            let row = (trial * 13 + 1) % 13; // rgb, thermal, and text rows
            let out = fuse_with_perturbation(&cfg, 9, Some((row, 0.5)));
            let diff: f64 = baseline
                .iter()
                .zip(&out)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff > 1e-12, "row {row} must influence C_out (diff {diff:e})");
        }
    }

    #[test]
    fn codebook_rows_are_causally_ordered() {
        // Perturbing codebook row i must leave C_out rows j < i unchanged.
        let cfg = toy_cfg();
        let (mut store, model) = toy_model(59, &cfg);
        let run = |store: &ParamStore| {
            let mut rng = Rng::new(12);
            let mut g = Graph::new();
            let rgb = g.leaf(gradcheck::random_input(vec![4, 12], &mut rng));
            let thr = g.leaf(gradcheck::random_input(vec![4, 12], &mut rng));
            let c_in = model.codebook_in(&mut g, store);
            let seq = model.assemble(&mut g, rgb, thr, None, c_in).unwrap();
            let c_out = model.fuse(&mut g, store, &seq).unwrap();
            g.data(c_out).to_vec()
        };
        let before = run(&store);
        let perturb_row = 5usize;
        {
            let pid = store.lookup("fuse.codebook").unwrap();
            let t = store.value_mut(pid);
            t.data_mut()[perturb_row * 12] += 1.0;
        }
        let after = run(&store);
        let d = cfg.d_llm;
        assert_eq!(&before[..perturb_row * d], &after[..perturb_row * d]);
        assert_ne!(&before[perturb_row * d..], &after[perturb_row * d..]);
    }

    #[test]
    fn bidirectional_variant_lets_early_rows_see_late_rows() {
        let mut cfg = toy_cfg();
        cfg.causal = false;
        let (mut store, model) = toy_model(60, &cfg);
        let run = |store: &ParamStore| {
            let mut rng = Rng::new(13);
            let mut g = Graph::new();
            let rgb = g.leaf(gradcheck::random_input(vec![4, 12], &mut rng));
            let thr = g.leaf(gradcheck::random_input(vec![4, 12], &mut rng));
            let c_in = model.codebook_in(&mut g, store);
            let seq = model.assemble(&mut g, rgb, thr, None, c_in).unwrap();
            let c_out = model.fuse(&mut g, store, &seq).unwrap();
            g.data(c_out).to_vec()
        };
        let before = run(&store);
        {
            let pid = store.lookup("fuse.codebook").unwrap();
            let t = store.value_mut(pid);
            t.data_mut()[7 * 12] += 1.0; // last codebook row
        }
        let after = run(&store);
        // without causality, even row 0 of C_out shifts
        assert_ne!(&before[..12], &after[..12]);
    }
}
