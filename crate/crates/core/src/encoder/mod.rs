//! Structure-aware transformer encoder with a tied masked-language-model head.
//!
//! The input embedding of token `i` is its word embedding plus one learned
//! embedding per tree-position feature. Blocks are post-norm: attention with
//! `1/sqrt(d_head)` scaling, residual, layer norm, then a GELU feed-forward,
//! residual, layer norm. The MLM head maps `h` through `W_l h + b_l` and
//! scores each vocabulary entry by a dot product with its input embedding.
//!
//! Everything is generic over [`Scalar`] so the same code trains in `f32` and
//! is gradient-checked in `f64`.

mod checkpoint;
mod forward;
mod gradcheck;
mod mlm;
mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearizer::{PosRow, NUM_POSITIONS};
use crate::tensor::{Mat, Scalar};
use crate::tokenizer::TokenId;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION,
};
pub use forward::{backward, embed, encode, encode_with_cache, EncodeCache};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use mlm::{mlm_logits, mlm_loss, mlm_loss_and_grad, mlm_row_logits, MlmOutput};
pub use optim::{clip_global_norm, Adam, OptimConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("index {index} outside table {table} of size {size}")]
    IndexOutOfTable {
        table: String,
        index: usize,
        size: usize,
    },
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(usize),
    #[error("no positions selected for the loss")]
    NoSelectedPositions,
    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("loss diverged at step {step}")]
    DivergenceDetected { step: usize },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub pos_sizes: [usize; NUM_POSITIONS],
    pub dropout: f64,
    pub max_len: usize,
    pub layer_norm_eps: f64,
    /// When false, every position table is zero and frozen, leaving a plain
    /// bag-of-tokens transformer.
    pub use_structure: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            vocab_size: 0,
            pos_sizes: [512, 512, 512, 64, 64, 1024],
            dropout: 0.0,
            max_len: 1024,
            layer_norm_eps: 1e-5,
            use_structure: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Reference size of the full-scale encoder.
    pub const FULL_SCALE_LAYERS: usize = 12;
    pub const FULL_SCALE_HIDDEN: usize = 768;

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be a positive multiple of heads");
        }
        if self.vocab_size == 0 || self.ffn == 0 {
            return bad("vocab_size and ffn must be positive");
        }
        if self.pos_sizes.contains(&0) {
            return bad("position tables must be non-empty");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub wq: Mat<F>,
    pub wk: Mat<F>,
    pub wv: Mat<F>,
    pub wo: Mat<F>,
    pub bo: Mat<F>,
    pub ln1_g: Mat<F>,
    pub ln1_b: Mat<F>,
    pub w1: Mat<F>,
    pub b1: Mat<F>,
    pub w2: Mat<F>,
    pub b2: Mat<F>,
    pub ln2_g: Mat<F>,
    pub ln2_b: Mat<F>,
}

/// All encoder tensors. Linear maps are stored input-major (`x W + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub cfg: EncoderConfig,
    pub word: Mat<F>,
    pub pos: Vec<Mat<F>>,
    pub layers: Vec<LayerParams<F>>,
    pub mlm_w: Mat<F>,
    pub mlm_b: Mat<F>,
}

const INIT_STD: f64 = 0.02;

impl<F: Scalar> LayerParams<F> {
    fn init(d: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: Mat::randn(d, d, INIT_STD, rng),
            wk: Mat::randn(d, d, INIT_STD, rng),
            wv: Mat::randn(d, d, INIT_STD, rng),
            wo: Mat::randn(d, d, INIT_STD, rng),
            bo: Mat::zeros(1, d),
            ln1_g: Mat::filled(1, d, F::one()),
            ln1_b: Mat::zeros(1, d),
            w1: Mat::randn(d, ffn, INIT_STD, rng),
            b1: Mat::zeros(1, ffn),
            w2: Mat::randn(ffn, d, INIT_STD, rng),
            b2: Mat::zeros(1, d),
            ln2_g: Mat::filled(1, d, F::one()),
            ln2_b: Mat::zeros(1, d),
        }
    }

    fn tensors(&self) -> [(&'static str, &Mat<F>); 13] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Mat<F>; 13] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

impl<F: Scalar> Params<F> {
    /// Normal(0, 0.02^2) weights, unit layer-norm gains, zero biases.
    pub fn init(cfg: &EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.hidden;
        let word = Mat::randn(cfg.vocab_size, d, INIT_STD, &mut rng);
        let pos = cfg
            .pos_sizes
            .iter()
            .map(|&size| {
                let m = Mat::randn(size, d, INIT_STD, &mut rng);
                if cfg.use_structure {
                    m
                } else {
                    Mat::zeros(size, d)
                }
            })
            .collect();
        let layers = (0..cfg.layers)
            .map(|_| LayerParams::init(d, cfg.ffn, &mut rng))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            word,
            pos,
            layers,
            mlm_w: Mat::randn(d, d, INIT_STD, &mut rng),
            mlm_b: Mat::zeros(1, d),
        })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
    }

    /// Tensors in their declared order with stable names.
    pub fn tensors(&self) -> Vec<(String, &Mat<F>)> {
        let mut out = vec![("word".to_string(), &self.word)];
        out.extend(
            self.pos
                .iter()
                .enumerate()
                .map(|(k, m)| (format!("pos{k}"), m)),
        );
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .tensors()
                    .into_iter()
                    .map(|(n, m)| (format!("layer{l}.{n}"), m)),
            );
        }
        out.push(("mlm.w".into(), &self.mlm_w));
        out.push(("mlm.b".into(), &self.mlm_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<F>> {
        let mut out = vec![&mut self.word];
        out.extend(self.pos.iter_mut());
        for layer in self.layers.iter_mut() {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.mlm_w);
        out.push(&mut self.mlm_b);
        out
    }

    /// Whether the tensor at `index` in [`Params::tensors`] order is trained.
    pub fn is_trainable(&self, index: usize) -> bool {
        self.cfg.use_structure || !(1..=NUM_POSITIONS).contains(&index)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        let mut out = Params::<G> {
            cfg: self.cfg.clone(),
            word: self.word.cast(),
            pos: self.pos.iter().map(Mat::cast).collect(),
            layers: Vec::new(),
            mlm_w: self.mlm_w.cast(),
            mlm_b: self.mlm_b.cast(),
        };
        out.layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                wq: l.wq.cast(),
                wk: l.wk.cast(),
                wv: l.wv.cast(),
                wo: l.wo.cast(),
                bo: l.bo.cast(),
                ln1_g: l.ln1_g.cast(),
                ln1_b: l.ln1_b.cast(),
                w1: l.w1.cast(),
                b1: l.b1.cast(),
                w2: l.w2.cast(),
                b2: l.b2.cast(),
                ln2_g: l.ln2_g.cast(),
                ln2_b: l.ln2_b.cast(),
            })
            .collect();
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn tensors_named_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let names: Vec<String> = self.tensors().into_iter().map(|(n, _)| n).collect();
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    /// Rebuilds parameters from a checkpoint whose config holds an
    /// `encoder` entry and whose tensors carry `prefix`.
    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self, CheckpointError> {
        let cfg: EncoderConfig =
            serde_json::from_value(ck.config.get("encoder").cloned().unwrap_or_default())?;
        let mut p = Self::init(&cfg).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        ck.load_into(prefix, p.tensors_named_mut())?;
        Ok(p)
    }
}

/// Token ids and position rows fed to the encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    pub tokens: &'a [TokenId],
    pub pos: &'a [PosRow],
}

impl<'a> EncoderInput<'a> {
    pub fn new(tokens: &'a [TokenId], pos: &'a [PosRow]) -> Self {
        assert_eq!(
            tokens.len(),
            pos.len(),
            "tokens and positions differ in length"
        );
        Self { tokens, pos }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<'a> From<&'a crate::linearizer::PositionedSequence> for EncoderInput<'a> {
    fn from(s: &'a crate::linearizer::PositionedSequence) -> Self {
        Self::new(&s.tokens, &s.pos)
    }
}

impl<'a> From<&'a crate::masker::MaskedSequence> for EncoderInput<'a> {
    fn from(s: &'a crate::masker::MaskedSequence) -> Self {
        Self::new(&s.masked_tokens, &s.seq.pos)
    }
}
