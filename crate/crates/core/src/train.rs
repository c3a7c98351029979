//! Mini-batch training loops for pre-training and task fine-tuning.
//!
//! Per-example gradients are computed in parallel and summed in example
//! order, so results do not depend on the number of worker threads.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    backward, clip_global_norm, encode, encode_with_cache, mlm_loss_and_grad, mlm_row_logits,
    read_checkpoint, write_checkpoint, Adam, CheckpointError, EncoderError, EncoderInput,
    OptimConfig, Params,
};
use crate::heads::{
    attr_loss_and_grad, openie_loss_and_grad, qa_loss_and_grad, sample_pairs, HeadError,
    HeadParams, OpenieTargets,
};
use crate::linearizer::PositionedSequence;
use crate::masker::{
    apply_masks, plan_masks, rng_for, window_seed, MaskConfig, MaskError, MaskedSequence, IGNORE,
};
use crate::pipeline::{gather_rows, scatter_rows, AttrExample, OpenieExample, QaExample};
use crate::tensor::{log_sum_exp, Mat};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("no training examples")]
    NoExamples,
    #[error("task heads are required for fine-tuning")]
    MissingHeads,
}

/// Encoder plus optional task heads, trained as one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub enc: Params<f32>,
    pub heads: Option<HeadParams<f32>>,
    /// Keeps encoder weights fixed (heads still train).
    pub freeze_encoder: bool,
}

impl Model {
    pub fn new(enc: Params<f32>, heads: Option<HeadParams<f32>>) -> Self {
        Self {
            enc,
            heads,
            freeze_encoder: false,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            enc: self.enc.zeros_like(),
            heads: self.heads.as_ref().map(HeadParams::zeros_like),
            freeze_encoder: self.freeze_encoder,
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat<f32>> {
        let mut out = self.enc.tensors_mut();
        if let Some(h) = self.heads.as_mut() {
            out.extend(h.tensors_mut());
        }
        out
    }

    fn trainable(&self) -> Vec<bool> {
        let n = self.enc.tensors().len();
        let mut out: Vec<bool> = (0..n)
            .map(|i| !self.freeze_encoder && self.enc.is_trainable(i))
            .collect();
        if let Some(h) = &self.heads {
            out.extend(std::iter::repeat_n(true, h.tensors().len()));
        }
        out
    }

    fn add_assign(&mut self, other: &Self) {
        self.enc.add_assign(&other.enc);
        if let (Some(a), Some(b)) = (self.heads.as_mut(), other.heads.as_ref()) {
            a.add_assign(b);
        }
    }

    fn heads(&self) -> Result<&HeadParams<f32>, TrainError> {
        self.heads.as_ref().ok_or(TrainError::MissingHeads)
    }

    /// Writes encoder and heads into one checkpoint; tensor names carry an
    /// `encoder.` or `heads.` prefix.
    pub fn write_to(&self, w: impl Write) -> Result<(), CheckpointError> {
        let mut config =
            serde_json::json!({ "encoder": self.enc.cfg, "freeze_encoder": self.freeze_encoder });
        let mut tensors: Vec<(String, &Mat<f32>)> = self
            .enc
            .tensors()
            .into_iter()
            .map(|(n, m)| (format!("encoder.{n}"), m))
            .collect();
        if let Some(h) = &self.heads {
            config["heads"] = h.checkpoint_config();
            tensors.extend(
                h.tensors()
                    .into_iter()
                    .map(|(n, m)| (format!("heads.{n}"), m)),
            );
        }
        write_checkpoint(w, &config, &tensors)
    }

    pub fn read_from(r: impl Read) -> Result<Self, CheckpointError> {
        let ck = read_checkpoint(r)?;
        let enc = Params::from_checkpoint(&ck, "encoder.")?;
        let heads = if ck.config.get("heads").is_some() {
            Some(HeadParams::from_checkpoint(&ck, "heads.")?)
        } else {
            None
        };
        let freeze_encoder = ck
            .config
            .get("freeze_encoder")
            .and_then(|v| v.as_bool())
            .unwrap_or(false);
        Ok(Self {
            enc,
            heads,
            freeze_encoder,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Where an item sits in the schedule; used to derive per-item randomness.
#[derive(Debug, Clone, Copy)]
pub struct ItemCtx {
    pub step: usize,
    pub epoch: usize,
    pub index: usize,
    pub seed: u64,
}

/// Generic loop: `grad_fn` accumulates one item's gradient into its third
/// argument and returns the item's loss. The batch loss is the mean item loss.
pub fn train_loop<T, G, L>(
    model: &mut Model,
    items: &[T],
    cfg: &OptimConfig,
    grad_fn: G,
    mut on_step: L,
) -> Result<Vec<StepLog>, TrainError>
where
    T: Sync,
    G: Fn(&T, &Model, &mut Model, ItemCtx) -> Result<f64, TrainError> + Sync,
    L: FnMut(&StepLog),
{
    if items.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut epoch = 0;
    let mut adam = Adam::<f32>::new(cfg);
    let mut trace = Vec::with_capacity(cfg.total_steps);
    let mut first_loss = None;
    let batch = cfg.batch_size.max(1);
    for step in 0..cfg.total_steps {
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch.min(items.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
                epoch += 1;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let snapshot: &Model = model;
        let results = picks
            .par_iter()
            .map(|&i| {
                let mut g = snapshot.zeros_like();
                let ctx = ItemCtx {
                    step,
                    epoch,
                    index: i,
                    seed: cfg.seed,
                };
                grad_fn(&items[i], snapshot, &mut g, ctx).map(|loss| (loss, g))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut grads = model.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grads.add_assign(g);
        }
        let n = results.len() as f64;
        loss /= n;
        let first = *first_loss.get_or_insert(loss);
        if !loss.is_finite() || loss > cfg.max_loss_ratio * first.max(1e-12) {
            return Err(EncoderError::DivergenceDetected { step }.into());
        }
        let scale = 1.0 / n as f32;
        let mut gt = grads.tensors_mut();
        gt.iter_mut().for_each(|g| g.scale(scale));
        let grad_norm = clip_global_norm(gt, cfg.clip_norm);
        let lr = cfg.lr_at(step);
        let trainable = model.trainable();
        let grads_ref: Vec<&Mat<f32>> = grads.tensors_mut().into_iter().map(|g| &*g).collect();
        adam.step(model.tensors_mut(), grads_ref, &trainable, lr);
        let log = StepLog {
            step,
            loss,
            lr,
            grad_norm,
        };
        on_step(&log);
        trace.push(log);
    }
    Ok(trace)
}

fn dropout_rng(ctx: ItemCtx) -> ChaCha8Rng {
    rng_for(
        ctx.seed
            ^ (ctx.step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (ctx.index as u64).rotate_left(32),
    )
}

fn encode_train(
    model: &Model,
    input: EncoderInput<'_>,
    ctx: ItemCtx,
) -> Result<(Mat<f32>, crate::encoder::EncodeCache<f32>), TrainError> {
    let mut rng = dropout_rng(ctx);
    let r: Option<&mut dyn rand::RngCore> = if model.enc.cfg.dropout > 0.0 {
        Some(&mut rng)
    } else {
        None
    };
    Ok(encode_with_cache(input, &model.enc, r)?)
}

fn encoder_backward(
    dh: &Mat<f32>,
    cache: &crate::encoder::EncodeCache<f32>,
    model: &Model,
    grads: &mut Model,
) {
    if !model.freeze_encoder {
        backward(dh, cache, &model.enc, &mut grads.enc);
    }
}

/// Training windows for pre-training: fixed corruptions, or fresh masks
/// every epoch drawn from per-window seeds.
pub enum MaskSource<'a> {
    Fixed(&'a [MaskedSequence]),
    Dynamic {
        seqs: &'a [PositionedSequence],
        cfg: MaskConfig,
        vocab_size: usize,
    },
}

/// Corruption of `seq` for a given epoch of dynamic masking.
pub fn mask_for_epoch(
    seq: &PositionedSequence,
    cfg: &MaskConfig,
    vocab_size: usize,
    epoch: usize,
) -> Result<MaskedSequence, MaskError> {
    let seed = window_seed(
        cfg.seed.wrapping_add(epoch as u64),
        &seq.doc_id,
        seq.window_index,
    );
    let mut rng = rng_for(seed);
    let plan = plan_masks(seq, cfg.rate, cfg.node_share, &mut rng, seed);
    apply_masks(seq, &plan, vocab_size, &mut rng)
}

fn mlm_item(
    ms: &MaskedSequence,
    model: &Model,
    grads: &mut Model,
    ctx: ItemCtx,
) -> Result<f64, TrainError> {
    let (h, cache) = encode_train(model, EncoderInput::from(ms), ctx)?;
    let out = mlm_loss_and_grad(&h, &ms.labels, &model.enc, &mut grads.enc)?;
    encoder_backward(&out.dh, &cache, model, grads);
    Ok(out.loss as f64)
}

pub fn pretrain(
    model: &mut Model,
    source: MaskSource<'_>,
    cfg: &OptimConfig,
    on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>, TrainError> {
    match source {
        MaskSource::Fixed(items) => train_loop(model, items, cfg, mlm_item, on_step),
        MaskSource::Dynamic {
            seqs,
            cfg: mask_cfg,
            vocab_size,
        } => train_loop(
            model,
            seqs,
            cfg,
            |seq, m, g, ctx| {
                let ms = mask_for_epoch(seq, &mask_cfg, vocab_size, ctx.epoch)?;
                mlm_item(&ms, m, g, ctx)
            },
            on_step,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmEval {
    /// Mean negative log-likelihood over all selected positions.
    pub loss: f64,
    pub token_accuracy: f64,
    /// Accuracy over positions belonging to whole-node-masked nodes.
    pub whole_node_accuracy: f64,
    pub tokens: usize,
    pub whole_node_tokens: usize,
}

pub fn evaluate_mlm(enc: &Params<f32>, examples: &[MaskedSequence]) -> Result<MlmEval, TrainError> {
    let per = examples
        .par_iter()
        .map(|ms| {
            let h = encode(EncoderInput::from(ms), enc)?;
            let rows: Vec<usize> = (0..ms.labels.len())
                .filter(|&i| ms.labels[i] != IGNORE)
                .collect();
            let in_node: BTreeSet<usize> = ms
                .plan
                .node_masked
                .iter()
                .flat_map(|v| ms.seq.node_ranges[v].clone())
                .collect();
            let logits = mlm_row_logits(&h, &rows, enc);
            let mut acc = (0.0f64, 0usize, 0usize, 0usize, 0usize);
            for (r, &i) in rows.iter().enumerate() {
                let row = logits.row(r);
                let label = ms.labels[i] as usize;
                let best = (1..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                acc.0 += (log_sum_exp(row) - row[label]) as f64;
                acc.1 += 1;
                acc.2 += usize::from(best == label);
                if in_node.contains(&i) {
                    acc.3 += 1;
                    acc.4 += usize::from(best == label);
                }
            }
            Ok::<_, TrainError>(acc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (mut loss, mut n, mut hit, mut nn, mut nhit) = (0.0, 0, 0, 0, 0);
    for (l, a, b, c, d) in per {
        loss += l;
        n += a;
        hit += b;
        nn += c;
        nhit += d;
    }
    if n == 0 {
        return Err(EncoderError::NoSelectedPositions.into());
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MlmEval {
        loss: loss / n as f64,
        token_accuracy: ratio(hit, n),
        whole_node_accuracy: ratio(nhit, nn),
        tokens: n,
        whole_node_tokens: nn,
    })
}

/// Inverse-frequency class weights, normalised to mean 1 over present
/// classes; absent classes get weight 1.
pub fn balanced_class_weights(examples: &[AttrExample], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for e in examples {
        for &g in &e.gold {
            counts[g] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                total as f64 / (present as f64 * c as f64)
            }
        })
        .collect()
}

pub fn finetune_attr(
    model: &mut Model,
    examples: &[AttrExample],
    class_weights: Option<&[f64]>,
    cfg: &OptimConfig,
    on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>, TrainError> {
    model.heads()?;
    train_loop(
        model,
        examples,
        cfg,
        |ex, m, g, ctx| {
            let (h, cache) = encode_train(m, EncoderInput::from(&ex.seq), ctx)?;
            let anchors = ex.anchors();
            let heads = m.heads()?;
            let gh = g.heads.as_mut().ok_or(TrainError::MissingHeads)?;
            let (loss, drows) = attr_loss_and_grad(
                &gather_rows(&h, &anchors),
                &ex.gold,
                class_weights,
                heads,
                gh,
            )?;
            encoder_backward(&scatter_rows(&drows, &anchors, h.rows), &cache, m, g);
            Ok(loss as f64)
        },
        on_step,
    )
}

pub fn finetune_openie(
    model: &mut Model,
    examples: &[OpenieExample],
    cfg: &OptimConfig,
    on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>, TrainError> {
    model.heads()?;
    train_loop(
        model,
        examples,
        cfg,
        |ex, m, g, ctx| {
            let heads = m.heads()?;
            let mut rng = dropout_rng(ItemCtx {
                seed: ctx.seed ^ heads.cfg.seed,
                ..ctx
            });
            let pairs = sample_pairs(&ex.candidates, &ex.positives, heads.cfg.neg_ratio, &mut rng);
            let targets = OpenieTargets {
                is_pred: ex.is_pred.clone(),
                is_obj: ex.is_obj.clone(),
                pairs,
            };
            let (h, cache) = encode_train(m, EncoderInput::from(&ex.seq), ctx)?;
            let anchors = ex.anchors();
            let gh = g.heads.as_mut().ok_or(TrainError::MissingHeads)?;
            let (loss, drows) =
                openie_loss_and_grad(&gather_rows(&h, &anchors), &targets, heads, gh)?;
            encoder_backward(&scatter_rows(&drows, &anchors, h.rows), &cache, m, g);
            Ok(loss as f64)
        },
        on_step,
    )
}

pub fn finetune_qa(
    model: &mut Model,
    examples: &[QaExample],
    cfg: &OptimConfig,
    on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>, TrainError> {
    model.heads()?;
    train_loop(
        model,
        examples,
        cfg,
        |ex, m, g, ctx| {
            let (h, cache) = encode_train(m, EncoderInput::from(&ex.seq), ctx)?;
            let heads = m.heads()?;
            let gh = g.heads.as_mut().ok_or(TrainError::MissingHeads)?;
            let (loss, dh) = qa_loss_and_grad(&h, ex.gold, heads, gh)?;
            encoder_backward(&dh, &cache, m, g);
            Ok(loss as f64)
        },
        on_step,
    )
}
