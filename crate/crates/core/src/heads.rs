//! Task heads on top of encoder outputs: node classification for attribute
//! extraction, node-pair scoring for open extraction, and start/end span
//! scoring for question answering.
//!
//! Node-level heads consume one row per node, taken from the encoder output at
//! the node's tag token. All heads return the gradient with respect to their
//! input rows so the encoder can be trained jointly.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Checkpoint, CheckpointError};
use crate::linearizer::PositionedSequence;
use crate::tensor::{
    add_matmul_tn, gelu, gelu_grad, log_sum_exp, matmul, matmul_nt, sigmoid, softmax, Mat, Scalar,
};

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{pairs} candidate pairs exceed the cap of {cap}")]
    PairBudgetExceeded { pairs: usize, cap: usize },
    #[error("no span satisfies the answer constraints")]
    NoValidSpan,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Which scores must clear 0.5 after the sigmoid for a pair to be emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenieGate {
    /// Predicate score, object score and pair score.
    PredObjPair,
    /// Predicate score, compatibility score and pair score.
    PredCompatPair,
}

/// What to do when a window has more candidate pairs than the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOverflow {
    /// Keep the first `cap` pairs in preorder.
    Truncate,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Number of attribute types, not counting None.
    pub num_attrs: usize,
    /// Hidden width of the attribute MLP; 0 means the encoder width.
    pub attr_hidden: usize,
    pub pair_cap: usize,
    pub pair_overflow: PairOverflow,
    /// Negatives sampled per positive pair during training.
    pub neg_ratio: f64,
    pub gate: OpenieGate,
    pub max_answer_len: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            num_attrs: 0,
            attr_hidden: 0,
            pair_cap: 5000,
            pair_overflow: PairOverflow::Truncate,
            neg_ratio: 5.0,
            gate: OpenieGate::PredObjPair,
            max_answer_len: 30,
            seed: 0,
        }
    }
}

/// Parameters of all three heads. Linear maps are input-major (`x W + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<F> {
    pub cfg: HeadConfig,
    pub attr_w1: Mat<F>,
    pub attr_b1: Mat<F>,
    pub attr_w2: Mat<F>,
    pub attr_b2: Mat<F>,
    pub pred_w: Mat<F>,
    pub pred_b: Mat<F>,
    pub obj_w: Mat<F>,
    pub obj_b: Mat<F>,
    pub pair_wp: Mat<F>,
    pub pair_wo: Mat<F>,
    /// Weights over `[s_p, s_o, s_m]`.
    pub pair_w: Mat<F>,
    pub pair_b: Mat<F>,
    pub start_w: Mat<F>,
    pub start_b: Mat<F>,
    pub end_w: Mat<F>,
    pub end_b: Mat<F>,
}

const INIT_STD: f64 = 0.02;
const NUM_TENSORS: usize = 16;

impl<F: Scalar> HeadParams<F> {
    pub fn init(cfg: &HeadConfig, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let hid = if cfg.attr_hidden == 0 {
            d
        } else {
            cfg.attr_hidden
        };
        let k = cfg.num_attrs + 1;
        Self {
            cfg: cfg.clone(),
            attr_w1: Mat::randn(d, hid, INIT_STD, &mut rng),
            attr_b1: Mat::zeros(1, hid),
            attr_w2: Mat::randn(hid, k, INIT_STD, &mut rng),
            attr_b2: Mat::zeros(1, k),
            pred_w: Mat::randn(d, 1, INIT_STD, &mut rng),
            pred_b: Mat::zeros(1, 1),
            obj_w: Mat::randn(d, 1, INIT_STD, &mut rng),
            obj_b: Mat::zeros(1, 1),
            pair_wp: Mat::randn(d, d, INIT_STD, &mut rng),
            pair_wo: Mat::randn(d, d, INIT_STD, &mut rng),
            pair_w: Mat::from_vec(3, 1, vec![F::one(); 3]),
            pair_b: Mat::zeros(1, 1),
            start_w: Mat::randn(d, 1, INIT_STD, &mut rng),
            start_b: Mat::zeros(1, 1),
            end_w: Mat::randn(d, 1, INIT_STD, &mut rng),
            end_b: Mat::zeros(1, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.attr_w1.rows
    }

    pub fn num_classes(&self) -> usize {
        self.attr_w2.cols
    }

    pub fn tensors(&self) -> Vec<(String, &Mat<F>)> {
        let t: [(&str, &Mat<F>); NUM_TENSORS] = [
            ("attr.w1", &self.attr_w1),
            ("attr.b1", &self.attr_b1),
            ("attr.w2", &self.attr_w2),
            ("attr.b2", &self.attr_b2),
            ("openie.pred_w", &self.pred_w),
            ("openie.pred_b", &self.pred_b),
            ("openie.obj_w", &self.obj_w),
            ("openie.obj_b", &self.obj_b),
            ("openie.wp", &self.pair_wp),
            ("openie.wo", &self.pair_wo),
            ("openie.pair_w", &self.pair_w),
            ("openie.pair_b", &self.pair_b),
            ("qa.start_w", &self.start_w),
            ("qa.start_b", &self.start_b),
            ("qa.end_w", &self.end_w),
            ("qa.end_b", &self.end_b),
        ];
        t.into_iter().map(|(n, m)| (n.to_string(), m)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<F>> {
        vec![
            &mut self.attr_w1,
            &mut self.attr_b1,
            &mut self.attr_w2,
            &mut self.attr_b2,
            &mut self.pred_w,
            &mut self.pred_b,
            &mut self.obj_w,
            &mut self.obj_b,
            &mut self.pair_wp,
            &mut self.pair_wo,
            &mut self.pair_w,
            &mut self.pair_b,
            &mut self.start_w,
            &mut self.start_b,
            &mut self.end_w,
            &mut self.end_b,
        ]
    }

    pub fn tensors_named_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let names: Vec<String> = self.tensors().into_iter().map(|(n, _)| n).collect();
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
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

    pub fn cast<G: Scalar>(&self) -> HeadParams<G> {
        let mut out = HeadParams::<G>::init(&self.cfg, self.input_dim());
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Rebuilds heads from a checkpoint whose config holds a `heads` entry
    /// (with `input_dim`) and whose tensors carry `prefix`.
    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self, CheckpointError> {
        let entry = ck.config.get("heads").cloned().unwrap_or_default();
        let d = entry
            .get("input_dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CheckpointError::Malformed("heads.input_dim missing".into()))?;
        let cfg: HeadConfig =
            serde_json::from_value(entry.get("config").cloned().unwrap_or_default())?;
        let mut hp = Self::init(&cfg, d as usize);
        ck.load_into(prefix, hp.tensors_named_mut())?;
        Ok(hp)
    }

    /// The `heads` entry expected by [`HeadParams::from_checkpoint`].
    pub fn checkpoint_config(&self) -> serde_json::Value {
        serde_json::json!({ "input_dim": self.input_dim(), "config": self.cfg })
    }
}

fn check_rows<F: Scalar>(h: &Mat<F>, hp: &HeadParams<F>) -> Result<(), HeadError> {
    if h.cols != hp.input_dim() {
        return Err(HeadError::ShapeMismatch(format!(
            "rows have width {}, heads expect {}",
            h.cols,
            hp.input_dim()
        )));
    }
    Ok(())
}

// Attribute extraction.

struct AttrCache<F> {
    pre: Mat<F>,
    act: Mat<F>,
}

fn attr_forward_cached<F: Scalar>(h: &Mat<F>, hp: &HeadParams<F>) -> (Mat<F>, AttrCache<F>) {
    let mut pre = matmul(h, &hp.attr_w1);
    pre.add_row_vector(&hp.attr_b1.data);
    let act = Mat {
        rows: pre.rows,
        cols: pre.cols,
        data: pre.data.iter().map(|&x| gelu(x)).collect(),
    };
    let mut scores = matmul(&act, &hp.attr_w2);
    scores.add_row_vector(&hp.attr_b2.data);
    (scores, AttrCache { pre, act })
}

/// Scores over `K + 1` classes (class 0 is None) for each node row.
pub fn attr_forward<F: Scalar>(h: &Mat<F>, hp: &HeadParams<F>) -> Result<Mat<F>, HeadError> {
    check_rows(h, hp)?;
    Ok(attr_forward_cached(h, hp).0)
}

fn class_weight(weights: Option<&[f64]>, class: usize) -> f64 {
    weights.map_or(1.0, |w| w[class])
}

fn check_labels(gold: &[usize], classes: usize) -> Result<(), HeadError> {
    match gold.iter().find(|&&g| g >= classes) {
        Some(&label) => Err(HeadError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Cross-entropy against gold classes, averaged with optional per-class
/// weights (weighted mean).
pub fn attr_loss<F: Scalar>(
    scores: &Mat<F>,
    gold: &[usize],
    weights: Option<&[f64]>,
) -> Result<F, HeadError> {
    check_labels(gold, scores.cols)?;
    let mut total = 0.0;
    let mut norm = 0.0;
    for (i, &g) in gold.iter().enumerate() {
        let row = scores.row(i);
        let w = class_weight(weights, g);
        total += w * (log_sum_exp(row) - row[g]).to_f64().unwrap();
        norm += w;
    }
    Ok(F::lit(if norm > 0.0 { total / norm } else { 0.0 }))
}

/// Loss plus gradients: head gradients are accumulated into `grads`, the
/// gradient with respect to `h` is returned.
pub fn attr_loss_and_grad<F: Scalar>(
    h: &Mat<F>,
    gold: &[usize],
    weights: Option<&[f64]>,
    hp: &HeadParams<F>,
    grads: &mut HeadParams<F>,
) -> Result<(F, Mat<F>), HeadError> {
    check_rows(h, hp)?;
    if gold.len() != h.rows {
        return Err(HeadError::ShapeMismatch(format!(
            "{} labels for {} rows",
            gold.len(),
            h.rows
        )));
    }
    check_labels(gold, hp.num_classes())?;
    let (scores, cache) = attr_forward_cached(h, hp);
    let loss = attr_loss(&scores, gold, weights)?;
    let norm: f64 = gold.iter().map(|&g| class_weight(weights, g)).sum();
    let mut ds = scores;
    for (i, &g) in gold.iter().enumerate() {
        let scale = if norm > 0.0 {
            F::lit(class_weight(weights, g) / norm)
        } else {
            F::zero()
        };
        let row = ds.row_mut(i);
        softmax(row);
        row[g] -= F::one();
        row.iter_mut().for_each(|x| *x *= scale);
    }
    add_matmul_tn(&mut grads.attr_w2, &cache.act, &ds);
    ds.col_sums_into(&mut grads.attr_b2.data);
    let mut dpre = matmul_nt(&ds, &hp.attr_w2);
    for (g, &x) in dpre.data.iter_mut().zip(&cache.pre.data) {
        *g *= gelu_grad(x);
    }
    add_matmul_tn(&mut grads.attr_w1, h, &dpre);
    dpre.col_sums_into(&mut grads.attr_b1.data);
    Ok((loss, matmul_nt(&dpre, &hp.attr_w1)))
}

/// Argmax class per row; ties go to the lowest class id.
pub fn attr_predict<F: Scalar>(scores: &Mat<F>) -> Vec<usize> {
    (0..scores.rows)
        .map(|i| {
            let row = scores.row(i);
            (1..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

// Open information extraction.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores<F> {
    /// Predicate score of the first node.
    pub sp: F,
    /// Object score of the second node.
    pub so: F,
    /// Bilinear compatibility `(W_p h_i) . (W_o h_j)`.
    pub sm: F,
    /// Pair score combining the three.
    pub s: F,
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn combine<F: Scalar>(sp: F, so: F, sm: F, hp: &HeadParams<F>) -> F {
    hp.pair_w.data[0] * sp + hp.pair_w.data[1] * so + hp.pair_w.data[2] * sm + hp.pair_b.data[0]
}

/// Scores for a single ordered pair of node representations.
pub fn openie_forward<F: Scalar>(hi: &[F], hj: &[F], hp: &HeadParams<F>) -> PairScores<F> {
    let sp = dot(hi, &hp.pred_w.data) + hp.pred_b.data[0];
    let so = dot(hj, &hp.obj_w.data) + hp.obj_b.data[0];
    let hi = Mat::from_vec(1, hi.len(), hi.to_vec());
    let hj = Mat::from_vec(1, hj.len(), hj.to_vec());
    let sm = dot(
        &matmul(&hi, &hp.pair_wp).data,
        &matmul(&hj, &hp.pair_wo).data,
    );
    PairScores {
        sp,
        so,
        sm,
        s: combine(sp, so, sm, hp),
    }
}

struct NodeProjections<F> {
    sp: Vec<F>,
    so: Vec<F>,
    a: Mat<F>,
    b: Mat<F>,
}

fn project<F: Scalar>(h: &Mat<F>, hp: &HeadParams<F>) -> NodeProjections<F> {
    let sp = matmul(h, &hp.pred_w)
        .data
        .into_iter()
        .map(|x| x + hp.pred_b.data[0])
        .collect();
    let so = matmul(h, &hp.obj_w)
        .data
        .into_iter()
        .map(|x| x + hp.obj_b.data[0])
        .collect();
    NodeProjections {
        sp,
        so,
        a: matmul(h, &hp.pair_wp),
        b: matmul(h, &hp.pair_wo),
    }
}

/// Scores for many pairs of rows of `h`, sharing the per-node projections.
pub fn openie_scores<F: Scalar>(
    h: &Mat<F>,
    pairs: &[(usize, usize)],
    hp: &HeadParams<F>,
) -> Result<Vec<PairScores<F>>, HeadError> {
    check_rows(h, hp)?;
    let pr = project(h, hp);
    Ok(pairs
        .iter()
        .map(|&(i, j)| {
            let sm = dot(pr.a.row(i), pr.b.row(j));
            PairScores {
                sp: pr.sp[i],
                so: pr.so[j],
                sm,
                s: combine(pr.sp[i], pr.so[j], sm, hp),
            }
        })
        .collect())
}

/// Training targets for one window: per-node predicate/object flags and
/// labelled ordered pairs `(i, j, is_relation)` over node rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpenieTargets {
    pub is_pred: Vec<bool>,
    pub is_obj: Vec<bool>,
    pub pairs: Vec<(usize, usize, bool)>,
}

fn bce<F: Scalar>(logit: F, target: bool) -> F {
    // softplus(x) - y x, computed stably.
    let x = logit;
    let sp = x.max(F::zero()) + (F::one() + (-x.abs()).exp()).ln();
    if target {
        sp - x
    } else {
        sp
    }
}

fn bce_grad<F: Scalar>(logit: F, target: bool) -> F {
    sigmoid(logit) - if target { F::one() } else { F::zero() }
}

fn mean_scale<F: Scalar>(n: usize) -> F {
    if n == 0 {
        F::zero()
    } else {
        F::one() / F::from_usize(n).unwrap()
    }
}

/// Joint binary cross-entropy: mean over nodes for the predicate and object
/// classifiers plus mean over labelled pairs for the pair classifier.
pub fn openie_loss<F: Scalar>(
    h: &Mat<F>,
    t: &OpenieTargets,
    hp: &HeadParams<F>,
) -> Result<F, HeadError> {
    check_targets(h, t)?;
    let pr = project(h, hp);
    let n = mean_scale::<F>(h.rows);
    let m = mean_scale::<F>(t.pairs.len());
    let mut loss = F::zero();
    for i in 0..h.rows {
        loss += n * (bce(pr.sp[i], t.is_pred[i]) + bce(pr.so[i], t.is_obj[i]));
    }
    for &(i, j, y) in &t.pairs {
        let sm = dot(pr.a.row(i), pr.b.row(j));
        loss += m * bce(combine(pr.sp[i], pr.so[j], sm, hp), y);
    }
    Ok(loss)
}

fn check_targets<F: Scalar>(h: &Mat<F>, t: &OpenieTargets) -> Result<(), HeadError> {
    if t.is_pred.len() != h.rows || t.is_obj.len() != h.rows {
        return Err(HeadError::ShapeMismatch(format!(
            "node flags do not cover {} rows",
            h.rows
        )));
    }
    if let Some(&(i, j, _)) = t
        .pairs
        .iter()
        .find(|&&(i, j, _)| i >= h.rows || j >= h.rows)
    {
        return Err(HeadError::ShapeMismatch(format!(
            "pair ({i}, {j}) outside {} rows",
            h.rows
        )));
    }
    Ok(())
}

pub fn openie_loss_and_grad<F: Scalar>(
    h: &Mat<F>,
    t: &OpenieTargets,
    hp: &HeadParams<F>,
    grads: &mut HeadParams<F>,
) -> Result<(F, Mat<F>), HeadError> {
    check_rows(h, hp)?;
    let loss = openie_loss(h, t, hp)?;
    let pr = project(h, hp);
    let n = mean_scale::<F>(h.rows);
    let m = mean_scale::<F>(t.pairs.len());
    let mut dsp: Vec<F> = (0..h.rows)
        .map(|i| n * bce_grad(pr.sp[i], t.is_pred[i]))
        .collect();
    let mut dso: Vec<F> = (0..h.rows)
        .map(|i| n * bce_grad(pr.so[i], t.is_obj[i]))
        .collect();
    let mut da = Mat::zeros(h.rows, h.cols);
    let mut db = Mat::zeros(h.rows, h.cols);
    let (w0, w1, w2) = (hp.pair_w.data[0], hp.pair_w.data[1], hp.pair_w.data[2]);
    for &(i, j, y) in &t.pairs {
        let sm = dot(pr.a.row(i), pr.b.row(j));
        let ds = m * bce_grad(combine(pr.sp[i], pr.so[j], sm, hp), y);
        dsp[i] += ds * w0;
        dso[j] += ds * w1;
        grads.pair_w.data[0] += ds * pr.sp[i];
        grads.pair_w.data[1] += ds * pr.so[j];
        grads.pair_w.data[2] += ds * sm;
        grads.pair_b.data[0] += ds;
        let dsm = ds * w2;
        for k in 0..h.cols {
            da.data[i * h.cols + k] += dsm * pr.b.at(j, k);
            db.data[j * h.cols + k] += dsm * pr.a.at(i, k);
        }
    }
    let dsp = Mat::from_vec(h.rows, 1, dsp);
    let dso = Mat::from_vec(h.rows, 1, dso);
    add_matmul_tn(&mut grads.pred_w, h, &dsp);
    add_matmul_tn(&mut grads.obj_w, h, &dso);
    grads.pred_b.data[0] += dsp.data.iter().copied().sum();
    grads.obj_b.data[0] += dso.data.iter().copied().sum();
    add_matmul_tn(&mut grads.pair_wp, h, &da);
    add_matmul_tn(&mut grads.pair_wo, h, &db);
    let mut dh = matmul_nt(&dsp, &hp.pred_w);
    dh.add_assign(&matmul_nt(&dso, &hp.obj_w));
    dh.add_assign(&matmul_nt(&da, &hp.pair_wp));
    dh.add_assign(&matmul_nt(&db, &hp.pair_wo));
    Ok((loss, dh))
}

/// Whether a scored pair is emitted: every gated score must satisfy
/// `sigmoid(x) >= 0.5`.
pub fn openie_extract<F: Scalar>(sc: &PairScores<F>, gate: OpenieGate) -> bool {
    let half = F::lit(0.5);
    let second = match gate {
        OpenieGate::PredObjPair => sc.so,
        OpenieGate::PredCompatPair => sc.sm,
    };
    [sc.sp, second, sc.s]
        .into_iter()
        .all(|x| sigmoid(x) >= half)
}

/// All ordered pairs of distinct candidate rows in preorder (row order), up to
/// `cap`.
pub fn candidate_pairs(
    rows: &[usize],
    cap: usize,
    overflow: PairOverflow,
) -> Result<Vec<(usize, usize)>, HeadError> {
    let total = rows.len() * rows.len().saturating_sub(1);
    if total > cap && overflow == PairOverflow::Error {
        return Err(HeadError::PairBudgetExceeded { pairs: total, cap });
    }
    Ok(rows
        .iter()
        .flat_map(|&i| rows.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
        .take(cap)
        .collect())
}

/// Keeps every positive candidate and samples up to `ratio` negatives per
/// positive (at least one negative when negatives exist). Output keeps
/// candidate order.
pub fn sample_pairs(
    candidates: &[(usize, usize)],
    positives: &BTreeSet<(usize, usize)>,
    ratio: f64,
    rng: &mut impl Rng,
) -> Vec<(usize, usize, bool)> {
    let pos: Vec<usize> = (0..candidates.len())
        .filter(|&k| positives.contains(&candidates[k]))
        .collect();
    let mut neg: Vec<usize> = (0..candidates.len())
        .filter(|&k| !positives.contains(&candidates[k]))
        .collect();
    let want = ((pos.len() as f64 * ratio).round() as usize)
        .max(1)
        .min(neg.len());
    let (chosen, _) = neg.partial_shuffle(rng, want);
    let mut keep: Vec<usize> = pos.into_iter().chain(chosen.iter().copied()).collect();
    keep.sort_unstable();
    keep.into_iter()
        .map(|k| {
            (
                candidates[k].0,
                candidates[k].1,
                positives.contains(&candidates[k]),
            )
        })
        .collect()
}

// Question answering.

/// Start and end logits for each token row.
pub fn qa_forward<F: Scalar>(
    h: &Mat<F>,
    hp: &HeadParams<F>,
) -> Result<(Vec<F>, Vec<F>), HeadError> {
    check_rows(h, hp)?;
    let s = matmul(h, &hp.start_w)
        .data
        .into_iter()
        .map(|x| x + hp.start_b.data[0])
        .collect();
    let e = matmul(h, &hp.end_w)
        .data
        .into_iter()
        .map(|x| x + hp.end_b.data[0])
        .collect();
    Ok((s, e))
}

/// Cross-entropy of the start distribution plus that of the end distribution.
pub fn qa_loss<F: Scalar>(start: &[F], end: &[F], gold: (usize, usize)) -> Result<F, HeadError> {
    if gold.0 >= start.len() || gold.1 >= end.len() {
        return Err(HeadError::LabelOutOfRange {
            label: gold.0.max(gold.1),
            classes: start.len(),
        });
    }
    Ok(log_sum_exp(start) - start[gold.0] + log_sum_exp(end) - end[gold.1])
}

pub fn qa_loss_and_grad<F: Scalar>(
    h: &Mat<F>,
    gold: (usize, usize),
    hp: &HeadParams<F>,
    grads: &mut HeadParams<F>,
) -> Result<(F, Mat<F>), HeadError> {
    let (mut s, mut e) = qa_forward(h, hp)?;
    let loss = qa_loss(&s, &e, gold)?;
    softmax(&mut s);
    softmax(&mut e);
    s[gold.0] -= F::one();
    e[gold.1] -= F::one();
    let ds = Mat::from_vec(h.rows, 1, s);
    let de = Mat::from_vec(h.rows, 1, e);
    add_matmul_tn(&mut grads.start_w, h, &ds);
    add_matmul_tn(&mut grads.end_w, h, &de);
    grads.start_b.data[0] += ds.data.iter().copied().sum();
    grads.end_b.data[0] += de.data.iter().copied().sum();
    let mut dh = matmul_nt(&ds, &hp.start_w);
    dh.add_assign(&matmul_nt(&de, &hp.end_w));
    Ok((loss, dh))
}

/// Span logits of one window and the token ranges an answer may occupy.
/// A span never crosses a range boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct QaWindowScores {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub segments: Vec<Range<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub window: usize,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Answer segments of an assembled QA input: the YES and NO tokens (when
/// present) as single-token segments, then the document region.
pub fn qa_segments(seq: &PositionedSequence, yes_no: bool) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    if yes_no && seq.prefix_len >= 2 {
        out.push(seq.prefix_len - 2..seq.prefix_len - 1);
        out.push(seq.prefix_len - 1..seq.prefix_len);
    }
    if seq.prefix_len < seq.len() {
        out.push(seq.prefix_len..seq.len());
    }
    out
}

/// Best `(i, j)` maximising `start[i] + end[j]` with `i <= j <= i + max_len`
/// inside one segment, across all windows. Ties keep the earliest window,
/// then start, then end.
pub fn qa_predict(windows: &[QaWindowScores], max_len: usize) -> Result<SpanPrediction, HeadError> {
    let mut best: Option<SpanPrediction> = None;
    for (w, win) in windows.iter().enumerate() {
        let mut segs = win.segments.clone();
        segs.sort_by_key(|r| r.start);
        for seg in segs {
            let end = seg.end.min(win.start.len()).min(win.end.len());
            for i in seg.start..end {
                for j in i..end.min(i + max_len + 1) {
                    let score = win.start[i] + win.end[j];
                    if best.is_none_or(|b| score > b.score) {
                        best = Some(SpanPrediction {
                            window: w,
                            start: i,
                            end: j,
                            score,
                        });
                    }
                }
            }
        }
    }
    best.ok_or(HeadError::NoValidSpan)
}
