//! Corruption plans for masked-language-model pre-training.
//!
//! One budget of `round(rate * T)` document tokens is split between whole
//! nodes (`node_share` of the budget) and individually sampled tokens. Each
//! selected position is replaced by `[MASK]` 80% of the time, by a random
//! word 10% of the time, and left unchanged otherwise.
//!
//! Randomness comes from ChaCha8 seeded with a 64-bit seed; per-window seeds
//! are `seed ^ fnv1a64(doc_id ++ window_index_le)`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::NodeId;
use crate::linearizer::{LinearRecord, PositionedSequence};
use crate::tokenizer::{TokenId, MASK, NUM_SPECIALS};

pub const RNG_NAME: &str = "chacha8";
pub const IGNORE: i64 = -1;
const MAX_NODE_MISFITS: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("plan covers {plan} tokens but the sequence has {seq}")]
    PlanMismatch { plan: usize, seq: usize },
    #[error("vocabulary has no non-special tokens to sample from")]
    EmptyVocab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub rate: f64,
    pub node_share: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            rate: 0.15,
            node_share: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub seq_len: usize,
    /// Sorted selected positions.
    pub positions: Vec<usize>,
    pub node_masked: BTreeSet<NodeId>,
    /// Original token at each selected position, aligned with `positions`.
    pub labels: Vec<TokenId>,
    pub actions: Vec<MaskAction>,
    pub seed: u64,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Seed for one window, derived from the run seed and the window identity.
pub fn window_seed(seed: u64, doc_id: &str, window_index: usize) -> u64 {
    let mut bytes = doc_id.as_bytes().to_vec();
    bytes.extend_from_slice(&(window_index as u64).to_le_bytes());
    seed ^ fnv1a64(&bytes)
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sample_action(rng: &mut impl Rng) -> MaskAction {
    let u: f64 = rng.gen();
    if u < 0.8 {
        MaskAction::Mask
    } else if u < 0.9 {
        MaskAction::Random
    } else {
        MaskAction::Keep
    }
}

pub fn plan_masks(
    seq: &PositionedSequence,
    rate: f64,
    node_share: f64,
    rng: &mut impl Rng,
    seed: u64,
) -> MaskPlan {
    assert!(rate > 0.0 && rate < 1.0, "mask rate must lie in (0, 1)");
    assert!(
        (0.0..=1.0).contains(&node_share),
        "node share must lie in [0, 1]"
    );
    let doc_len = seq.len() - seq.prefix_len;
    let budget = (rate * doc_len as f64).round() as usize;
    let node_budget = (node_share * budget as f64).floor() as usize;

    let mut selected = vec![false; seq.len()];
    let mut count = 0;
    let mut node_masked = BTreeSet::new();

    let mut nodes: Vec<(NodeId, std::ops::Range<usize>)> = seq.nodes().collect();
    nodes.shuffle(rng);
    let mut spent = 0;
    let mut misfits = 0;
    for (node, range) in nodes {
        if misfits >= MAX_NODE_MISFITS {
            break;
        }
        if spent + range.len() <= node_budget {
            spent += range.len();
            for i in range {
                selected[i] = true;
            }
            node_masked.insert(node);
            misfits = 0;
        } else {
            misfits += 1;
        }
    }
    count += spent;

    let mut rest: Vec<usize> = (seq.prefix_len..seq.len())
        .filter(|&i| !selected[i])
        .collect();
    let need = budget.saturating_sub(count).min(rest.len());
    let (chosen, _) = rest.partial_shuffle(rng, need);
    for &i in chosen.iter() {
        selected[i] = true;
    }

    let positions: Vec<usize> = (0..seq.len()).filter(|&i| selected[i]).collect();
    let labels = positions.iter().map(|&i| seq.tokens[i]).collect();
    let actions = positions.iter().map(|_| sample_action(rng)).collect();
    MaskPlan {
        seq_len: seq.len(),
        positions,
        node_masked,
        labels,
        actions,
        seed,
    }
}

/// Masked input plus per-position labels (`IGNORE` where unselected).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub seq: PositionedSequence,
    pub masked_tokens: Vec<TokenId>,
    pub labels: Vec<i64>,
    pub plan: MaskPlan,
}

pub fn apply_masks(
    seq: &PositionedSequence,
    plan: &MaskPlan,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Result<MaskedSequence, MaskError> {
    if plan.seq_len != seq.len() {
        return Err(MaskError::PlanMismatch {
            plan: plan.seq_len,
            seq: seq.len(),
        });
    }
    let mut masked_tokens = seq.tokens.clone();
    let mut labels = vec![IGNORE; seq.len()];
    for ((&i, &label), &action) in plan.positions.iter().zip(&plan.labels).zip(&plan.actions) {
        labels[i] = label as i64;
        match action {
            MaskAction::Mask => masked_tokens[i] = MASK,
            MaskAction::Random => {
                if vocab_size <= NUM_SPECIALS {
                    return Err(MaskError::EmptyVocab);
                }
                masked_tokens[i] = rng.gen_range(NUM_SPECIALS as TokenId..vocab_size as TokenId);
            }
            MaskAction::Keep => {}
        }
    }
    Ok(MaskedSequence {
        seq: seq.clone(),
        masked_tokens,
        labels,
        plan: plan.clone(),
    })
}

/// Plans and applies masks for one window with its derived seed.
pub fn mask_window(
    seq: &PositionedSequence,
    cfg: &MaskConfig,
    vocab_size: usize,
) -> Result<MaskedSequence, MaskError> {
    let seed = window_seed(cfg.seed, &seq.doc_id, seq.window_index);
    let mut rng = rng_for(seed);
    let plan = plan_masks(seq, cfg.rate, cfg.node_share, &mut rng, seed);
    apply_masks(seq, &plan, vocab_size, &mut rng)
}

/// Persisted masked example: the linearizer record plus corruption fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskedRecord {
    pub record: LinearRecord,
    pub masked_tokens: Vec<TokenId>,
    pub labels: Vec<i64>,
    pub actions: Vec<(usize, MaskAction)>,
    pub node_masked: Vec<NodeId>,
    pub seed: u64,
    pub rng: String,
}

impl MaskedSequence {
    pub fn to_record(&self) -> MaskedRecord {
        MaskedRecord {
            record: self.seq.to_record(),
            masked_tokens: self.masked_tokens.clone(),
            labels: self.labels.clone(),
            actions: self
                .plan
                .positions
                .iter()
                .copied()
                .zip(self.plan.actions.iter().copied())
                .collect(),
            node_masked: self.plan.node_masked.iter().copied().collect(),
            seed: self.plan.seed,
            rng: RNG_NAME.to_string(),
        }
    }
}

impl MaskedRecord {
    pub fn into_masked(self) -> MaskedSequence {
        let seq = self.record.into_sequence();
        let positions: Vec<usize> = self.actions.iter().map(|a| a.0).collect();
        let plan = MaskPlan {
            seq_len: seq.len(),
            labels: positions
                .iter()
                .map(|&i| self.labels[i] as TokenId)
                .collect(),
            actions: self.actions.iter().map(|a| a.1).collect(),
            positions,
            node_masked: self.node_masked.into_iter().collect(),
            seed: self.seed,
        };
        MaskedSequence {
            seq,
            masked_tokens: self.masked_tokens,
            labels: self.labels,
            plan,
        }
    }
}
