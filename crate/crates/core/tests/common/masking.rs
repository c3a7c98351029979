use std::collections::BTreeMap;

use domlm::linearizer::{LinearRecord, PositionedSequence, NUM_POSITIONS};
use domlm::masker::{mask_window, MaskAction, MaskConfig};
use domlm::tokenizer::MASK;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A document-only sequence of `t` or slightly more tokens split into nodes
/// of 1..=`max_node` tokens.
pub fn random_sequence(
    rng: &mut impl Rng,
    t: usize,
    max_node: usize,
    doc_id: &str,
) -> PositionedSequence {
    let mut anchors = BTreeMap::new();
    let mut len = 0;
    let mut node = 0;
    while len < t {
        anchors.insert(node, len);
        len += rng.gen_range(1..=max_node);
        node += 1;
    }
    let tokens = (0..len).map(|_| rng.gen_range(10..400)).collect();
    let pos = (0..len as u32)
        .map(|i| [1, 0, 1, 1, 2, i])
        .collect::<Vec<[u32; NUM_POSITIONS]>>();
    LinearRecord {
        doc_id: doc_id.to_string(),
        window_index: 0,
        tokens,
        pos,
        anchors,
    }
    .into_sequence()
}

#[derive(Debug)]
pub struct MaskingStats {
    pub sequences: usize,
    pub mean_fraction: f64,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub selections: usize,
    /// Shares of MASK, RANDOM and KEEP over all selections.
    pub actions: [f64; 3],
    pub deterministic: bool,
    /// Every token of a whole-node-masked node is selected.
    pub nodes_complete: bool,
}

pub fn masking_suite(n: usize, seed: u64) -> MaskingStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MaskConfig {
        seed,
        ..Default::default()
    };
    let mut fractions = Vec::with_capacity(n);
    let mut counts = [0usize; 3];
    let mut deterministic = true;
    let mut nodes_complete = true;
    for k in 0..n {
        let t = rng.gen_range(100..=400);
        let seq = random_sequence(&mut rng, t, 8, &format!("doc{k}"));
        let ms = mask_window(&seq, &cfg, 400).unwrap();
        deterministic &= mask_window(&seq, &cfg, 400).unwrap() == ms;
        fractions.push(ms.plan.positions.len() as f64 / seq.len() as f64);
        for (a, &i) in ms.plan.actions.iter().zip(&ms.plan.positions) {
            let slot = match a {
                MaskAction::Mask => 0,
                MaskAction::Random => 1,
                MaskAction::Keep => 2,
            };
            counts[slot] += 1;
            if *a == MaskAction::Mask {
                nodes_complete &= ms.masked_tokens[i] == MASK;
            }
        }
        for v in &ms.plan.node_masked {
            nodes_complete &= seq.node_ranges[v].clone().all(|i| ms.labels[i] >= 0);
        }
    }
    let total: usize = counts.iter().sum();
    MaskingStats {
        sequences: n,
        mean_fraction: fractions.iter().sum::<f64>() / n as f64,
        min_fraction: fractions.iter().cloned().fold(f64::INFINITY, f64::min),
        max_fraction: fractions.iter().cloned().fold(0.0, f64::max),
        selections: total,
        actions: counts.map(|c| c as f64 / total as f64),
        deterministic,
        nodes_complete,
    }
}
