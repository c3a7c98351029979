//! Window linearization with per-token tree-position features.
//!
//! Columns of the position matrix:
//!
//! | col | feature                                   | non-DOM value |
//! |-----|-------------------------------------------|---------------|
//! | 0   | node rank within the window (1-based)     | 0             |
//! | 1   | parent's column-0 value, 0 if not present | 0             |
//! | 2   | rank among in-window siblings (1-based)   | 0             |
//! | 3   | depth in the document tree                | 0             |
//! | 4   | tag id from the [`TagTable`]              | 0             |
//! | 5   | token position                            | sequential    |

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{DomTree, NodeId};
use crate::tokenizer::{TagTable, TokenId, TokenizedNode, NO, QSEP, YES};
use crate::windower::Subtree;

pub const NUM_POSITIONS: usize = 6;
pub type PosRow = [u32; NUM_POSITIONS];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinearizeError {
    #[error("node {0} has no tokenization")]
    MissingTokenization(NodeId),
    #[error("sequence of {len} tokens exceeds the maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
}

/// Embedding table sizes for the position features; values beyond a table
/// are clipped to its last row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionConfig {
    pub max_nodes: usize,
    pub max_depth: usize,
    pub max_len: usize,
}

impl Default for PositionConfig {
    fn default() -> Self {
        Self {
            max_nodes: 512,
            max_depth: 64,
            max_len: 1024,
        }
    }
}

impl PositionConfig {
    /// Table sizes for the six features, given the tag table size.
    pub fn table_sizes(&self, num_tags: usize) -> [usize; NUM_POSITIONS] {
        [
            self.max_nodes,
            self.max_nodes,
            self.max_nodes,
            self.max_depth,
            num_tags,
            self.max_len,
        ]
    }
}

fn clip(v: usize, size: usize) -> u32 {
    v.min(size - 1) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionedSequence {
    pub doc_id: String,
    pub window_index: usize,
    pub tokens: Vec<TokenId>,
    pub pos: Vec<PosRow>,
    pub node_anchor: BTreeMap<NodeId, usize>,
    pub node_ranges: BTreeMap<NodeId, Range<usize>>,
    /// Number of leading non-DOM tokens (question, separator, yes/no).
    pub prefix_len: usize,
}

impl PositionedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Nodes in window preorder with their token ranges.
    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, Range<usize>)> + '_ {
        let mut v: Vec<(NodeId, Range<usize>)> = self
            .node_ranges
            .iter()
            .map(|(&k, r)| (k, r.clone()))
            .collect();
        v.sort_by_key(|(_, r)| r.start);
        v.into_iter()
    }

    pub fn to_record(&self) -> LinearRecord {
        LinearRecord {
            doc_id: self.doc_id.clone(),
            window_index: self.window_index,
            tokens: self.tokens.clone(),
            pos: self.pos.clone(),
            anchors: self.node_anchor.clone(),
        }
    }
}

/// One preprocessed window as persisted in JSON Lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRecord {
    pub doc_id: String,
    pub window_index: usize,
    pub tokens: Vec<TokenId>,
    pub pos: Vec<PosRow>,
    pub anchors: BTreeMap<NodeId, usize>,
}

impl LinearRecord {
    pub fn into_sequence(self) -> PositionedSequence {
        let mut starts: Vec<(usize, NodeId)> = self.anchors.iter().map(|(&n, &i)| (i, n)).collect();
        starts.sort_unstable();
        let node_ranges = starts
            .iter()
            .enumerate()
            .map(|(k, &(start, node))| {
                let end = starts.get(k + 1).map_or(self.tokens.len(), |s| s.0);
                (node, start..end)
            })
            .collect();
        let prefix_len = starts.first().map_or(self.tokens.len(), |s| s.0);
        PositionedSequence {
            doc_id: self.doc_id,
            window_index: self.window_index,
            tokens: self.tokens,
            pos: self.pos,
            node_anchor: self.anchors,
            node_ranges,
            prefix_len,
        }
    }
}

/// Concatenates the window's nodes in preorder and fills the position matrix.
pub fn linearize(
    window: &Subtree,
    tree: &DomTree,
    toks: &[TokenizedNode],
    tags: &TagTable,
    cfg: &PositionConfig,
    doc_id: &str,
) -> Result<PositionedSequence, LinearizeError> {
    let rank: BTreeMap<NodeId, usize> = window
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i + 1))
        .collect();
    let oversized_budget = if window.truncated.is_empty() {
        usize::MAX
    } else {
        let rest: usize = window
            .node_ids
            .iter()
            .filter(|v| !window.truncated.contains(v))
            .map(|&v| toks.get(v).map_or(0, TokenizedNode::count))
            .sum();
        window.token_total.saturating_sub(rest).max(1)
    };
    let mut sibling_seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut seq = PositionedSequence {
        doc_id: doc_id.to_string(),
        window_index: window.window_index,
        tokens: Vec::with_capacity(window.token_total),
        pos: Vec::with_capacity(window.token_total),
        node_anchor: BTreeMap::new(),
        node_ranges: BTreeMap::new(),
        prefix_len: 0,
    };
    for &v in &window.node_ids {
        let tn = toks
            .get(v)
            .filter(|t| t.node_id == v)
            .ok_or(LinearizeError::MissingTokenization(v))?;
        let node = tree.node(v);
        let p0 = rank[&v];
        let p1 = node.parent.and_then(|p| rank.get(&p).copied()).unwrap_or(0);
        let sib = sibling_seen.entry(p1).or_insert(0);
        *sib += 1;
        let row_base = [
            clip(p0, cfg.max_nodes),
            clip(p1, cfg.max_nodes),
            clip(*sib, cfg.max_nodes),
            clip(node.depth, cfg.max_depth),
            tags.id(&node.tag) as u32,
            0,
        ];
        let start = seq.tokens.len();
        let take = if window.truncated.contains(&v) {
            oversized_budget
        } else {
            tn.count()
        };
        for &tok in tn.tokens.iter().take(take) {
            let mut row = row_base;
            row[5] = clip(seq.tokens.len(), cfg.max_len);
            seq.tokens.push(tok);
            seq.pos.push(row);
        }
        seq.node_anchor.insert(v, start);
        seq.node_ranges.insert(v, start..seq.tokens.len());
    }
    Ok(seq)
}

/// Prepends `question ++ [QSEP] (++ [YES, NO])` to a window. Prefix tokens get
/// zero tree features; column 5 is renumbered over the whole sequence.
pub fn assemble_qa_input(
    question: &[TokenId],
    seq: &PositionedSequence,
    add_yes_no: bool,
    cfg: &PositionConfig,
) -> Result<PositionedSequence, LinearizeError> {
    let mut prefix: Vec<TokenId> = question.to_vec();
    prefix.push(QSEP);
    if add_yes_no {
        prefix.extend([YES, NO]);
    }
    let shift = prefix.len();
    let len = shift + seq.len();
    if len > cfg.max_len {
        return Err(LinearizeError::SequenceTooLong {
            len,
            max: cfg.max_len,
        });
    }
    let mut tokens = prefix;
    tokens.extend_from_slice(&seq.tokens);
    let mut pos: Vec<PosRow> = (0..shift).map(|_| [0; NUM_POSITIONS]).collect();
    pos.extend_from_slice(&seq.pos);
    for (i, row) in pos.iter_mut().enumerate() {
        row[5] = clip(i, cfg.max_len);
    }
    Ok(PositionedSequence {
        doc_id: seq.doc_id.clone(),
        window_index: seq.window_index,
        tokens,
        pos,
        node_anchor: seq
            .node_anchor
            .iter()
            .map(|(&k, &v)| (k, v + shift))
            .collect(),
        node_ranges: seq
            .node_ranges
            .iter()
            .map(|(&k, r)| (k, r.start + shift..r.end + shift))
            .collect(),
        prefix_len: seq.prefix_len + shift,
    })
}
