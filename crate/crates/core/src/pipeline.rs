//! Page-level glue between cleaned trees, encoder windows and task heads:
//! preprocessing, fine-tuning example construction and prediction decoding.
//!
//! A node that appears in several overlapping windows gets the average of its
//! per-window head outputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{DomTree, NodeId};
use crate::encoder::{encode, EncoderError, EncoderInput, Params};
use crate::heads::{
    attr_forward, candidate_pairs, openie_extract, openie_scores, qa_forward, qa_predict,
    qa_segments, HeadError, HeadParams, PairScores, QaWindowScores, SpanPrediction,
};
use crate::linearizer::{
    assemble_qa_input, linearize, LinearizeError, PositionConfig, PositionedSequence,
};
use crate::metrics::{AttrTriple, PairPrediction};
use crate::tensor::{softmax, Mat};
use crate::text::word_spans;
use crate::tokenizer::{tokenize_tree, TagTable, TokenId, TokenizedNode, Vocab};
use crate::windower::{generate_subtrees, WindowConfig, WindowError};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PreprocessConfig {
    pub window: WindowConfig,
    pub positions: PositionConfig,
}

/// One page cut into linearized windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PageWindows {
    pub doc_id: String,
    pub tokens: Vec<TokenizedNode>,
    pub windows: Vec<PositionedSequence>,
}

pub fn preprocess_page(
    doc_id: &str,
    tree: &DomTree,
    vocab: &Vocab,
    tags: &TagTable,
    cfg: &PreprocessConfig,
) -> Result<PageWindows, PipelineError> {
    let tokens = tokenize_tree(tree, vocab);
    let counts: Vec<usize> = tokens.iter().map(TokenizedNode::count).collect();
    let subtrees = generate_subtrees(tree, &counts, &cfg.window)?;
    let windows = subtrees
        .iter()
        .map(|w| linearize(w, tree, &tokens, tags, &cfg.positions, doc_id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PageWindows {
        doc_id: doc_id.to_string(),
        tokens,
        windows,
    })
}

/// Encoder output rows at the given token positions.
pub fn gather_rows(h: &Mat<f32>, rows: &[usize]) -> Mat<f32> {
    let mut out = Mat::zeros(rows.len(), h.cols);
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(h.row(i));
    }
    out
}

/// Adds row gradients back into a full-sequence gradient.
pub fn scatter_rows(d_rows: &Mat<f32>, rows: &[usize], total: usize) -> Mat<f32> {
    let mut out = Mat::zeros(total, d_rows.cols);
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(i)
            .iter_mut()
            .zip(d_rows.row(r))
            .for_each(|(a, &b)| *a += b);
    }
    out
}

fn anchors_of(seq: &PositionedSequence, nodes: &[NodeId]) -> Vec<usize> {
    nodes.iter().map(|v| seq.node_anchor[v]).collect()
}

// Attribute extraction.

#[derive(Debug, Clone, PartialEq)]
pub struct AttrExample {
    pub seq: PositionedSequence,
    /// Nodes of the window in token order.
    pub nodes: Vec<NodeId>,
    /// Gold class per node, 0 for None.
    pub gold: Vec<usize>,
}

impl AttrExample {
    pub fn anchors(&self) -> Vec<usize> {
        anchors_of(&self.seq, &self.nodes)
    }
}

pub fn attr_examples(page: &PageWindows, gold: &BTreeMap<NodeId, usize>) -> Vec<AttrExample> {
    page.windows
        .iter()
        .map(|seq| {
            let nodes: Vec<NodeId> = seq.nodes().map(|(v, _)| v).collect();
            let gold = nodes
                .iter()
                .map(|v| gold.get(v).copied().unwrap_or(0))
                .collect();
            AttrExample {
                seq: seq.clone(),
                nodes,
                gold,
            }
        })
        .collect()
}

/// Averaged class probabilities per node over the windows containing it.
pub fn attr_node_probs(
    enc: &Params<f32>,
    heads: &HeadParams<f32>,
    page: &PageWindows,
) -> Result<BTreeMap<NodeId, Vec<f64>>, PipelineError> {
    let mut sums: BTreeMap<NodeId, (Vec<f64>, usize)> = BTreeMap::new();
    for seq in &page.windows {
        let h = encode(EncoderInput::from(seq), enc)?;
        let nodes: Vec<NodeId> = seq.nodes().map(|(v, _)| v).collect();
        let scores = attr_forward(&gather_rows(&h, &anchors_of(seq, &nodes)), heads)?;
        for (r, v) in nodes.into_iter().enumerate() {
            let mut p = scores.row(r).to_vec();
            softmax(&mut p);
            let e = sums.entry(v).or_insert_with(|| (vec![0.0; p.len()], 0));
            e.0.iter_mut().zip(&p).for_each(|(a, &b)| *a += b as f64);
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(v, (s, n))| (v, s.into_iter().map(|x| x / n as f64).collect()))
        .collect())
}

/// Nodes classified as an attribute (argmax over averaged probabilities,
/// lowest class on ties), named through `class_names[class - 1]`.
pub fn predict_attrs(
    enc: &Params<f32>,
    heads: &HeadParams<f32>,
    page: &PageWindows,
    class_names: &[String],
) -> Result<Vec<AttrTriple>, PipelineError> {
    let probs = attr_node_probs(enc, heads, page)?;
    Ok(probs
        .into_iter()
        .filter_map(|(v, p)| {
            let best = (1..p.len()).fold(0, |b, j| if p[j] > p[b] { j } else { b });
            (best > 0).then(|| (page.doc_id.clone(), v, class_names[best - 1].clone()))
        })
        .collect())
}

// Open information extraction.

#[derive(Debug, Clone, PartialEq)]
pub struct OpenieExample {
    pub seq: PositionedSequence,
    /// Text-bearing nodes of the window in token order; pair and flag
    /// indices refer to this list.
    pub nodes: Vec<NodeId>,
    pub is_pred: Vec<bool>,
    pub is_obj: Vec<bool>,
    pub candidates: Vec<(usize, usize)>,
    pub positives: BTreeSet<(usize, usize)>,
}

impl OpenieExample {
    pub fn anchors(&self) -> Vec<usize> {
        anchors_of(&self.seq, &self.nodes)
    }
}

fn text_nodes(seq: &PositionedSequence, tree: &DomTree) -> Vec<NodeId> {
    seq.nodes()
        .map(|(v, _)| v)
        .filter(|&v| !tree.node(v).text.is_empty())
        .collect()
}

pub fn openie_examples(
    page: &PageWindows,
    tree: &DomTree,
    gold: &BTreeSet<(NodeId, NodeId)>,
    heads: &HeadParams<f32>,
) -> Result<Vec<OpenieExample>, PipelineError> {
    let preds: BTreeSet<NodeId> = gold.iter().map(|p| p.0).collect();
    let objs: BTreeSet<NodeId> = gold.iter().map(|p| p.1).collect();
    page.windows
        .iter()
        .map(|seq| {
            let nodes = text_nodes(seq, tree);
            let rows: Vec<usize> = (0..nodes.len()).collect();
            let candidates = candidate_pairs(&rows, heads.cfg.pair_cap, heads.cfg.pair_overflow)?;
            let positives = candidates
                .iter()
                .copied()
                .filter(|&(i, j)| gold.contains(&(nodes[i], nodes[j])))
                .collect();
            Ok(OpenieExample {
                seq: seq.clone(),
                is_pred: nodes.iter().map(|v| preds.contains(v)).collect(),
                is_obj: nodes.iter().map(|v| objs.contains(v)).collect(),
                nodes,
                candidates,
                positives,
            })
        })
        .collect()
}

fn mean_scores(v: &[PairScores<f32>]) -> PairScores<f32> {
    let n = v.len() as f32;
    let sum = |f: fn(&PairScores<f32>) -> f32| v.iter().map(f).sum::<f32>() / n;
    PairScores {
        sp: sum(|s| s.sp),
        so: sum(|s| s.so),
        sm: sum(|s| s.sm),
        s: sum(|s| s.s),
    }
}

/// Extracted `(predicate, object)` pairs with their averaged pair score.
pub fn predict_pairs(
    enc: &Params<f32>,
    heads: &HeadParams<f32>,
    page: &PageWindows,
    tree: &DomTree,
) -> Result<Vec<(PairPrediction, f64)>, PipelineError> {
    let mut acc: BTreeMap<(NodeId, NodeId), Vec<PairScores<f32>>> = BTreeMap::new();
    for seq in &page.windows {
        let nodes = text_nodes(seq, tree);
        let rows: Vec<usize> = (0..nodes.len()).collect();
        let pairs = candidate_pairs(&rows, heads.cfg.pair_cap, heads.cfg.pair_overflow)?;
        let h = encode(EncoderInput::from(seq), enc)?;
        let hn = gather_rows(&h, &anchors_of(seq, &nodes));
        for (&(i, j), sc) in pairs.iter().zip(openie_scores(&hn, &pairs, heads)?) {
            acc.entry((nodes[i], nodes[j])).or_default().push(sc);
        }
    }
    Ok(acc
        .into_iter()
        .filter_map(|((p, o), scores)| {
            let sc = mean_scores(&scores);
            openie_extract(&sc, heads.cfg.gate).then(|| {
                let pred = PairPrediction {
                    doc_id: page.doc_id.clone(),
                    pred_node: p,
                    obj_node: o,
                    pred_text: tree.node(p).text.clone(),
                };
                (pred, sc.s as f64)
            })
        })
        .collect())
}

// Question answering.

#[derive(Debug, Clone, PartialEq)]
pub struct QaExample {
    /// Question-prefixed window.
    pub seq: PositionedSequence,
    /// Gold start and end token positions.
    pub gold: (usize, usize),
}

/// Token range of `answer` inside the text tokens of `node` within `seq`,
/// falling back to the whole text when the answer tokens are not found.
fn answer_span(
    seq: &PositionedSequence,
    tn: &TokenizedNode,
    answer: &[TokenId],
) -> Option<(usize, usize)> {
    let range = seq.node_ranges.get(&tn.node_id)?;
    if range.len() < tn.count() || tn.text_span.is_empty() {
        return None;
    }
    let text = &tn.tokens[tn.text_span.clone()];
    let offset = (0..text.len()).find(|&k| !answer.is_empty() && text[k..].starts_with(answer));
    let (a, b) = match offset {
        Some(k) => (k, k + answer.len() - 1),
        None => (0, text.len() - 1),
    };
    let base = range.start + tn.text_span.start;
    Some((base + a, base + b))
}

/// Training inputs for one question: every window that fully contains the
/// answer node, prefixed with the question.
pub fn qa_examples(
    page: &PageWindows,
    question: &[TokenId],
    answer: &[TokenId],
    answer_node: NodeId,
    cfg: &PositionConfig,
    yes_no: bool,
) -> Result<Vec<QaExample>, PipelineError> {
    let mut out = Vec::new();
    let Some(tn) = page.tokens.get(answer_node) else {
        return Ok(out);
    };
    for w in &page.windows {
        let seq = assemble_qa_input(question, w, yes_no, cfg)?;
        if let Some(gold) = answer_span(&seq, tn, answer) {
            out.push(QaExample { seq, gold });
        }
    }
    Ok(out)
}

/// Answer text for a span: original node text between the first and last
/// covered words, joined across nodes; `yes`/`no` for the special tokens.
pub fn span_text(
    seq: &PositionedSequence,
    page: &PageWindows,
    tree: &DomTree,
    start: usize,
    end: usize,
    yes_no: bool,
) -> String {
    if yes_no && seq.prefix_len >= 2 && end < seq.prefix_len {
        return if start == seq.prefix_len - 2 {
            "yes"
        } else {
            "no"
        }
        .to_string();
    }
    let mut parts = Vec::new();
    for (v, range) in seq.nodes() {
        let tn = &page.tokens[v];
        let lo = start.max(range.start + tn.text_span.start);
        let hi = end.min(range.start + tn.text_span.end.min(range.len()) - 1);
        if range.len() <= tn.text_span.start || lo > hi {
            continue;
        }
        let text = &tree.node(v).text;
        let spans = word_spans(text);
        let a = lo - range.start - tn.text_span.start;
        let b = hi - range.start - tn.text_span.start;
        parts.push(text[spans[a].start..spans[b].end].to_string());
    }
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaAnswer {
    pub text: String,
    pub span: SpanPrediction,
}

pub fn predict_answer(
    enc: &Params<f32>,
    heads: &HeadParams<f32>,
    page: &PageWindows,
    tree: &DomTree,
    question: &[TokenId],
    cfg: &PositionConfig,
    yes_no: bool,
) -> Result<QaAnswer, PipelineError> {
    let seqs = page
        .windows
        .iter()
        .map(|w| assemble_qa_input(question, w, yes_no, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut scores = Vec::with_capacity(seqs.len());
    for seq in &seqs {
        let h = encode(EncoderInput::from(seq), enc)?;
        let (s, e) = qa_forward(&h, heads)?;
        scores.push(QaWindowScores {
            start: s.into_iter().map(f64::from).collect(),
            end: e.into_iter().map(f64::from).collect(),
            segments: qa_segments(seq, yes_no),
        });
    }
    let span = qa_predict(&scores, heads.cfg.max_answer_len)?;
    let text = span_text(&seqs[span.window], page, tree, span.start, span.end, yes_no);
    Ok(QaAnswer { text, span })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::{clean, parse_html, CleanConfig};

    fn page(html: &str, m: usize, s: usize) -> (DomTree, Vocab, PageWindows) {
        let tree = clean(
            &parse_html(html.as_bytes()).unwrap(),
            &CleanConfig::default(),
        )
        .unwrap();
        let vocab = Vocab::build([&tree], 1).unwrap();
        let cfg = PreprocessConfig {
            window: WindowConfig::new(m, s),
            ..Default::default()
        };
        let pw = preprocess_page("d", &tree, &vocab, &vocab.tag_table(), &cfg).unwrap();
        (tree, vocab, pw)
    }

    const HTML: &str = "<html><body><table><tr><th>Rated:</th><td>PG-13</td></tr><tr><th>Year</th><td>1999</td></tr></table></body></html>";

    #[test]
    fn windows_cover_every_node() {
        let (tree, _, pw) = page(HTML, 8, 3);
        assert!(pw.windows.len() > 1);
        let seen: BTreeSet<NodeId> = pw
            .windows
            .iter()
            .flat_map(|w| w.nodes().map(|(v, _)| v))
            .collect();
        assert_eq!(seen.len(), tree.len());
    }

    #[test]
    fn qa_gold_span_and_text_round_trip() {
        let (tree, vocab, pw) = page(HTML, 64, 16);
        let node = (0..tree.len())
            .find(|&v| tree.node(v).text == "PG-13")
            .unwrap();
        let q = vocab.encode_text("what is the rating");
        let ex = qa_examples(
            &pw,
            &q,
            &vocab.encode_text("PG-13"),
            node,
            &PositionConfig::default(),
            true,
        )
        .unwrap();
        assert_eq!(ex.len(), 1);
        let (a, b) = ex[0].gold;
        assert_eq!(b - a, 2);
        assert_eq!(span_text(&ex[0].seq, &pw, &tree, a, b, true), "PG-13");
        assert_eq!(span_text(&ex[0].seq, &pw, &tree, a, a, true), "PG");
        let yes = ex[0].seq.prefix_len - 2;
        assert_eq!(span_text(&ex[0].seq, &pw, &tree, yes, yes, true), "yes");
    }

    #[test]
    fn openie_examples_flag_gold() {
        let (tree, _, pw) = page(HTML, 64, 16);
        let th = (0..tree.len())
            .find(|&v| tree.node(v).text == "Year")
            .unwrap();
        let td = (0..tree.len())
            .find(|&v| tree.node(v).text == "1999")
            .unwrap();
        let heads = HeadParams::<f32>::init(&Default::default(), 64);
        let gold: BTreeSet<_> = [(th, td)].into_iter().collect();
        let ex = openie_examples(&pw, &tree, &gold, &heads).unwrap();
        assert_eq!(ex[0].nodes.len(), 4);
        assert_eq!(ex[0].candidates.len(), 12);
        assert_eq!(ex[0].positives.len(), 1);
        assert_eq!(ex[0].is_pred.iter().filter(|&&b| b).count(), 1);
    }
}
