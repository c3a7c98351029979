//! Extraction and QA scoring.
//!
//! Duplicate predictions are removed before scoring, so every metric is
//! independent of prediction order and multiplicity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dom::NodeId;
use crate::text::normalize_whitespace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Precision, recall and F1 from counts. Both sets empty scores 1.
    pub fn from_counts(tp_pred: usize, n_pred: usize, tp_gold: usize, n_gold: usize) -> Self {
        if n_pred == 0 && n_gold == 0 {
            return Self {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp_pred, n_pred);
        let recall = ratio(tp_gold, n_gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// One attribute extraction: `(doc_id, node_id, attribute)`.
pub type AttrTriple = (String, NodeId, String);

/// Micro P/R/F1 over extraction decisions. Works for any key; node-id
/// triples on synthetic data, `(doc, text, attribute)` where gold is textual.
pub fn value_f1<T: Ord + Clone>(preds: &[T], gold: &BTreeSet<T>) -> Prf {
    let preds: BTreeSet<&T> = preds.iter().collect();
    let tp = preds.iter().filter(|p| gold.contains(p)).count();
    Prf::from_counts(tp, preds.len(), tp, gold.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageF1 {
    pub macro_f1: f64,
    pub per_attribute: BTreeMap<String, Prf>,
}

/// Per-(page, attribute) hit scoring: a page-attribute is a hit when any of
/// its predicted nodes is gold. P/R/F1 are computed per attribute over pages
/// and macro-averaged across attributes seen in gold or predictions.
pub fn page_f1(preds: &[AttrTriple], gold: &BTreeSet<AttrTriple>) -> PageF1 {
    let mut predicted: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut hits: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut golden: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (doc, _, attr) in gold {
        golden.entry(attr).or_default().insert(doc);
    }
    for p in preds {
        let (doc, _, attr) = p;
        predicted.entry(attr).or_default().insert(doc);
        if gold.contains(p) {
            hits.entry(attr).or_default().insert(doc);
        }
    }
    let attrs: BTreeSet<&str> = predicted.keys().chain(golden.keys()).copied().collect();
    let per_attribute: BTreeMap<String, Prf> = attrs
        .iter()
        .map(|&a| {
            let h = hits.get(a).map_or(0, BTreeSet::len);
            let np = predicted.get(a).map_or(0, BTreeSet::len);
            let ng = golden.get(a).map_or(0, BTreeSet::len);
            (a.to_string(), Prf::from_counts(h, np, h, ng))
        })
        .collect();
    let macro_f1 = if per_attribute.is_empty() {
        1.0
    } else {
        per_attribute.values().map(|p| p.f1).sum::<f64>() / per_attribute.len() as f64
    };
    PageF1 {
        macro_f1,
        per_attribute,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairPrediction {
    pub doc_id: String,
    pub pred_node: NodeId,
    pub obj_node: NodeId,
    /// Surface form of the predicate node's text.
    pub pred_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub doc_id: String,
    pub pred_node: NodeId,
    pub obj_node: NodeId,
    /// Acceptable predicate surface forms; never empty.
    pub forms: Vec<String>,
}

fn surface(s: &str) -> String {
    normalize_whitespace(s).to_lowercase()
}

/// Lenient pair scoring: a prediction is correct when its object node equals
/// a gold pair's object and its predicate text matches one of that pair's
/// acceptable forms (case-insensitive, whitespace-normalised). Each gold pair
/// is credited at most once.
pub fn pair_f1_lenient(preds: &[PairPrediction], gold: &[GoldPair]) -> Prf {
    let preds: BTreeSet<&PairPrediction> = preds.iter().collect();
    let gold_forms: Vec<BTreeSet<String>> = gold
        .iter()
        .map(|g| g.forms.iter().map(|f| surface(f)).collect())
        .collect();
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in &preds {
        let form = surface(&p.pred_text);
        let hit = gold.iter().enumerate().position(|(k, g)| {
            !used[k]
                && g.doc_id == p.doc_id
                && g.obj_node == p.obj_node
                && gold_forms[k].contains(&form)
        });
        if let Some(k) = hit {
            used[k] = true;
            tp += 1;
        }
    }
    Prf::from_counts(tp, preds.len(), tp, gold.len())
}

/// Lowercases, drops punctuation and collapses whitespace. Articles are kept.
pub fn normalize_answer(s: &str) -> String {
    let kept: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    normalize_whitespace(&kept)
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match and best token-overlap F1 of `pred` against any gold answer.
pub fn qa_em_f1(pred: &str, golds: &[String]) -> (f64, f64) {
    let p = normalize_answer(pred);
    let mut em: f64 = 0.0;
    let mut f1: f64 = 0.0;
    for g in golds {
        let g = normalize_answer(g);
        if p == g {
            em = 1.0;
        }
        f1 = f1.max(token_f1(&p, &g));
    }
    (em, f1)
}

/// Mean EM and F1 over questions; questions without a prediction score 0.
pub fn qa_scores(
    preds: &BTreeMap<String, String>,
    gold: &BTreeMap<String, Vec<String>>,
) -> (f64, f64) {
    if gold.is_empty() {
        return (1.0, 1.0);
    }
    let (em, f1) = gold.iter().fold((0.0, 0.0), |(em, f1), (qid, answers)| {
        let (e, f) = preds.get(qid).map_or((0.0, 0.0), |p| qa_em_f1(p, answers));
        (em + e, f1 + f)
    });
    (em / gold.len() as f64, f1 / gold.len() as f64)
}
