//! End-to-end runs over a loaded dataset: one configuration record for every
//! stage, windowing of whole corpora, per-task training sets, batch
//! prediction and evaluation reports.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    CorpusError, Labels, ManifestEntry, Page, QaLabel, Schema, SyntheticSiteConfig,
};
use crate::dom::{CleanConfig, NodeId};
use crate::encoder::{EncoderConfig, OptimConfig};
use crate::heads::HeadConfig;
use crate::linearizer::PositionedSequence;
use crate::masker::MaskConfig;
use crate::metrics::{
    page_f1, pair_f1_lenient, qa_em_f1, value_f1, AttrTriple, PairPrediction, Prf,
};
use crate::pipeline::{
    attr_examples, openie_examples, predict_answer, predict_attrs, predict_pairs, preprocess_page,
    qa_examples, AttrExample, OpenieExample, PageWindows, PipelineError, PreprocessConfig,
    QaExample,
};
use crate::tokenizer::{TokenId, Vocab, NO, YES};
use crate::train::{Model, TrainError};
use crate::windower::WindowConfig;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Config(String),
}

/// Every setting of a run. Unknown keys are rejected when read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synthetic: SyntheticSiteConfig,
    pub clean: CleanConfig,
    pub min_freq: usize,
    pub preprocess: PreprocessConfig,
    pub mask: MaskConfig,
    /// Vocabulary and position table sizes are filled in from the data.
    pub encoder: EncoderConfig,
    pub pretrain: OptimConfig,
    pub finetune: OptimConfig,
    pub heads: HeadConfig,
    /// Weight attribute classes by inverse frequency during fine-tuning.
    pub balance_classes: bool,
    /// Offer yes/no answer tokens to the QA head.
    pub qa_yes_no: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            synthetic: SyntheticSiteConfig::default(),
            clean: CleanConfig::default(),
            min_freq: 1,
            preprocess: PreprocessConfig {
                window: WindowConfig::new(128, 64),
                ..PreprocessConfig::default()
            },
            mask: MaskConfig::default(),
            encoder: EncoderConfig::default(),
            pretrain: OptimConfig {
                lr: 1e-3,
                total_steps: 1500,
                batch_size: 16,
                ..OptimConfig::default()
            },
            finetune: OptimConfig {
                lr: 1e-3,
                total_steps: 300,
                batch_size: 16,
                ..OptimConfig::default()
            },
            heads: HeadConfig::default(),
            balance_classes: true,
            qa_yes_no: false,
        };
        cfg.reseed(0);
        cfg
    }
}

impl RunConfig {
    /// Sets the run seed and every per-stage seed derived from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.mask.seed = seed;
        self.encoder.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self.heads.seed = seed;
    }

    /// Encoder configuration with table sizes taken from the vocabulary and
    /// the position clip limits.
    pub fn encoder_config(&self, vocab: &Vocab) -> EncoderConfig {
        let positions = &self.preprocess.positions;
        EncoderConfig {
            vocab_size: vocab.len(),
            pos_sizes: positions.table_sizes(vocab.tag_table().len()),
            max_len: positions.max_len,
            ..self.encoder.clone()
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.preprocess
            .window
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if !(self.mask.rate > 0.0 && self.mask.rate < 1.0) {
            return Err(RunError::Config(
                "mask rate must lie strictly between 0 and 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask.node_share) {
            return Err(RunError::Config(
                "mask node_share must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Windows every page, in parallel, preserving page order.
pub fn window_pages(
    pages: &[Page],
    vocab: &Vocab,
    cfg: &PreprocessConfig,
) -> Result<Vec<PageWindows>, RunError> {
    let tags = vocab.tag_table();
    let out = pages
        .par_iter()
        .map(|p| preprocess_page(&p.entry.doc_id, &p.tree, vocab, &tags, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(out)
}

pub fn all_windows(pages: &[PageWindows]) -> Vec<PositionedSequence> {
    pages
        .iter()
        .flat_map(|p| p.windows.iter().cloned())
        .collect()
}

// Attribute extraction.

/// Gold attribute class per node, per document.
pub fn attr_class_map(
    labels: &Labels,
    schema: &Schema,
) -> Result<BTreeMap<String, BTreeMap<NodeId, usize>>, RunError> {
    let mut out: BTreeMap<String, BTreeMap<NodeId, usize>> = BTreeMap::new();
    for l in &labels.attrs {
        let class = schema.class_of(&l.attribute).ok_or_else(|| {
            RunError::Config(format!("attribute {} is not in the schema", l.attribute))
        })?;
        out.entry(l.doc_id.clone())
            .or_default()
            .insert(l.node_id, class);
    }
    Ok(out)
}

pub fn attr_training_set(
    windows: &[PageWindows],
    gold: &BTreeMap<String, BTreeMap<NodeId, usize>>,
) -> Vec<AttrExample> {
    let empty = BTreeMap::new();
    windows
        .iter()
        .flat_map(|p| attr_examples(p, gold.get(&p.doc_id).unwrap_or(&empty)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttrPrediction {
    pub doc_id: String,
    pub node_id: NodeId,
    pub attribute: String,
}

pub fn predict_attr_all(
    model: &Model,
    windows: &[PageWindows],
    schema: &Schema,
) -> Result<Vec<AttrPrediction>, RunError> {
    let heads = model.heads.as_ref().ok_or(TrainError::MissingHeads)?;
    let per_page = windows
        .par_iter()
        .map(|p| predict_attrs(&model.enc, heads, p, &schema.attributes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_page
        .into_iter()
        .flatten()
        .map(|(doc_id, node_id, attribute)| AttrPrediction {
            doc_id,
            node_id,
            attribute,
        })
        .collect())
}

// Open information extraction.

pub fn openie_training_set(
    windows: &[PageWindows],
    pages: &[Page],
    labels: &Labels,
    model: &Model,
) -> Result<Vec<OpenieExample>, RunError> {
    let heads = model.heads.as_ref().ok_or(TrainError::MissingHeads)?;
    let mut gold: BTreeMap<&str, BTreeSet<(NodeId, NodeId)>> = BTreeMap::new();
    for p in &labels.pairs {
        gold.entry(&p.doc_id)
            .or_default()
            .insert((p.pred_node, p.obj_node));
    }
    let empty = BTreeSet::new();
    let per_page = windows
        .par_iter()
        .zip(pages)
        .map(|(w, p)| {
            openie_examples(
                w,
                &p.tree,
                gold.get(w.doc_id.as_str()).unwrap_or(&empty),
                heads,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_page.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeniePrediction {
    pub doc_id: String,
    pub pred_node: NodeId,
    pub obj_node: NodeId,
    /// Predicate node text, used for lenient matching.
    pub pred_text: String,
    /// Pair probability (sigmoid of the pair score).
    pub s: f64,
}

pub fn predict_openie_all(
    model: &Model,
    windows: &[PageWindows],
    pages: &[Page],
) -> Result<Vec<OpeniePrediction>, RunError> {
    let heads = model.heads.as_ref().ok_or(TrainError::MissingHeads)?;
    let per_page = windows
        .par_iter()
        .zip(pages)
        .map(|(w, p)| predict_pairs(&model.enc, heads, w, &p.tree))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_page
        .into_iter()
        .flatten()
        .map(|(p, s)| OpeniePrediction {
            doc_id: p.doc_id,
            pred_node: p.pred_node,
            obj_node: p.obj_node,
            pred_text: p.pred_text,
            s: 1.0 / (1.0 + (-s).exp()),
        })
        .collect())
}

// Question answering.

fn yes_no_answer(answers: &[String]) -> Option<TokenId> {
    match answers.first().map(|a| a.trim().to_lowercase()).as_deref() {
        Some("yes") => Some(YES),
        Some("no") => Some(NO),
        _ => None,
    }
}

/// Training inputs for every question: windows containing the answer node,
/// or every window with the yes/no token as the span when that is the answer
/// and the yes/no option is on.
pub fn qa_training_set(
    windows: &[PageWindows],
    questions: &[QaLabel],
    vocab: &Vocab,
    cfg: &RunConfig,
) -> Result<Vec<QaExample>, RunError> {
    let by_doc: BTreeMap<&str, &PageWindows> =
        windows.iter().map(|w| (w.doc_id.as_str(), w)).collect();
    let positions = &cfg.preprocess.positions;
    let per_question = questions
        .par_iter()
        .map(|q| {
            let Some(page) = by_doc.get(q.doc_id.as_str()) else {
                return Ok(Vec::new());
            };
            let question = vocab.encode_text(&q.question);
            if let Some(node) = q.node_id {
                let answer = q
                    .answers
                    .first()
                    .map(|a| vocab.encode_text(a))
                    .unwrap_or_default();
                return qa_examples(page, &question, &answer, node, positions, cfg.qa_yes_no);
            }
            match yes_no_answer(&q.answers) {
                Some(tok) if cfg.qa_yes_no => page
                    .windows
                    .iter()
                    .map(|w| {
                        let seq =
                            crate::linearizer::assemble_qa_input(&question, w, true, positions)?;
                        let at = seq.prefix_len - if tok == YES { 2 } else { 1 };
                        Ok(QaExample {
                            seq,
                            gold: (at, at),
                        })
                    })
                    .collect(),
                _ => Ok(Vec::new()),
            }
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(per_question.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPrediction {
    pub doc_id: String,
    pub question_id: String,
    pub answer_text: String,
    /// Token positions of the span within its window's input.
    pub start: usize,
    pub end: usize,
}

pub fn predict_qa_all(
    model: &Model,
    windows: &[PageWindows],
    pages: &[Page],
    questions: &[QaLabel],
    vocab: &Vocab,
    cfg: &RunConfig,
) -> Result<Vec<QaPrediction>, RunError> {
    let heads = model.heads.as_ref().ok_or(TrainError::MissingHeads)?;
    let by_doc: BTreeMap<&str, (&PageWindows, &Page)> = windows
        .iter()
        .zip(pages)
        .map(|(w, p)| (w.doc_id.as_str(), (w, p)))
        .collect();
    let out = questions
        .par_iter()
        .filter_map(|q| by_doc.get(q.doc_id.as_str()).map(|&(w, p)| (q, w, p)))
        .map(|(q, w, p)| {
            let question = vocab.encode_text(&q.question);
            let ans = predict_answer(
                &model.enc,
                heads,
                w,
                &p.tree,
                &question,
                &cfg.preprocess.positions,
                cfg.qa_yes_no,
            )?;
            Ok(QaPrediction {
                doc_id: q.doc_id.clone(),
                question_id: q.question_id.clone(),
                answer_text: ans.text,
                start: ans.span.start,
                end: ans.span.end,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(out)
}

// Evaluation.

/// Scores per domain plus an aggregate. Each score map holds named values
/// such as `precision`, `recall`, `f1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub metric: String,
    pub split: String,
    pub per_domain: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
}

fn prf_map(p: Prf) -> BTreeMap<String, f64> {
    [
        ("precision", p.precision),
        ("recall", p.recall),
        ("f1", p.f1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Domain of each document; documents missing from `entries` fall under
/// `"all"`.
fn domain_of<'a>(entries: &'a [ManifestEntry]) -> impl Fn(&str) -> &'a str {
    let map: BTreeMap<&str, &str> = entries
        .iter()
        .map(|e| (e.doc_id.as_str(), e.domain.as_str()))
        .collect();
    move |doc: &str| map.get(doc).copied().unwrap_or("all")
}

fn mean_over<'a>(maps: impl Iterator<Item = &'a BTreeMap<String, f64>>) -> BTreeMap<String, f64> {
    let mut sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            let e = sum.entry(format!("macro_{k}")).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    sum.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Value-level micro P/R/F1 and page-level macro F1 over the documents in
/// `docs`. The aggregate holds the micro scores over all documents and the
/// mean of the per-domain scores.
pub fn eval_attr(
    preds: &[AttrPrediction],
    labels: &Labels,
    entries: &[ManifestEntry],
    docs: &BTreeSet<String>,
    split: &str,
) -> EvalReport {
    let dom = domain_of(entries);
    let keep = |d: &str| docs.contains(d);
    let triples: Vec<AttrTriple> = preds
        .iter()
        .filter(|p| keep(&p.doc_id))
        .map(|p| (p.doc_id.clone(), p.node_id, p.attribute.clone()))
        .collect();
    let gold: BTreeSet<AttrTriple> = labels
        .attr_gold()
        .into_iter()
        .filter(|t| keep(&t.0))
        .collect();
    let score = |preds: &[AttrTriple], gold: &BTreeSet<AttrTriple>| {
        let mut m = prf_map(value_f1(preds, gold));
        m.insert("page_f1".into(), page_f1(preds, gold).macro_f1);
        m
    };
    let domains: BTreeSet<&str> = docs.iter().map(|d| dom(d)).collect();
    let per_domain: BTreeMap<String, BTreeMap<String, f64>> = domains
        .iter()
        .map(|&d| {
            let p: Vec<AttrTriple> = triples.iter().filter(|t| dom(&t.0) == d).cloned().collect();
            let g: BTreeSet<AttrTriple> = gold.iter().filter(|t| dom(&t.0) == d).cloned().collect();
            (d.to_string(), score(&p, &g))
        })
        .collect();
    let mut aggregate = score(&triples, &gold);
    aggregate.extend(mean_over(per_domain.values()));
    EvalReport {
        metric: "attr_value_f1".into(),
        split: split.into(),
        per_domain,
        aggregate,
    }
}

pub fn eval_openie(
    preds: &[OpeniePrediction],
    labels: &Labels,
    entries: &[ManifestEntry],
    docs: &BTreeSet<String>,
    split: &str,
) -> EvalReport {
    let dom = domain_of(entries);
    let pp: Vec<PairPrediction> = preds
        .iter()
        .filter(|p| docs.contains(&p.doc_id))
        .map(|p| PairPrediction {
            doc_id: p.doc_id.clone(),
            pred_node: p.pred_node,
            obj_node: p.obj_node,
            pred_text: p.pred_text.clone(),
        })
        .collect();
    let gold: Vec<_> = labels
        .pair_gold()
        .into_iter()
        .filter(|g| docs.contains(&g.doc_id))
        .collect();
    let domains: BTreeSet<&str> = docs.iter().map(|d| dom(d)).collect();
    let per_domain: BTreeMap<String, BTreeMap<String, f64>> = domains
        .iter()
        .map(|&d| {
            let p: Vec<PairPrediction> =
                pp.iter().filter(|x| dom(&x.doc_id) == d).cloned().collect();
            let g: Vec<_> = gold
                .iter()
                .filter(|x| dom(&x.doc_id) == d)
                .cloned()
                .collect();
            (d.to_string(), prf_map(pair_f1_lenient(&p, &g)))
        })
        .collect();
    let mut aggregate = prf_map(pair_f1_lenient(&pp, &gold));
    aggregate.extend(mean_over(per_domain.values()));
    EvalReport {
        metric: "openie_lenient_f1".into(),
        split: split.into(),
        per_domain,
        aggregate,
    }
}

/// Mean EM and F1 over gold questions; unanswered questions score 0.
pub fn eval_qa(
    preds: &[QaPrediction],
    labels: &Labels,
    entries: &[ManifestEntry],
    docs: &BTreeSet<String>,
    split: &str,
) -> EvalReport {
    let dom = domain_of(entries);
    let answers: BTreeMap<&str, &str> = preds
        .iter()
        .map(|p| (p.question_id.as_str(), p.answer_text.as_str()))
        .collect();
    let mut per: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for q in labels.qa.iter().filter(|q| docs.contains(&q.doc_id)) {
        let (em, f1) = answers
            .get(q.question_id.as_str())
            .map_or((0.0, 0.0), |a| qa_em_f1(a, &q.answers));
        for key in [dom(&q.doc_id), "\u{0}"] {
            let e = per.entry(key.to_string()).or_default();
            e.0 += em;
            e.1 += f1;
            e.2 += 1;
        }
    }
    let to_map = |(em, f1, n): (f64, f64, usize)| -> BTreeMap<String, f64> {
        let n = n.max(1) as f64;
        [("em".to_string(), em / n), ("f1".to_string(), f1 / n)]
            .into_iter()
            .collect()
    };
    let total = per.remove("\u{0}").unwrap_or_default();
    let per_domain: BTreeMap<String, BTreeMap<String, f64>> =
        per.into_iter().map(|(k, v)| (k, to_map(v))).collect();
    let mut aggregate = to_map(total);
    aggregate.extend(mean_over(per_domain.values()));
    EvalReport {
        metric: "qa_em_f1".into(),
        split: split.into(),
        per_domain,
        aggregate,
    }
}
