//! Dataset manifests, node-addressed label files, JSON Lines persistence and
//! the synthetic website generator.
//!
//! A dataset directory holds `manifest.jsonl` and, optionally, the label files
//! `attrs.jsonl`, `pairs.jsonl`, `qa.jsonl` and a `schema.json` naming the
//! attribute types. Labels address nodes by cleaned-tree preorder id and carry
//! the node's tag path, which the loader re-checks.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{load_tree, CleanConfig, DomError, DomTree, NodeId};
use crate::metrics::{AttrTriple, GoldPair};

pub use synthetic::{
    default_attributes, generate_synthetic, write_corpus, AttributeSpec, Layout, NoiseConfig,
    SyntheticCorpus, SyntheticPage, SyntheticSiteConfig, ValuePool,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ATTRS_FILE: &str = "attrs.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const QA_FILE: &str = "qa.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    SchemaError {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("label for {doc_id} node {node_id}: expected {expected}, found {found}")]
    LabelNodeMismatch {
        doc_id: String,
        node_id: NodeId,
        expected: String,
        found: String,
    },
    #[error("invalid generator config: {0}")]
    ConfigInvalid(String),
    #[error("generated page {doc_id} is inconsistent with its gold: {msg}")]
    GeneratorInconsistent { doc_id: String, msg: String },
    #[error("document {doc_id}: {source}")]
    Dom { doc_id: String, source: DomError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Reads one JSON value per non-blank line; errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| CorpusError::SchemaError {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<(), CorpusError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub doc_id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub website: String,
    pub domain: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Reads a manifest, rejecting duplicate doc ids and missing pages.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let entries: Vec<ManifestEntry> = read_jsonl(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.doc_id.as_str()) {
                return Err(CorpusError::SchemaError {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("duplicate doc_id {}", e.doc_id),
                });
            }
            let page = dir.join(&e.path);
            if !page.is_file() {
                return Err(CorpusError::MissingFile(page));
            }
        }
        Ok(Self { dir, entries })
    }

    pub fn split(&self, name: &str) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == name).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub domain: String,
    /// Attribute names; class id `k + 1` is `attributes[k]`, class 0 is None.
    pub attributes: Vec<String>,
}

impl Schema {
    pub fn class_of(&self, attribute: &str) -> Option<usize> {
        self.attributes
            .iter()
            .position(|a| a == attribute)
            .map(|k| k + 1)
    }

    pub fn name_of(&self, class: usize) -> Option<&str> {
        class
            .checked_sub(1)
            .and_then(|k| self.attributes.get(k))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttrLabel {
    pub doc_id: String,
    pub node_id: NodeId,
    pub tag_path: String,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLabel {
    pub doc_id: String,
    pub pred_node: NodeId,
    pub pred_path: String,
    pub obj_node: NodeId,
    pub obj_path: String,
    /// Acceptable predicate surface forms.
    pub forms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaLabel {
    pub question_id: String,
    pub doc_id: String,
    pub question: String,
    pub answers: Vec<String>,
    /// Node holding the answer text, when it lies in one node.
    pub node_id: Option<NodeId>,
    pub tag_path: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    pub attrs: Vec<AttrLabel>,
    pub pairs: Vec<PairLabel>,
    pub qa: Vec<QaLabel>,
}

impl Labels {
    pub fn attr_gold(&self) -> BTreeSet<AttrTriple> {
        self.attrs
            .iter()
            .map(|l| (l.doc_id.clone(), l.node_id, l.attribute.clone()))
            .collect()
    }

    pub fn pair_gold(&self) -> Vec<GoldPair> {
        self.pairs
            .iter()
            .map(|p| GoldPair {
                doc_id: p.doc_id.clone(),
                pred_node: p.pred_node,
                obj_node: p.obj_node,
                forms: p.forms.clone(),
            })
            .collect()
    }

    pub fn qa_gold(&self) -> BTreeMap<String, Vec<String>> {
        self.qa
            .iter()
            .map(|q| (q.question_id.clone(), q.answers.clone()))
            .collect()
    }

    /// Labels restricted to the given documents.
    pub fn for_docs(&self, docs: &BTreeSet<&str>) -> Labels {
        Labels {
            attrs: self
                .attrs
                .iter()
                .filter(|l| docs.contains(l.doc_id.as_str()))
                .cloned()
                .collect(),
            pairs: self
                .pairs
                .iter()
                .filter(|l| docs.contains(l.doc_id.as_str()))
                .cloned()
                .collect(),
            qa: self
                .qa
                .iter()
                .filter(|l| docs.contains(l.doc_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        write_jsonl(&dir.join(ATTRS_FILE), &self.attrs)?;
        write_jsonl(&dir.join(PAIRS_FILE), &self.pairs)?;
        write_jsonl(&dir.join(QA_FILE), &self.qa)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub entry: ManifestEntry,
    pub tree: DomTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub schema: Option<Schema>,
    pub pages: Vec<Page>,
    pub labels: Labels,
}

impl Dataset {
    pub fn page(&self, doc_id: &str) -> Option<&Page> {
        self.pages.iter().find(|p| p.entry.doc_id == doc_id)
    }
}

fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

fn check_node(
    trees: &BTreeMap<&str, &DomTree>,
    file: &Path,
    line: usize,
    doc_id: &str,
    node_id: NodeId,
    tag_path: &str,
) -> Result<(), CorpusError> {
    let tree = trees.get(doc_id).ok_or_else(|| CorpusError::SchemaError {
        path: file.to_path_buf(),
        line,
        msg: format!("unknown doc_id {doc_id}"),
    })?;
    if node_id >= tree.len() {
        return Err(CorpusError::LabelNodeMismatch {
            doc_id: doc_id.to_string(),
            node_id,
            expected: tag_path.to_string(),
            found: format!("tree of {} nodes", tree.len()),
        });
    }
    let found = tree.tag_path(node_id);
    if found != tag_path {
        return Err(CorpusError::LabelNodeMismatch {
            doc_id: doc_id.to_string(),
            node_id,
            expected: tag_path.to_string(),
            found,
        });
    }
    Ok(())
}

/// Checks every label against the cleaned trees.
pub fn verify_labels(pages: &[Page], labels: &Labels, dir: &Path) -> Result<(), CorpusError> {
    let trees: BTreeMap<&str, &DomTree> = pages
        .iter()
        .map(|p| (p.entry.doc_id.as_str(), &p.tree))
        .collect();
    let f = dir.join(ATTRS_FILE);
    for (i, l) in labels.attrs.iter().enumerate() {
        check_node(&trees, &f, i + 1, &l.doc_id, l.node_id, &l.tag_path)?;
    }
    let f = dir.join(PAIRS_FILE);
    for (i, l) in labels.pairs.iter().enumerate() {
        if l.forms.is_empty() {
            return Err(CorpusError::SchemaError {
                path: f,
                line: i + 1,
                msg: "empty forms list".into(),
            });
        }
        check_node(&trees, &f, i + 1, &l.doc_id, l.pred_node, &l.pred_path)?;
        check_node(&trees, &f, i + 1, &l.doc_id, l.obj_node, &l.obj_path)?;
    }
    let f = dir.join(QA_FILE);
    for (i, l) in labels.qa.iter().enumerate() {
        if l.answers.is_empty() {
            return Err(CorpusError::SchemaError {
                path: f,
                line: i + 1,
                msg: "empty answers list".into(),
            });
        }
        match (l.node_id, &l.tag_path) {
            (Some(n), Some(p)) => check_node(&trees, &f, i + 1, &l.doc_id, n, p)?,
            (None, None) => {}
            _ => {
                return Err(CorpusError::SchemaError {
                    path: f,
                    line: i + 1,
                    msg: "node_id and tag_path go together".into(),
                })
            }
        }
    }
    Ok(())
}

/// Loads and cleans every page of a manifest (in parallel), then reads and
/// verifies whichever label files sit next to it.
pub fn load_dataset(manifest_path: &Path, clean_cfg: &CleanConfig) -> Result<Dataset, CorpusError> {
    let manifest = Manifest::load(manifest_path)?;
    let pages = manifest
        .entries
        .par_iter()
        .map(|e| {
            let tree = load_tree(&manifest.dir.join(&e.path), clean_cfg).map_err(|source| {
                CorpusError::Dom {
                    doc_id: e.doc_id.clone(),
                    source,
                }
            })?;
            Ok(Page {
                entry: e.clone(),
                tree,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let dir = manifest.dir.clone();
    let schema_path = dir.join(SCHEMA_FILE);
    let schema = if schema_path.exists() {
        let raw = std::fs::read_to_string(&schema_path).map_err(io_err(&schema_path))?;
        Some(
            serde_json::from_str(&raw).map_err(|e| CorpusError::SchemaError {
                path: schema_path.clone(),
                line: e.line(),
                msg: e.to_string(),
            })?,
        )
    } else {
        None
    };
    let labels = Labels {
        attrs: read_optional(&dir.join(ATTRS_FILE))?,
        pairs: read_optional(&dir.join(PAIRS_FILE))?,
        qa: read_optional(&dir.join(QA_FILE))?,
    };
    verify_labels(&pages, &labels, &dir)?;
    Ok(Dataset {
        manifest,
        schema,
        pages,
        labels,
    })
}
