//! HTML ingestion: parsing raw bytes into an element tree and cleaning it
//! into a compact [`DomTree`] with preorder node identifiers.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use scraper::{Html, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize_whitespace, truncate_words};

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum DomError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("undecodable input bytes (encoding {0})")]
    Encoding(String),
    #[error("document is empty after cleaning")]
    EmptyDocument,
}

/// Kind of a node in the uncleaned parse tree.
#[derive(Debug, Clone, PartialEq)]
pub enum RawKind {
    Document,
    Element {
        name: String,
        attrs: Vec<(String, String)>,
    },
    Text(String),
    Comment,
    ProcessingInstruction,
    Doctype,
}

#[derive(Debug, Clone)]
pub struct RawNode {
    pub kind: RawKind,
    pub children: Vec<usize>,
}

/// Full parse tree as produced by the HTML5 tree builder, including script,
/// style and comment nodes.
#[derive(Debug, Clone)]
pub struct RawDom {
    pub nodes: Vec<RawNode>,
    pub root: usize,
}

impl RawDom {
    /// Names of element children of `id`, in source order.
    pub fn element_children(&self, id: usize) -> impl Iterator<Item = (usize, &str)> + '_ {
        self.nodes[id]
            .children
            .iter()
            .filter_map(move |&c| match &self.nodes[c].kind {
                RawKind::Element { name, .. } => Some((c, name.as_str())),
                _ => None,
            })
    }
}

fn sniff_charset(raw: &[u8]) -> Option<&'static encoding_rs::Encoding> {
    let head = &raw[..raw.len().min(1024)];
    let lower: Vec<u8> = head.iter().map(|b| b.to_ascii_lowercase()).collect();
    let pos = lower.windows(8).position(|w| w == b"charset=")?;
    let rest = &lower[pos + 8..];
    let rest = rest
        .strip_prefix(b"\"")
        .or_else(|| rest.strip_prefix(b"'"))
        .unwrap_or(rest);
    let end = rest
        .iter()
        .position(|b| !(b.is_ascii_alphanumeric() || *b == b'-' || *b == b'_'))
        .unwrap_or(rest.len());
    encoding_rs::Encoding::for_label(&rest[..end])
}

fn decode(raw: &[u8]) -> Result<String, DomError> {
    if let Some(stripped) = raw.strip_prefix(b"\xEF\xBB\xBF") {
        return String::from_utf8(stripped.to_vec())
            .map_err(|_| DomError::Encoding("UTF-8".into()));
    }
    match sniff_charset(raw) {
        Some(enc) if enc != encoding_rs::UTF_8 => enc
            .decode_without_bom_handling_and_without_replacement(raw)
            .map(|s| s.into_owned())
            .ok_or_else(|| DomError::Encoding(enc.name().to_string())),
        _ => String::from_utf8(raw.to_vec()).map_err(|_| DomError::Encoding("UTF-8".into())),
    }
}

/// Parses raw HTML bytes with HTML5 error recovery.
pub fn parse_html(raw: &[u8]) -> Result<RawDom, DomError> {
    let text = decode(raw)?;
    let html = Html::parse_document(&text);
    let mut nodes = Vec::new();
    convert(html.tree.root(), &mut nodes);
    Ok(RawDom { nodes, root: 0 })
}

pub fn parse_file(path: &Path) -> Result<RawDom, DomError> {
    let raw = std::fs::read(path).map_err(|source| DomError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_html(&raw)
}

fn convert(node: ego_tree::NodeRef<'_, Node>, out: &mut Vec<RawNode>) -> usize {
    let kind = match node.value() {
        Node::Document | Node::Fragment => RawKind::Document,
        Node::Doctype(_) => RawKind::Doctype,
        Node::Comment(_) => RawKind::Comment,
        Node::ProcessingInstruction(_) => RawKind::ProcessingInstruction,
        Node::Text(t) => RawKind::Text(t.to_string()),
        Node::Element(e) => RawKind::Element {
            name: e.name().to_ascii_lowercase(),
            attrs: e
                .attrs()
                .map(|(k, v)| (k.to_ascii_lowercase(), v.to_string()))
                .collect(),
        },
    };
    let id = out.len();
    out.push(RawNode {
        kind,
        children: Vec::new(),
    });
    let children: Vec<usize> = node.children().map(|c| convert(c, out)).collect();
    out[id].children = children;
    id
}

/// Cleaning configuration: which element subtrees are deleted and which
/// attributes survive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub removed_tags: BTreeSet<String>,
    pub kept_attrs: Vec<String>,
    pub max_attr_tokens: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            removed_tags: ["script", "style", "noscript", "iframe"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            kept_attrs: vec!["class".into(), "id".into()],
            max_attr_tokens: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomNode {
    pub node_id: NodeId,
    pub tag: String,
    pub attrs: Vec<(String, String)>,
    pub text: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
}

/// Cleaned document tree. Node ids are preorder ranks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomTree {
    pub nodes: Vec<DomNode>,
    pub root: NodeId,
    pub preorder: Vec<NodeId>,
    pub postorder: Vec<NodeId>,
}

struct Built {
    tag: String,
    attrs: Vec<(String, String)>,
    text: String,
    children: Vec<Built>,
}

fn build(raw: &RawDom, id: usize, cfg: &CleanConfig) -> Option<Built> {
    let RawKind::Element { name, attrs } = &raw.nodes[id].kind else {
        return None;
    };
    if cfg.removed_tags.contains(name) {
        return None;
    }
    let mut texts = Vec::new();
    let mut children = Vec::new();
    for &c in &raw.nodes[id].children {
        match &raw.nodes[c].kind {
            RawKind::Text(t) => texts.push(t.as_str()),
            RawKind::Element { .. } => children.extend(build(raw, c, cfg)),
            _ => {}
        }
    }
    let text = normalize_whitespace(&texts.join(" "));
    let attrs: Vec<(String, String)> = attrs
        .iter()
        .filter(|(k, _)| cfg.kept_attrs.iter().any(|a| a == k))
        .map(|(k, v)| {
            (
                k.clone(),
                truncate_words(&normalize_whitespace(v), cfg.max_attr_tokens).to_string(),
            )
        })
        .filter(|(_, v)| !v.is_empty())
        .collect();
    if attrs.is_empty() && text.is_empty() && children.is_empty() {
        return None;
    }
    Some(Built {
        tag: name.clone(),
        attrs,
        text,
        children,
    })
}

fn flatten(
    b: Built,
    parent: Option<NodeId>,
    depth: usize,
    nodes: &mut Vec<DomNode>,
    post: &mut Vec<NodeId>,
) -> NodeId {
    let id = nodes.len();
    nodes.push(DomNode {
        node_id: id,
        tag: b.tag,
        attrs: b.attrs,
        text: b.text,
        parent,
        children: Vec::new(),
        depth,
    });
    let kids: Vec<NodeId> = b
        .children
        .into_iter()
        .map(|c| flatten(c, Some(id), depth + 1, nodes, post))
        .collect();
    nodes[id].children = kids;
    post.push(id);
    id
}

/// Removes configured subtrees, filters attributes, normalizes text, prunes
/// contentless leaves and renumbers nodes in preorder.
pub fn clean(raw: &RawDom, cfg: &CleanConfig) -> Result<DomTree, DomError> {
    let top = raw
        .element_children(raw.root)
        .find_map(|(c, _)| build(raw, c, cfg))
        .ok_or(DomError::EmptyDocument)?;
    let mut nodes = Vec::new();
    let mut postorder = Vec::new();
    flatten(top, None, 0, &mut nodes, &mut postorder);
    let preorder = (0..nodes.len()).collect();
    Ok(DomTree {
        nodes,
        root: 0,
        preorder,
        postorder,
    })
}

pub fn load_tree(path: &Path, cfg: &CleanConfig) -> Result<DomTree, DomError> {
    clean(&parse_file(path)?, cfg)
}

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track",
    "wbr",
];

fn escape(s: &str, attr: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            c => out.push(c),
        }
    }
    out
}

impl DomTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &DomNode {
        &self.nodes[id]
    }

    /// Absolute tag path such as `/html[1]/body[1]/div[2]`, where the index
    /// counts same-tag siblings from 1.
    pub fn tag_path(&self, id: NodeId) -> String {
        let mut parts = Vec::new();
        let mut cur = id;
        loop {
            let node = &self.nodes[cur];
            let rank = match node.parent {
                Some(p) => {
                    self.nodes[p]
                        .children
                        .iter()
                        .take_while(|&&c| c != cur)
                        .filter(|&&c| self.nodes[c].tag == node.tag)
                        .count()
                        + 1
                }
                None => 1,
            };
            parts.push(format!("{}[{}]", node.tag, rank));
            match node.parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        parts.reverse();
        format!("/{}", parts.join("/"))
    }

    /// Serializes the cleaned tree back to HTML. Each element's own text is
    /// written before its children.
    pub fn to_html(&self) -> String {
        let mut out = String::from("<!DOCTYPE html>");
        self.write_node(self.root, &mut out);
        out
    }

    fn write_node(&self, id: NodeId, out: &mut String) {
        let n = &self.nodes[id];
        let _ = write!(out, "<{}", n.tag);
        for (k, v) in &n.attrs {
            let _ = write!(out, " {}=\"{}\"", k, escape(v, true));
        }
        out.push('>');
        if VOID.contains(&n.tag.as_str()) {
            return;
        }
        out.push_str(&escape(&n.text, false));
        for &c in &n.children {
            self.write_node(c, out);
        }
        let _ = write!(out, "</{}>", n.tag);
    }
}
