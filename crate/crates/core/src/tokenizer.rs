//! Word-level vocabulary and per-node tokenization.
//!
//! Every node becomes `[<tag>] ++ attribute tokens ++ text tokens`. Attribute
//! tokens are the attribute name followed by the words of its value.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::dom::{DomNode, DomTree, NodeId};
use crate::text::split_words;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const MASK: TokenId = 2;
pub const YES: TokenId = 3;
pub const NO: TokenId = 4;
pub const QSEP: TokenId = 5;
pub const NUM_SPECIALS: usize = 6;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[MASK]", "[YES]", "[NO]", "[QSEP]"];
const HEADER: &str = "#domlm-vocab v1 PAD=0 UNK=1 MASK=2 YES=3 NO=4 QSEP=5";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    InvalidMinFreq,
    #[error("vocab io: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocab file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

pub fn tag_token(tag: &str) -> String {
    format!("<{tag}>")
}

fn is_tag_token(tok: &str) -> bool {
    tok.len() > 2 && tok.starts_with('<') && tok.ends_with('>')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
}

fn node_words(node: &DomNode, mut f: impl FnMut(String)) {
    for (name, value) in &node.attrs {
        split_words(name).into_iter().for_each(&mut f);
        split_words(value).into_iter().for_each(&mut f);
    }
    split_words(&node.text).into_iter().for_each(&mut f);
}

impl Vocab {
    /// Builds a vocabulary from cleaned trees. Tag tokens are always kept;
    /// words need `min_freq` occurrences. Ids follow descending frequency,
    /// ties broken lexicographically.
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a DomTree>,
        min_freq: usize,
    ) -> Result<Self, VocabError> {
        if min_freq == 0 {
            return Err(VocabError::InvalidMinFreq);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut docs = 0usize;
        for tree in corpus {
            docs += 1;
            for node in &tree.nodes {
                *counts.entry(tag_token(&node.tag)).or_default() += 1;
                node_words(node, |w| *counts.entry(w).or_default() += 1);
            }
        }
        if docs == 0 {
            return Err(VocabError::EmptyCorpus);
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_freq || is_tag_token(tok))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(
            SPECIAL_NAMES
                .iter()
                .map(|s| s.to_string())
                .chain(entries.into_iter().map(|(t, _)| t))
                .collect(),
        ))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> TokenId {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Tokenizes free text (questions, answers) with the same word rules as
    /// node text.
    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        split_words(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for tok in &self.id_to_token {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, VocabError> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h == HEADER => {}
            Some(Err(e)) => return Err(e.into()),
            _ => {
                return Err(VocabError::Format {
                    line: 1,
                    msg: format!("expected header `{HEADER}`"),
                })
            }
        }
        let toks = lines.collect::<Result<Vec<_>, _>>()?;
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if toks.get(i).map(String::as_str) != Some(name) {
                return Err(VocabError::Format {
                    line: i + 2,
                    msg: format!("expected special {name}"),
                });
            }
        }
        let v = Self::from_tokens(toks);
        if v.token_to_id.len() != v.id_to_token.len() {
            return Err(VocabError::Format {
                line: 0,
                msg: "duplicate tokens".into(),
            });
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn tag_table(&self) -> TagTable {
        TagTable::from_vocab(self)
    }
}

/// Tag ids for the tag position feature. Id 0 marks non-DOM tokens, id 1 an
/// unseen tag; the rest follow vocabulary order of the `<tag>` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagTable {
    ids: HashMap<String, usize>,
    size: usize,
}

impl TagTable {
    pub const NONE: usize = 0;
    pub const UNKNOWN: usize = 1;

    pub fn from_vocab(vocab: &Vocab) -> Self {
        let ids: HashMap<String, usize> = vocab
            .tokens()
            .iter()
            .filter(|t| is_tag_token(t))
            .enumerate()
            .map(|(i, t)| (t[1..t.len() - 1].to_string(), i + 2))
            .collect();
        let size = ids.len() + 2;
        Self { ids, size }
    }

    pub fn id(&self, tag: &str) -> usize {
        self.ids.get(tag).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedNode {
    pub node_id: NodeId,
    pub tokens: Vec<TokenId>,
    pub tag_span: Range<usize>,
    pub attr_span: Range<usize>,
    pub text_span: Range<usize>,
}

impl TokenizedNode {
    pub fn count(&self) -> usize {
        self.tokens.len()
    }
}

pub fn tokenize_node(node: &DomNode, vocab: &Vocab) -> TokenizedNode {
    let mut tokens = vec![vocab.id(&tag_token(&node.tag))];
    for (name, value) in &node.attrs {
        tokens.extend(split_words(name).iter().map(|w| vocab.id(w)));
        tokens.extend(split_words(value).iter().map(|w| vocab.id(w)));
    }
    let attr_end = tokens.len();
    tokens.extend(split_words(&node.text).iter().map(|w| vocab.id(w)));
    let end = tokens.len();
    TokenizedNode {
        node_id: node.node_id,
        tokens,
        tag_span: 0..1,
        attr_span: 1..attr_end,
        text_span: attr_end..end,
    }
}

pub fn tokenize_tree(tree: &DomTree, vocab: &Vocab) -> Vec<TokenizedNode> {
    tree.nodes.iter().map(|n| tokenize_node(n, vocab)).collect()
}
