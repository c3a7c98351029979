//! Templated website generator with gold labels for all three tasks.
//!
//! Each site picks a layout family, class names and boilerplate; each template
//! of a site fixes attribute order, label wording and wrapper nesting; each
//! page draws an entity and attribute values. Noise draws come from a separate
//! random stream, so changing noise knobs never changes page content or gold
//! values.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    write_jsonl, AttrLabel, CorpusError, Labels, ManifestEntry, PairLabel, QaLabel, Schema,
    MANIFEST_FILE, SCHEMA_FILE,
};
use crate::dom::{clean, parse_html, CleanConfig, DomTree, NodeId};
use crate::text::normalize_whitespace;

/// File holding the page-level (few-shot) split of the same pages.
pub const FEW_SHOT_MANIFEST_FILE: &str = "manifest.fewshot.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    KeyValueTable,
    DefinitionList,
    HeaderParagraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValuePool {
    Choice { values: Vec<String> },
    Person,
    Year { from: u32, to: u32 },
    Number { from: u32, to: u32, suffix: String },
}

impl ValuePool {
    fn draw(&self, rng: &mut impl Rng) -> String {
        match self {
            ValuePool::Choice { values } => values.choose(rng).cloned().unwrap_or_default(),
            ValuePool::Person => format!(
                "{} {}",
                FIRST_NAMES.choose(rng).unwrap(),
                LAST_NAMES.choose(rng).unwrap()
            ),
            ValuePool::Year { from, to } => rng.gen_range(*from..=*to).to_string(),
            ValuePool::Number { from, to, suffix } => {
                format!("{} {suffix}", rng.gen_range(*from..=*to))
                    .trim()
                    .to_string()
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            ValuePool::Choice { values }
                if values.iter().all(|v| normalize_whitespace(v).is_empty()) =>
            {
                Err("choice pool needs a non-blank value".into())
            }
            ValuePool::Year { from, to } | ValuePool::Number { from, to, .. } if from > to => {
                Err("range has from > to".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    /// Label wordings templates choose from.
    pub labels: Vec<String>,
    pub values: ValuePool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Expected share of extra boilerplate blocks, up to six per page at 1.
    pub boilerplate: f64,
    /// Probability that a page shuffles its template's attribute order.
    pub reorder: f64,
    /// Probability of each of up to three distractor number nodes.
    pub distractors: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            boilerplate: 0.3,
            reorder: 0.0,
            distractors: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSiteConfig {
    pub sites: usize,
    pub templates_per_site: usize,
    pub pages_per_template: usize,
    pub domain: String,
    pub attributes: Vec<AttributeSpec>,
    /// Site `s` uses `layouts[s % layouts.len()]`.
    pub layouts: Vec<Layout>,
    pub noise: NoiseConfig,
    /// Sites held out for the zero-shot test split, at most `sites - 1`.
    pub test_sites: usize,
    /// Pages per template in the few-shot training split.
    pub few_shot_pages: usize,
    pub seed: u64,
}

impl Default for SyntheticSiteConfig {
    fn default() -> Self {
        Self {
            sites: 8,
            templates_per_site: 3,
            pages_per_template: 20,
            domain: "movie".into(),
            attributes: default_attributes(),
            layouts: vec![
                Layout::KeyValueTable,
                Layout::DefinitionList,
                Layout::HeaderParagraph,
            ],
            noise: NoiseConfig::default(),
            test_sites: 2,
            few_shot_pages: 5,
            seed: 0,
        }
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn default_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec {
            name: "director".into(),
            labels: strings(&["Director", "Directed by", "Film director"]),
            values: ValuePool::Person,
        },
        AttributeSpec {
            name: "genre".into(),
            labels: strings(&["Genre", "Category", "Film genre"]),
            values: ValuePool::Choice {
                values: strings(&[
                    "drama",
                    "comedy",
                    "thriller",
                    "horror",
                    "documentary",
                    "animation",
                    "romance",
                    "western",
                    "musical",
                    "fantasy",
                ]),
            },
        },
        AttributeSpec {
            name: "year".into(),
            labels: strings(&["Release year", "Year", "Released"]),
            values: ValuePool::Year {
                from: 1950,
                to: 2023,
            },
        },
        AttributeSpec {
            name: "runtime".into(),
            labels: strings(&["Runtime", "Running time", "Length"]),
            values: ValuePool::Number {
                from: 70,
                to: 180,
                suffix: "min".into(),
            },
        },
        AttributeSpec {
            name: "rating".into(),
            labels: strings(&["Rating", "Rated", "Certificate"]),
            values: ValuePool::Choice {
                values: strings(&["G", "PG", "PG-13", "R", "NC-17"]),
            },
        },
        AttributeSpec {
            name: "country".into(),
            labels: strings(&["Country", "Country of origin", "Origin"]),
            values: ValuePool::Choice {
                values: strings(&[
                    "France", "Italy", "Japan", "Mexico", "Brazil", "India", "Canada", "Spain",
                    "Germany", "Korea",
                ]),
            },
        },
    ]
}

impl SyntheticSiteConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::ConfigInvalid(m));
        if self.sites == 0 || self.templates_per_site == 0 || self.pages_per_template == 0 {
            return bad(
                "sites, templates_per_site and pages_per_template must be at least 1".into(),
            );
        }
        if self.attributes.is_empty() {
            return bad("at least one attribute is required".into());
        }
        let mut names = BTreeSet::new();
        for a in &self.attributes {
            if normalize_whitespace(&a.name).is_empty() || !names.insert(a.name.as_str()) {
                return bad(format!("attribute name {:?} is blank or repeated", a.name));
            }
            if a.labels.is_empty() || a.labels.iter().any(|l| normalize_whitespace(l).is_empty()) {
                return bad(format!("attribute {} needs non-blank labels", a.name));
            }
            a.values
                .validate()
                .or_else(|m| bad(format!("attribute {}: {m}", a.name)))?;
        }
        if self.layouts.is_empty() {
            return bad("at least one layout is required".into());
        }
        let n = &self.noise;
        if ![n.boilerplate, n.reorder, n.distractors]
            .iter()
            .all(|x| (0.0..=1.0).contains(x))
        {
            return bad("noise knobs must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn held_out_sites(&self) -> usize {
        self.test_sites.min(self.sites - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPage {
    /// Entry with the site-level (zero-shot) split.
    pub entry: ManifestEntry,
    /// Page-level (few-shot) split of the same page.
    pub few_shot_split: String,
    pub html: String,
    pub tree: DomTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SyntheticSiteConfig,
    pub schema: Schema,
    pub pages: Vec<SyntheticPage>,
    pub labels: Labels,
}

const FIRST_NAMES: &[&str] = &[
    "anna", "boris", "carla", "david", "elena", "felix", "greta", "hugo", "ines", "jonas", "karin",
    "lucas", "maria", "nils", "olga", "pablo", "rosa", "simon", "tara", "victor",
];
const LAST_NAMES: &[&str] = &[
    "adler", "brandt", "castro", "dumont", "eriksen", "fischer", "garcia", "hansen", "ivanov",
    "jansen", "keller", "lopez", "moreau", "novak", "olsen", "petrov", "quinn", "rossi", "schmidt",
    "tanaka",
];
const TITLE_ADJ: &[&str] = &[
    "silent", "broken", "golden", "hidden", "last", "crimson", "frozen", "distant", "wild", "lost",
    "bright", "dark", "endless", "quiet", "burning", "secret",
];
const TITLE_NOUN: &[&str] = &[
    "river", "empire", "garden", "voyage", "harbor", "mountain", "promise", "shadow", "kingdom",
    "letter", "island", "storm", "mirror", "station", "forest", "crown",
];
const SITE_WORDS: &[&str] = &[
    "cinema", "film", "movie", "screen", "reel", "picture", "flick", "studio",
];
const SITE_SUFFIX: &[&str] = &[
    "vault", "hub", "base", "world", "central", "archive", "guide", "zone",
];
const NAV_WORDS: &[&str] = &[
    "home",
    "news",
    "reviews",
    "top rated",
    "contact",
    "about",
    "forum",
    "login",
    "search",
    "help",
    "trailers",
];
const CONTAINER_CLASSES: &[&str] = &[
    "info", "details", "meta", "specs", "facts", "summary", "overview", "data",
];
const KEY_CLASSES: &[&str] = &[
    "label", "key", "name", "field", "prop", "term", "caption", "heading",
];
const VALUE_CLASSES: &[&str] = &[
    "value", "val", "content", "text", "entry", "desc", "answer", "detail",
];
const MAIN_CLASSES: &[&str] = &[
    "main",
    "content",
    "page",
    "article",
    "body-main",
    "container",
];
const BOILERPLATE: &[&str] = &[
    "subscribe to our newsletter",
    "advertisement",
    "share this page",
    "sponsored content",
    "sign up for free",
    "follow us on social media",
    "cookies help us deliver our services",
    "download our app",
];
const DISTRACTOR_UNITS: &[&str] = &["views", "comments", "votes", "reviews", "shares"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    Label(usize),
    Value(usize),
    Title,
    Other,
}

/// Minimal HTML writer that remembers every text-bearing element it emits,
/// in document order, so gold nodes can be located after cleaning.
#[derive(Default)]
struct Builder {
    out: String,
    texts: Vec<(Key, String)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Builder {
    fn open(&mut self, tag: &str, class: Option<&str>) {
        match class {
            Some(c) => write!(self.out, "<{tag} class=\"{}\">", esc(c)).unwrap(),
            None => write!(self.out, "<{tag}>").unwrap(),
        }
    }

    fn close(&mut self, tag: &str) {
        write!(self.out, "</{tag}>").unwrap();
    }

    fn leaf(&mut self, tag: &str, class: Option<&str>, text: &str, key: Key) {
        self.open(tag, class);
        self.out.push_str(&esc(text));
        self.close(tag);
        self.texts.push((key, normalize_whitespace(text)));
    }

    fn newline(&mut self) {
        self.out.push('\n');
    }
}

struct SiteStyle {
    name: String,
    layout: Layout,
    main_class: String,
    container_class: String,
    key_class: String,
    value_class: String,
    nav: Vec<String>,
}

struct TemplateStyle {
    order: Vec<usize>,
    labels: Vec<String>,
    wrappers: usize,
    sidebar_first: Option<bool>,
    title_tag: &'static str,
}

fn pick(rng: &mut impl Rng, pool: &[&str]) -> String {
    pool.choose(rng).unwrap().to_string()
}

fn site_style(cfg: &SyntheticSiteConfig, s: usize, rng: &mut ChaCha8Rng) -> SiteStyle {
    let mut nav: Vec<String> = NAV_WORDS.iter().map(|w| w.to_string()).collect();
    nav.shuffle(rng);
    nav.truncate(rng.gen_range(3..=6));
    SiteStyle {
        name: format!("{} {}", pick(rng, SITE_WORDS), pick(rng, SITE_SUFFIX)),
        layout: cfg.layouts[s % cfg.layouts.len()],
        main_class: pick(rng, MAIN_CLASSES),
        container_class: pick(rng, CONTAINER_CLASSES),
        key_class: pick(rng, KEY_CLASSES),
        value_class: pick(rng, VALUE_CLASSES),
        nav,
    }
}

fn template_style(cfg: &SyntheticSiteConfig, rng: &mut ChaCha8Rng) -> TemplateStyle {
    let mut order: Vec<usize> = (0..cfg.attributes.len()).collect();
    order.shuffle(rng);
    let colon = rng.gen_bool(0.5);
    let labels = cfg
        .attributes
        .iter()
        .map(|a| {
            let l = a.labels.choose(rng).unwrap().clone();
            if colon {
                format!("{l}:")
            } else {
                l
            }
        })
        .collect();
    let sidebar_first = match rng.gen_range(0..3) {
        0 => None,
        1 => Some(true),
        _ => Some(false),
    };
    TemplateStyle {
        order,
        labels,
        wrappers: rng.gen_range(0..=2),
        sidebar_first,
        title_tag: if rng.gen_bool(0.5) { "h1" } else { "h2" },
    }
}

fn entity_name(rng: &mut impl Rng) -> String {
    format!("the {} {}", pick(rng, TITLE_ADJ), pick(rng, TITLE_NOUN))
}

struct PageContent {
    entity: String,
    values: Vec<String>,
    related: Vec<String>,
}

/// Number of boilerplate blocks placed in each slot.
fn boilerplate_blocks(noise: &NoiseConfig, rng: &mut ChaCha8Rng, slots: usize) -> Vec<usize> {
    let extra = (0..6).filter(|_| rng.gen_bool(noise.boilerplate)).count();
    let mut counts = vec![0; slots];
    for _ in 0..extra {
        counts[rng.gen_range(0..slots)] += 1;
    }
    counts
}

fn emit_boilerplate(b: &mut Builder, n: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..n {
        let text = pick(rng, BOILERPLATE);
        b.open("div", Some("promo"));
        b.leaf("p", None, &text, Key::Other);
        b.close("div");
    }
}

fn emit_pairs(
    b: &mut Builder,
    site: &SiteStyle,
    tpl: &TemplateStyle,
    order: &[usize],
    content: &PageContent,
) {
    let (k, v) = (
        Some(site.key_class.as_str()),
        Some(site.value_class.as_str()),
    );
    match site.layout {
        Layout::KeyValueTable => {
            b.open("table", Some(&site.container_class));
            b.open("tbody", None);
            for &a in order {
                b.open("tr", None);
                b.leaf("th", k, &tpl.labels[a], Key::Label(a));
                b.leaf("td", v, &content.values[a], Key::Value(a));
                b.close("tr");
            }
            b.close("tbody");
            b.close("table");
        }
        Layout::DefinitionList => {
            b.open("dl", Some(&site.container_class));
            for &a in order {
                b.leaf("dt", k, &tpl.labels[a], Key::Label(a));
                b.leaf("dd", v, &content.values[a], Key::Value(a));
            }
            b.close("dl");
        }
        Layout::HeaderParagraph => {
            b.open("div", Some(&site.container_class));
            for &a in order {
                b.open("section", None);
                b.leaf("h4", k, &tpl.labels[a], Key::Label(a));
                b.leaf("p", v, &content.values[a], Key::Value(a));
                b.close("section");
            }
            b.close("div");
        }
    }
}

fn render(
    site: &SiteStyle,
    tpl: &TemplateStyle,
    content: &PageContent,
    noise: &NoiseConfig,
    nrng: &mut ChaCha8Rng,
) -> Builder {
    let mut b = Builder::default();
    b.out.push_str("<!DOCTYPE html>\n");
    b.open("html", None);
    b.open("head", None);
    b.leaf(
        "title",
        None,
        &format!("{} - {}", content.entity, site.name),
        Key::Other,
    );
    b.close("head");
    b.newline();
    b.open("body", None);
    b.open("div", Some("nav"));
    for item in &site.nav {
        b.leaf("a", None, item, Key::Other);
    }
    b.close("div");
    b.newline();

    let sidebar = |b: &mut Builder| {
        b.open("div", Some("sidebar"));
        b.leaf("h3", None, "related", Key::Other);
        b.open("ul", None);
        for r in &content.related {
            b.leaf("li", None, r, Key::Other);
        }
        b.close("ul");
        b.close("div");
        b.newline();
    };
    if tpl.sidebar_first == Some(true) {
        sidebar(&mut b);
    }

    let mut order = tpl.order.clone();
    if nrng.gen_bool(noise.reorder) {
        order.shuffle(nrng);
    }
    let slots = boilerplate_blocks(noise, nrng, 3);
    let mut distractors = Vec::new();
    for _ in 0..3 {
        if nrng.gen_bool(noise.distractors) {
            distractors.push(format!(
                "{} {}",
                nrng.gen_range(1..100_000),
                pick(nrng, DISTRACTOR_UNITS)
            ));
        }
    }

    b.open("div", Some(&site.main_class));
    emit_boilerplate(&mut b, slots[0], nrng);
    b.leaf(tpl.title_tag, Some("title"), &content.entity, Key::Title);
    for d in &distractors {
        b.leaf("span", Some("stat"), d, Key::Other);
    }
    emit_boilerplate(&mut b, slots[1], nrng);
    for _ in 0..tpl.wrappers {
        b.open("div", Some("box"));
    }
    emit_pairs(&mut b, site, tpl, &order, content);
    for _ in 0..tpl.wrappers {
        b.close("div");
    }
    emit_boilerplate(&mut b, slots[2], nrng);
    b.close("div");
    b.newline();

    if tpl.sidebar_first == Some(false) {
        sidebar(&mut b);
    }
    b.open("div", Some("footer"));
    b.leaf(
        "p",
        None,
        &format!("copyright {} all rights reserved", site.name),
        Key::Other,
    );
    b.close("div");
    b.close("body");
    b.close("html");
    b.newline();
    b
}

/// Maps builder text records onto cleaned-tree nodes and checks each text.
fn locate(
    doc_id: &str,
    tree: &DomTree,
    texts: &[(Key, String)],
) -> Result<Vec<(Key, NodeId)>, CorpusError> {
    let bearing: Vec<NodeId> = tree
        .preorder
        .iter()
        .copied()
        .filter(|&v| !tree.node(v).text.is_empty())
        .collect();
    let fail = |msg: String| CorpusError::GeneratorInconsistent {
        doc_id: doc_id.to_string(),
        msg,
    };
    if bearing.len() != texts.len() {
        return Err(fail(format!(
            "{} text nodes after cleaning, {} emitted",
            bearing.len(),
            texts.len()
        )));
    }
    bearing
        .iter()
        .zip(texts)
        .map(|(&v, (key, text))| {
            if &tree.node(v).text != text {
                return Err(fail(format!(
                    "node {v} has text {:?}, expected {text:?}",
                    tree.node(v).text
                )));
            }
            Ok((*key, v))
        })
        .collect()
}

fn label_forms(label: &str) -> Vec<String> {
    let base = normalize_whitespace(label.trim_end_matches(':'));
    let mut forms = vec![normalize_whitespace(label)];
    for f in [base.clone(), format!("{base}:")] {
        if !forms.contains(&f) {
            forms.push(f);
        }
    }
    forms
}

/// Builds the corpus in memory, cleaning every page and checking gold
/// consistency against the cleaned trees.
pub fn generate_synthetic(cfg: &SyntheticSiteConfig) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nrng = ChaCha8Rng::seed_from_u64(cfg.seed);
    nrng.set_stream(1);
    let clean_cfg = CleanConfig::default();
    let held_out = cfg.held_out_sites();
    let mut pages = Vec::new();
    let mut labels = Labels::default();
    for s in 0..cfg.sites {
        let site = site_style(cfg, s, &mut rng);
        let split = if s >= cfg.sites - held_out {
            "test"
        } else {
            "train"
        };
        for t in 0..cfg.templates_per_site {
            let tpl = template_style(cfg, &mut rng);
            for p in 0..cfg.pages_per_template {
                let doc_id = format!("s{s:02}_t{t}_p{p:03}");
                let content = PageContent {
                    entity: entity_name(&mut rng),
                    values: cfg
                        .attributes
                        .iter()
                        .map(|a| a.values.draw(&mut rng))
                        .collect(),
                    related: (0..2).map(|_| entity_name(&mut rng)).collect(),
                };
                let b = render(&site, &tpl, &content, &cfg.noise, &mut nrng);
                let raw = parse_html(b.out.as_bytes()).map_err(|source| CorpusError::Dom {
                    doc_id: doc_id.clone(),
                    source,
                })?;
                let tree = clean(&raw, &clean_cfg).map_err(|source| CorpusError::Dom {
                    doc_id: doc_id.clone(),
                    source,
                })?;
                let located = locate(&doc_id, &tree, &b.texts)?;
                let find = |k: Key| located.iter().find(|(key, _)| *key == k).map(|(_, v)| *v);
                for (a, spec) in cfg.attributes.iter().enumerate() {
                    let (Some(lv), Some(vv)) = (find(Key::Label(a)), find(Key::Value(a))) else {
                        return Err(CorpusError::GeneratorInconsistent {
                            doc_id,
                            msg: format!("attribute {} not emitted", spec.name),
                        });
                    };
                    labels.attrs.push(AttrLabel {
                        doc_id: doc_id.clone(),
                        node_id: vv,
                        tag_path: tree.tag_path(vv),
                        attribute: spec.name.clone(),
                    });
                    labels.pairs.push(PairLabel {
                        doc_id: doc_id.clone(),
                        pred_node: lv,
                        pred_path: tree.tag_path(lv),
                        obj_node: vv,
                        obj_path: tree.tag_path(vv),
                        forms: label_forms(&tpl.labels[a]),
                    });
                    labels.qa.push(QaLabel {
                        question_id: format!("{doc_id}_q{a}"),
                        doc_id: doc_id.clone(),
                        question: format!(
                            "what is the {} of {}?",
                            spec.name.replace('_', " "),
                            content.entity
                        ),
                        answers: vec![normalize_whitespace(&content.values[a])],
                        node_id: Some(vv),
                        tag_path: Some(tree.tag_path(vv)),
                    });
                }
                let entry = ManifestEntry {
                    doc_id: doc_id.clone(),
                    path: format!("pages/{doc_id}.html").into(),
                    website: format!("site{s:02}"),
                    domain: cfg.domain.clone(),
                    split: split.to_string(),
                };
                let few_shot_split = if p < cfg.few_shot_pages {
                    "train"
                } else {
                    "test"
                }
                .to_string();
                pages.push(SyntheticPage {
                    entry,
                    few_shot_split,
                    html: b.out,
                    tree,
                });
            }
        }
    }
    let schema = Schema {
        domain: cfg.domain.clone(),
        attributes: cfg.attributes.iter().map(|a| a.name.clone()).collect(),
    };
    Ok(SyntheticCorpus {
        config: cfg.clone(),
        schema,
        pages,
        labels,
    })
}

/// Writes pages, both manifests, labels, schema and the generator config.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<(), CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let pages_dir = dir.join("pages");
    fs::create_dir_all(&pages_dir).map_err(io(&pages_dir))?;
    for p in &corpus.pages {
        let path = dir.join(&p.entry.path);
        fs::write(&path, &p.html).map_err(io(&path))?;
    }
    write_jsonl(
        &dir.join(MANIFEST_FILE),
        corpus.pages.iter().map(|p| &p.entry),
    )?;
    let few: Vec<ManifestEntry> = corpus
        .pages
        .iter()
        .map(|p| ManifestEntry {
            split: p.few_shot_split.clone(),
            ..p.entry.clone()
        })
        .collect();
    write_jsonl(&dir.join(FEW_SHOT_MANIFEST_FILE), &few)?;
    corpus.labels.write_dir(dir)?;
    let schema_path = dir.join(SCHEMA_FILE);
    fs::write(
        &schema_path,
        serde_json::to_string_pretty(&corpus.schema).unwrap(),
    )
    .map_err(io(&schema_path))?;
    let cfg_path = dir.join("generator.json");
    fs::write(
        &cfg_path,
        serde_json::to_string_pretty(&corpus.config).unwrap(),
    )
    .map_err(io(&cfg_path))
}
