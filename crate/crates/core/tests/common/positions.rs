use domlm::corpus::{generate_synthetic, SyntheticSiteConfig};
use domlm::dom::DomTree;
use domlm::linearizer::{linearize, PosRow, PositionConfig};
use domlm::tokenizer::{tokenize_node, TagTable, TokenId, Vocab};
use domlm::windower::{generate_subtrees, Subtree, WindowConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tokens and position rows computed column by column from the tree, one
/// question per column: where is the node in the window, who is its parent,
/// how many earlier window siblings share that parent, how deep is it.
pub fn naive_positions(
    tree: &DomTree,
    window: &Subtree,
    vocab: &Vocab,
    tags: &TagTable,
    cfg: &PositionConfig,
) -> (Vec<TokenId>, Vec<PosRow>) {
    let clip = |v: usize, size: usize| v.min(size - 1) as u32;
    let in_window = |v: usize| window.node_ids.contains(&v);
    let rank = |v: usize| 1 + window.node_ids.iter().filter(|&&u| u < v).count();
    let mut tokens = Vec::new();
    let mut rows = Vec::new();
    for &v in &window.node_ids {
        let parent = tree.nodes[v].parent.filter(|&p| in_window(p));
        let earlier_siblings = window
            .node_ids
            .iter()
            .filter(|&&u| u < v && tree.nodes[u].parent.filter(|&p| in_window(p)) == parent)
            .count();
        let mut depth = 0;
        let mut up = tree.nodes[v].parent;
        while let Some(p) = up {
            depth += 1;
            up = tree.nodes[p].parent;
        }
        for tok in tokenize_node(&tree.nodes[v], vocab).tokens {
            rows.push([
                clip(rank(v), cfg.max_nodes),
                clip(parent.map_or(0, rank), cfg.max_nodes),
                clip(earlier_siblings + 1, cfg.max_nodes),
                clip(depth, cfg.max_depth),
                tags.id(&tree.nodes[v].tag) as u32,
                clip(tokens.len(), cfg.max_len),
            ]);
            tokens.push(tok);
        }
    }
    (tokens, rows)
}

/// Compares the linearizer with the naive oracle on `n` random windows of
/// synthetic pages; returns the number of mismatching windows.
pub fn position_oracle_suite(n: usize, seed: u64) -> usize {
    let corpus = generate_synthetic(&SyntheticSiteConfig {
        sites: 4,
        templates_per_site: 2,
        pages_per_template: 3,
        test_sites: 1,
        seed,
        ..Default::default()
    })
    .unwrap();
    let vocab = Vocab::build(corpus.pages.iter().map(|p| &p.tree), 1).unwrap();
    let tags = vocab.tag_table();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..n {
        let page = corpus.pages.choose(&mut rng).unwrap();
        let tree = &page.tree;
        let toks: Vec<_> = tree
            .nodes
            .iter()
            .map(|node| tokenize_node(node, &vocab))
            .collect();
        let counts: Vec<usize> = toks.iter().map(|t| t.count()).collect();
        let m = rng.gen_range(counts.iter().copied().max().unwrap()..=200);
        let s = rng.gen_range(1..=m);
        let windows = generate_subtrees(tree, &counts, &WindowConfig::new(m, s)).unwrap();
        let w = windows.choose(&mut rng).unwrap();
        let cfg = if rng.gen_bool(0.3) {
            PositionConfig {
                max_nodes: 8,
                max_depth: 4,
                max_len: 32,
            }
        } else {
            PositionConfig::default()
        };
        let seq = linearize(w, tree, &toks, &tags, &cfg, &page.entry.doc_id).unwrap();
        let (tokens, rows) = naive_positions(tree, w, &vocab, &tags, &cfg);
        if seq.tokens != tokens || seq.pos != rows {
            mismatches += 1;
        }
    }
    mismatches
}
