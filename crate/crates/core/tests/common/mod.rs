//! Oracles and suites shared by the integration tests and the acceptance run.

#![allow(dead_code)]

pub mod desk;
pub mod encoder;
pub mod heads;
pub mod masking;
pub mod metrics;
pub mod positions;

use std::collections::BTreeSet;

use domlm::testing::{random_parents, tree_from_parents};
use domlm::windower::{generate_subtrees, WindowConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct WindowFixture {
    pub name: &'static str,
    pub parents: Vec<Option<usize>>,
    pub counts: Vec<usize>,
    pub m: usize,
    pub s: usize,
    pub expected: Vec<Vec<usize>>,
}

/// Expected windows were traced by hand, step by step, through the
/// expand/prune/slide loop. Trees are written as parent tables in preorder.
pub fn window_fixtures() -> Vec<WindowFixture> {
    let chain: Vec<Option<usize>> = (0..7).map(|i: usize| i.checked_sub(1)).collect();
    // 0 html; 1 body; 2 div (3 4 5); 6 div (7 8 9)
    let two_divs = vec![
        None,
        Some(0),
        Some(1),
        Some(2),
        Some(2),
        Some(2),
        Some(1),
        Some(6),
        Some(6),
        Some(6),
    ];
    // same with a footer 10 under html
    let mut with_footer = two_divs.clone();
    with_footer.push(Some(0));
    // 0 body; 1 div; 2 div (3 4 5); 6 div (7)
    let wide_root = vec![
        None,
        Some(0),
        Some(1),
        Some(2),
        Some(2),
        Some(2),
        Some(0),
        Some(6),
    ];
    vec![
        WindowFixture {
            name: "chain of 7, budget 5, stride 3: root removal",
            parents: chain,
            counts: vec![1; 7],
            m: 5,
            s: 3,
            expected: vec![vec![0, 1, 2, 3, 4], vec![2, 3, 4, 5, 6]],
        },
        WindowFixture {
            name: "window of 5, stride 3: postorder pruning then root removal",
            parents: two_divs.clone(),
            counts: vec![1; 10],
            m: 5,
            s: 3,
            expected: vec![vec![0, 1, 2, 3, 4], vec![1, 2, 5, 6, 7], vec![1, 6, 8, 9]],
        },
        WindowFixture {
            name: "window of 5, stride 3: root with two children drops the last new node",
            parents: wide_root,
            counts: vec![1; 8],
            m: 5,
            s: 3,
            expected: vec![vec![0, 1, 2, 3, 4], vec![0, 1, 2, 5, 6], vec![0, 1, 6, 7]],
        },
        WindowFixture {
            name: "window of 5, stride 3: new nodes outside the window root",
            parents: with_footer,
            counts: vec![1; 11],
            m: 5,
            s: 3,
            expected: vec![
                vec![0, 1, 2, 3, 4],
                vec![1, 2, 5, 6, 7],
                vec![1, 6, 8, 9],
                vec![10],
            ],
        },
        WindowFixture {
            name: "token counts: one leaf per window under the root",
            parents: vec![None, Some(0), Some(0), Some(0)],
            counts: vec![2, 3, 3, 3],
            m: 6,
            s: 3,
            expected: vec![vec![0, 1], vec![0, 2], vec![0, 3]],
        },
        WindowFixture {
            name: "whole tree within budget",
            parents: two_divs,
            counts: vec![1; 10],
            m: 100,
            s: 10,
            expected: vec![(0..10).collect()],
        },
    ]
}

#[derive(Debug, Default)]
pub struct WindowSuiteReport {
    pub trees: usize,
    pub windows: usize,
    pub violations: Vec<String>,
}

/// Random trees with branching 1..=6, depth at most 10 and token counts
/// 1..=20, windowed under random budgets and strides. Every window is checked
/// for coverage, budget, connectivity, determinism and preorder order.
pub fn random_window_suite(trees: usize, seed: u64) -> WindowSuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = WindowSuiteReport {
        trees,
        ..Default::default()
    };
    for t in 0..trees {
        let branching = rng.gen_range(1..=6);
        let depth = rng.gen_range(1..=10);
        let parents = random_parents(&mut rng, branching, depth, 300);
        let tree = tree_from_parents(&parents);
        let counts: Vec<usize> = (0..parents.len()).map(|_| rng.gen_range(1..=20)).collect();
        let m = rng.gen_range(20..=120);
        let s = rng.gen_range(1..=m);
        let cfg = WindowConfig::new(m, s);
        let mut fail = |msg: String| {
            report
                .violations
                .push(format!("tree {t} (M={m}, S={s}): {msg}"))
        };
        let windows = match generate_subtrees(&tree, &counts, &cfg) {
            Ok(w) => w,
            Err(e) => {
                fail(format!("error {e}"));
                continue;
            }
        };
        if generate_subtrees(&tree, &counts, &cfg).as_ref() != Ok(&windows) {
            fail("second run differs".into());
        }
        let mut seen = BTreeSet::new();
        let mut prev_first = 0;
        for (k, w) in windows.iter().enumerate() {
            if w.window_index != k {
                fail(format!("window {k} has index {}", w.window_index));
            }
            if w.node_ids.is_empty() {
                fail(format!("window {k} is empty"));
                continue;
            }
            if !w.node_ids.windows(2).all(|p| p[0] < p[1]) {
                fail(format!("window {k} not in preorder"));
            }
            let total: usize = w.node_ids.iter().map(|&v| counts[v]).sum();
            if total != w.token_total || total > m {
                fail(format!(
                    "window {k} holds {total} tokens, reports {}",
                    w.token_total
                ));
            }
            let members: BTreeSet<usize> = w.node_ids.iter().copied().collect();
            let top = w.node_ids[0];
            if w.node_ids
                .iter()
                .any(|&v| v != top && !parents[v].is_some_and(|p| members.contains(&p)))
            {
                fail(format!("window {k} is disconnected"));
            }
            if top < prev_first {
                fail(format!("window {k} starts at {top} after {prev_first}"));
            }
            prev_first = top;
            seen.extend(members);
        }
        if seen.len() != parents.len() {
            fail(format!("{} of {} nodes covered", seen.len(), parents.len()));
        }
        report.windows += windows.len();
    }
    report
}
