mod common;

use domlm::testing::tree_from_parents;
use domlm::windower::{coverage_report, generate_subtrees, WindowConfig, WindowError};

fn sets(parents: &[Option<usize>], counts: &[usize], m: usize, s: usize) -> Vec<Vec<usize>> {
    let tree = tree_from_parents(parents);
    generate_subtrees(&tree, counts, &WindowConfig::new(m, s))
        .unwrap()
        .into_iter()
        .map(|w| w.node_ids)
        .collect()
}

#[test]
fn chain_of_seven_with_budget_five_stride_three() {
    let chain: Vec<Option<usize>> = (0..7usize).map(|i| i.checked_sub(1)).collect();
    assert_eq!(
        sets(&chain, &[1; 7], 5, 3),
        vec![vec![0, 1, 2, 3, 4], vec![2, 3, 4, 5, 6]]
    );
}

#[test]
fn hand_simulated_fixtures_match() {
    for f in common::window_fixtures() {
        let got = sets(&f.parents, &f.counts, f.m, f.s);
        assert_eq!(got, f.expected, "{}", f.name);
    }
}

#[test]
fn randomized_trees_satisfy_invariants() {
    let report = common::random_window_suite(1000, 7);
    assert_eq!(report.violations, Vec::<String>::new());
    assert!(report.windows > 1000);
}

#[test]
fn stride_larger_than_budget_is_rejected() {
    let tree = tree_from_parents(&[None, Some(0)]);
    let err = generate_subtrees(&tree, &[1, 1], &WindowConfig::new(2, 3)).unwrap_err();
    assert!(matches!(err, WindowError::InvalidStride { .. }));
}

#[test]
fn chain_coverage_counts_overlap() {
    let chain: Vec<Option<usize>> = (0..7usize).map(|i| i.checked_sub(1)).collect();
    let tree = tree_from_parents(&chain);
    let w = generate_subtrees(&tree, &[1; 7], &WindowConfig::new(5, 3)).unwrap();
    let stats = coverage_report(&tree, &w);
    assert_eq!(stats.appearances, vec![1, 1, 2, 2, 2, 1, 1]);
    assert!(stats.uncovered.is_empty());
    assert_eq!(stats.max_token_total, 5);
}
