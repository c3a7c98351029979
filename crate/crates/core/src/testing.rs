//! Helpers for building synthetic trees in tests and benchmarks.

use rand::Rng;

use crate::dom::{DomNode, DomTree, NodeId};

/// Builds a tree from a parent table. Node ids must already be preorder
/// ranks: every parent precedes its children and each subtree is a
/// contiguous id range.
pub fn tree_from_parents(parents: &[Option<NodeId>]) -> DomTree {
    tree_from_parents_with_tags(parents, &vec!["div"; parents.len()])
}

pub fn tree_from_parents_with_tags(parents: &[Option<NodeId>], tags: &[&str]) -> DomTree {
    assert_eq!(parents[0], None, "node 0 must be the root");
    let mut nodes: Vec<DomNode> = parents
        .iter()
        .enumerate()
        .map(|(i, p)| DomNode {
            node_id: i,
            tag: tags[i].to_string(),
            attrs: Vec::new(),
            text: format!("t{i}"),
            parent: *p,
            children: Vec::new(),
            depth: 0,
        })
        .collect();
    for i in 1..nodes.len() {
        let p = parents[i].expect("only node 0 may lack a parent");
        assert!(p < i, "parent {p} of {i} breaks preorder numbering");
        nodes[p].children.push(i);
        nodes[i].depth = nodes[p].depth + 1;
    }
    let mut preorder = Vec::new();
    let mut postorder = Vec::new();
    fn walk(nodes: &[DomNode], v: NodeId, pre: &mut Vec<NodeId>, post: &mut Vec<NodeId>) {
        pre.push(v);
        for &c in &nodes[v].children {
            walk(nodes, c, pre, post);
        }
        post.push(v);
    }
    walk(&nodes, 0, &mut preorder, &mut postorder);
    assert!(
        preorder.iter().enumerate().all(|(i, &v)| i == v),
        "ids are not preorder ranks"
    );
    DomTree {
        nodes,
        root: 0,
        preorder,
        postorder,
    }
}

/// Random tree with up to `max_children` children per node, depth at most
/// `max_depth` and at most `max_nodes` nodes, numbered in preorder.
pub fn random_parents(
    rng: &mut impl Rng,
    max_children: usize,
    max_depth: usize,
    max_nodes: usize,
) -> Vec<Option<NodeId>> {
    fn grow(
        rng: &mut impl Rng,
        parent: Option<NodeId>,
        depth: usize,
        max_children: usize,
        max_depth: usize,
        max_nodes: usize,
        out: &mut Vec<Option<NodeId>>,
    ) {
        let id = out.len();
        out.push(parent);
        if depth == max_depth {
            return;
        }
        let kids = rng.gen_range(0..=max_children);
        for _ in 0..kids {
            if out.len() >= max_nodes {
                return;
            }
            grow(
                rng,
                Some(id),
                depth + 1,
                max_children,
                max_depth,
                max_nodes,
                out,
            );
        }
    }
    let mut out = Vec::new();
    grow(rng, None, 0, max_children, max_depth, max_nodes, &mut out);
    out
}
