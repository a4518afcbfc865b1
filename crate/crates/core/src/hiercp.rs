//! Leaf-to-root conformal traversal over a binary tree of contiguous step
//! ranges (CRSVP).
//!
//! The root spans the whole trajectory, leaves are single steps in order, and
//! each internal node splits its range at the midpoint with the left child
//! taking `⌈k/2⌉` of its `k` steps. A prediction is always one node, hence
//! always contiguous.
//!
//! Node scores are the plain interval aggregate, *without* the `+∞` override
//! the filtrations put on the whole trajectory: interpolating between a node
//! and its child needs a finite root score.

use rand::Rng;
use serde::Serialize;

use crate::conformal::Prediction;
use crate::domain::{Interval, PredictionSet, Trajectory, XScore};
use crate::error::{Error, Result};
use crate::scoring::{raw_aggregate, AggregatorConfig};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub interval: Interval,
    pub parent: Option<NodeId>,
    pub children: Option<(NodeId, NodeId)>,
}

/// Nodes are stored breadth-first, so the root is node 0 and, for `ℓ = 4`,
/// nodes 0..7 are `[1,4] [1,2] [3,4] [1,1] [2,2] [3,3] [4,4]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeqTree {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

pub fn build_tree(len: usize) -> Result<SeqTree> {
    if len == 0 {
        return Err(Error::Precondition(
            "cannot build a tree over zero steps".into(),
        ));
    }
    let mut nodes = vec![Node {
        interval: Interval::full(len),
        parent: None,
        children: None,
    }];
    let mut leaves = vec![0; len];
    let mut next = 0;
    while next < nodes.len() {
        let (lo, hi) = nodes[next]
            .interval
            .bounds()
            .expect("tree nodes are non-empty");
        if lo == hi {
            leaves[lo - 1] = next;
        } else {
            let k = hi - lo + 1;
            let mid = lo + k.div_ceil(2) - 1;
            let left = nodes.len();
            for iv in [Interval::new(lo, mid), Interval::new(mid + 1, hi)] {
                nodes.push(Node {
                    interval: iv,
                    parent: Some(next),
                    children: None,
                });
            }
            nodes[next].children = Some((left, left + 1));
        }
        next += 1;
    }
    Ok(SeqTree { nodes, leaves })
}

impl SeqTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Leaf node of step `j` (1-based).
    pub fn leaf(&self, j: usize) -> NodeId {
        self.leaves[j - 1]
    }

    /// Nodes from `from` up to and including the root.
    pub fn path_to_root(&self, from: NodeId) -> Vec<NodeId> {
        let mut path = vec![from];
        let mut cur = from;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path
    }

    /// Aggregate of every node's interval, indexed by node id.
    pub fn node_scores(&self, agg: &AggregatorConfig, scores: &[f64]) -> Result<Vec<f64>> {
        self.nodes
            .iter()
            .map(|n| raw_aggregate(agg, scores, n.interval))
            .collect()
    }

    /// Step whose leaf scores highest, lowest index on ties.
    pub fn most_likely_leaf(&self, node_scores: &[f64]) -> usize {
        let mut best = 1;
        for j in 2..=self.len() {
            if node_scores[self.leaf(j)] > node_scores[self.leaf(best)] {
                best = j;
            }
        }
        best
    }
}

/// Score for a fixed interpolation draw `u ∈ [0, 1]`.
///
/// If the most likely leaf is the label, its own node score. Otherwise,
/// climbing from that leaf, `v*` is the first node containing the label and
/// `v*⁻¹` the node before it: `g(v*) − u·(g(v*) − g(v*⁻¹))`.
pub fn crsvp_score_at(tree: &SeqTree, node_scores: &[f64], label: usize, u: f64) -> f64 {
    let start = tree.leaf(tree.most_likely_leaf(node_scores));
    let path = tree.path_to_root(start);
    if tree.node(start).interval.contains(label) {
        return node_scores[start];
    }
    let s = path
        .iter()
        .position(|&v| tree.node(v).interval.contains(label))
        .expect("the root contains every step");
    let (hi, lo) = (node_scores[path[s]], node_scores[path[s - 1]]);
    hi - u * (hi - lo)
}

/// Node returned for threshold `q_hat` and draw `u`.
///
/// Climbs from the most likely leaf while node scores stay below `q_hat`. At
/// the first node `v̂` with `g(v̂) ≥ q̂`, returns the node below it when the
/// interpolated score `g(v̂) − u·(g(v̂) − g(v̂⁻¹))` still reaches `q̂`, else
/// `v̂` itself. A leaf already at or above the threshold is returned as is;
/// if no node reaches the threshold the root is returned.
pub fn crsvp_select(tree: &SeqTree, node_scores: &[f64], q_hat: XScore, u: f64) -> NodeId {
    let start = tree.leaf(tree.most_likely_leaf(node_scores));
    let path = tree.path_to_root(start);
    let reaches = |v: f64| XScore::finite(v) >= q_hat;
    if reaches(node_scores[start]) {
        return start;
    }
    for w in path.windows(2) {
        let (below, here) = (w[0], w[1]);
        let g = node_scores[here];
        if reaches(g) {
            let interp = g - u * (g - node_scores[below]);
            return if reaches(interp) { below } else { here };
        }
    }
    tree.root()
}

pub fn crsvp_score<R: Rng + ?Sized>(
    t: &Trajectory,
    agg: &AggregatorConfig,
    rng: &mut R,
) -> Result<XScore> {
    let label = t.require_label()?;
    let scores = t.scores()?;
    let tree = build_tree(scores.len())?;
    let g = tree.node_scores(agg, scores)?;
    let u: f64 = rng.gen();
    Ok(XScore::finite(crsvp_score_at(&tree, &g, label, u)))
}

/// One tree node as a contiguous set. NFE is `ℓ`: every leaf is scored to
/// find the starting point.
pub fn crsvp_predict<R: Rng + ?Sized>(
    t: &Trajectory,
    agg: &AggregatorConfig,
    q_hat: XScore,
    rng: &mut R,
) -> Result<Prediction> {
    let scores = t.scores()?;
    let tree = build_tree(scores.len())?;
    let g = tree.node_scores(agg, scores)?;
    let u: f64 = rng.gen();
    let node = crsvp_select(&tree, &g, q_hat, u);
    Ok(Prediction {
        set: PredictionSet::Contiguous(tree.node(node).interval),
        nfe: scores.len(),
        fallback: false,
    })
}
