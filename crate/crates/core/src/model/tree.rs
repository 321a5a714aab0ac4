//! Finite filtered probability space as a non-recombining scenario tree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global node index. Node 0 is the root; ids are ordered by depth.
pub type NodeId = usize;

const PROB_TOL: f64 = 1e-12;

/// Scenario tree with integer time steps `0..=depth`.
///
/// Each node at depth `t` is an atom of `F_t`. Edge probabilities out of every
/// non-terminal node sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    depth: usize,
    parent: Vec<Option<NodeId>>,
    edge_prob: Vec<f64>,
    node_depth: Vec<usize>,
    children: Vec<Vec<NodeId>>,
    by_depth: Vec<Vec<NodeId>>,
    path_prob: Vec<f64>,
}

impl ScenarioTree {
    /// Deterministic environment: one node per time step.
    pub fn chain(depth: usize) -> Self {
        let edges: Vec<(NodeId, f64)> = (0..depth).map(|t| (t, 1.0)).collect();
        Self::from_edges(depth, &edges).expect("chain tree is valid")
    }

    /// Every node branches with the same transition probabilities.
    pub fn uniform(depth: usize, branch_probs: &[f64]) -> Result<Self> {
        if branch_probs.is_empty() {
            return Err(Error::InvalidTree("empty branching".into()));
        }
        let mut edges = Vec::new();
        let mut frontier = vec![0usize];
        let mut next_id = 1usize;
        for _ in 0..depth {
            let mut next = Vec::new();
            for &p in &frontier {
                for &q in branch_probs {
                    edges.push((p, q));
                    next.push(next_id);
                    next_id += 1;
                }
            }
            frontier = next;
        }
        Self::from_edges(depth, &edges)
    }

    /// Builds a tree from `(parent, probability)` pairs for nodes `1, 2, ...`.
    ///
    /// Parents must appear before their children, and every leaf must sit at
    /// `depth`.
    pub fn from_edges(depth: usize, edges: &[(NodeId, f64)]) -> Result<Self> {
        let count = edges.len() + 1;
        let mut parent = vec![None; count];
        let mut edge_prob = vec![1.0; count];
        let mut node_depth = vec![0usize; count];
        let mut children = vec![Vec::new(); count];
        let mut path_prob = vec![1.0; count];
        for (i, &(p, q)) in edges.iter().enumerate() {
            let id = i + 1;
            if p >= id {
                return Err(Error::InvalidTree(format!(
                    "node {id} lists parent {p}, which is not an earlier node"
                )));
            }
            if !(q.is_finite() && q >= 0.0) {
                return Err(Error::InvalidTree(format!("edge into node {id} has probability {q}")));
            }
            parent[id] = Some(p);
            edge_prob[id] = q;
            node_depth[id] = node_depth[p] + 1;
            if node_depth[id] > depth {
                return Err(Error::InvalidTree(format!("node {id} is deeper than {depth}")));
            }
            if node_depth[id] < node_depth[id - 1] {
                return Err(Error::InvalidTree(format!("node {id} breaks depth ordering")));
            }
            children[p].push(id);
            path_prob[id] = path_prob[p] * q;
        }
        let mut by_depth = vec![Vec::new(); depth + 1];
        for id in 0..count {
            by_depth[node_depth[id]].push(id);
        }
        for id in 0..count {
            let d = node_depth[id];
            if d < depth {
                if children[id].is_empty() {
                    return Err(Error::InvalidTree(format!("node {id} at depth {d} has no children")));
                }
                let s: f64 = children[id].iter().map(|&c| edge_prob[c]).sum();
                if (s - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidTree(format!(
                        "edge probabilities out of node {id} sum to {s}"
                    )));
                }
            }
        }
        Ok(Self { depth, parent, edge_prob, node_depth, children, by_depth, path_prob })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn nodes_at(&self, t: usize) -> &[NodeId] {
        &self.by_depth[t]
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.children[node]
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node]
    }

    pub fn node_depth(&self, node: NodeId) -> usize {
        self.node_depth[node]
    }

    /// Transition probability from the parent into `node`.
    pub fn edge_prob(&self, node: NodeId) -> f64 {
        self.edge_prob[node]
    }

    /// Unconditional probability of reaching `node`.
    pub fn path_prob(&self, node: NodeId) -> f64 {
        self.path_prob[node]
    }

    /// Position of `node` among the nodes of its depth.
    pub fn index_in_depth(&self, node: NodeId) -> usize {
        let d = self.node_depth[node];
        node - self.by_depth[d][0]
    }

    /// Ancestor of `node` at depth `t` (the node itself when `t` equals its depth).
    pub fn ancestor_at(&self, mut node: NodeId, t: usize) -> NodeId {
        assert!(t <= self.node_depth[node], "ancestor depth exceeds node depth");
        while self.node_depth[node] > t {
            node = self.parent[node].expect("non-root node has a parent");
        }
        node
    }

    /// Descendants of `node` at depth `s` with their conditional probabilities.
    pub fn descendants_at(&self, node: NodeId, s: usize) -> Vec<(NodeId, f64)> {
        let mut out = vec![(node, 1.0)];
        for _ in self.node_depth[node]..s {
            let mut next = Vec::with_capacity(out.len() * 2);
            for (id, p) in out {
                for &c in &self.children[id] {
                    next.push((c, p * self.edge_prob[c]));
                }
            }
            out = next;
        }
        out
    }

    /// Backward induction: given values on the nodes at depth `s`, returns the
    /// conditional expectations at every node of depth `<= s`, indexed by node id.
    pub fn backward(&self, s: usize, terminal: impl Fn(NodeId) -> f64) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for &id in &self.by_depth[s] {
            v[id] = terminal(id);
        }
        for t in (0..s).rev() {
            for &id in &self.by_depth[t] {
                v[id] = self.children[id].iter().map(|&c| self.edge_prob[c] * v[c]).sum();
            }
        }
        v
    }

    /// Vector-valued backward induction; `terminal` fills a buffer of length `width`.
    pub fn backward_vec(
        &self,
        s: usize,
        width: usize,
        terminal: impl Fn(NodeId, &mut [f64]),
    ) -> Vec<Vec<f64>> {
        let mut v = vec![Vec::new(); self.len()];
        for &id in &self.by_depth[s] {
            let mut buf = vec![0.0; width];
            terminal(id, &mut buf);
            v[id] = buf;
        }
        for t in (0..s).rev() {
            for &id in &self.by_depth[t] {
                let mut acc = vec![0.0; width];
                for &c in &self.children[id] {
                    let p = self.edge_prob[c];
                    for (a, x) in acc.iter_mut().zip(&v[c]) {
                        *a += p * x;
                    }
                }
                v[id] = acc;
            }
        }
        v
    }

    /// Edge list in construction order, suitable for [`ScenarioTree::from_edges`].
    pub fn edges(&self) -> Vec<(NodeId, f64)> {
        (1..self.len()).map(|id| (self.parent[id].unwrap(), self.edge_prob[id])).collect()
    }
}
