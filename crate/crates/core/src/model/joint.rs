//! Joint law of (environment path, default variable) at a fixed depth.

use crate::error::{Error, Result};
use crate::model::density::DensityModel;
use crate::model::tree::NodeId;

/// Masses `m(node, u^(k)) = P°(node) β_t(node, u^(k)) η({u^(k)})` for nodes at depth `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMeasure {
    t: usize,
    nodes: Vec<NodeId>,
    width: usize,
    masses: Vec<f64>,
}

impl JointMeasure {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Mass at position `i` of [`JointMeasure::nodes`] and grid index `k`.
    pub fn mass_at(&self, i: usize, k: usize) -> f64 {
        self.masses[i * self.width + k]
    }

    pub fn mass(&self, node: NodeId, k: usize) -> f64 {
        let i = self.nodes.iter().position(|&n| n == node).expect("node belongs to this depth");
        self.mass_at(i, k)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.masses[i * self.width..(i + 1) * self.width]
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Marginal on paths, aligned with [`JointMeasure::nodes`].
    pub fn path_marginal(&self) -> Vec<f64> {
        (0..self.nodes.len()).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Marginal on the grid.
    pub fn grid_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for i in 0..self.nodes.len() {
            for (o, m) in out.iter_mut().zip(self.row(i)) {
                *o += m;
            }
        }
        out
    }

    /// Replaces masses by `m · weight(node, k)` without renormalizing.
    pub fn reweighted(&self, weight: impl Fn(NodeId, usize) -> f64) -> Self {
        let mut out = self.clone();
        for (i, &node) in self.nodes.iter().enumerate() {
            for k in 0..self.width {
                out.masses[i * self.width + k] *= weight(node, k);
            }
        }
        out
    }
}

/// Joint law of `(ω, χ)` restricted to `F_t ⊗ E` on a validated grid model.
pub fn build_joint_measure(model: &DensityModel, t: usize) -> Result<JointMeasure> {
    if !model.is_validated() {
        return Err(Error::NotValidated);
    }
    let grid = model.require_grid()?;
    if t > model.horizon() {
        return Err(Error::TimeOutOfRange { t, horizon: model.horizon() });
    }
    let tree = model.tree();
    let nodes = tree.nodes_at(t).to_vec();
    let width = grid.len();
    let mut masses = Vec::with_capacity(nodes.len() * width);
    for &node in &nodes {
        let p = tree.path_prob(node);
        for k in 0..width {
            masses.push(p * model.beta_k(node, k) * model.prior_mass(k));
        }
    }
    Ok(JointMeasure { t, nodes, width, masses })
}
