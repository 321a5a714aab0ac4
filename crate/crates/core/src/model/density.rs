//! Conditional densities `α_t(ω, x)` of the default variable.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::reference::{GridPoints, ReferenceKind, ReferenceMeasure};
use crate::model::tree::{NodeId, ScenarioTree};

/// Evaluator `(node, point) -> α_{depth(node)}(node, point)`.
pub type AlphaFn = Arc<dyn Fn(NodeId, &[f64]) -> f64 + Send + Sync>;

/// Parametric or tabulated density family.
#[derive(Clone)]
pub enum AlphaFamily {
    /// Independent exponentials, `Π λ_i e^{-λ_i u_i}`, constant in `(t, ω)`.
    Exponential { rates: Vec<f64> },
    /// `Π λ e^{-λ u_i}`; on an ordered model, `n!` times that on the chamber.
    ExchangeableExponential { rate: f64 },
    /// `values[node][k]` on a grid reference.
    Table { values: Vec<Vec<f64>> },
    /// Arbitrary evaluator with optional per-coordinate exponential tail rates.
    Custom { eval: AlphaFn, tail_rates: Vec<Option<f64>>, label: String },
}

impl fmt::Debug for AlphaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exponential { rates } => f.debug_struct("Exponential").field("rates", rates).finish(),
            Self::ExchangeableExponential { rate } => {
                f.debug_struct("ExchangeableExponential").field("rate", rate).finish()
            }
            Self::Table { values } => f.debug_struct("Table").field("nodes", &values.len()).finish(),
            Self::Custom { label, .. } => f.debug_struct("Custom").field("label", label).finish(),
        }
    }
}

impl AlphaFamily {
    /// Tabulated family from terminal densities, one row per leaf (in depth
    /// order), propagated backwards so that every `α_·(x)` is an F-martingale.
    pub fn from_terminal(tree: &ScenarioTree, terminal: Vec<Vec<f64>>) -> Result<Self> {
        let leaves = tree.nodes_at(tree.depth());
        if terminal.len() != leaves.len() {
            return Err(Error::InvalidModel(format!(
                "expected {} terminal rows, got {}",
                leaves.len(),
                terminal.len()
            )));
        }
        let width = terminal[0].len();
        if terminal.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidModel("terminal rows have different lengths".into()));
        }
        let first = leaves[0];
        let values = tree.backward_vec(tree.depth(), width, |id, buf| {
            buf.copy_from_slice(&terminal[id - first]);
        });
        Ok(Self::Table { values })
    }

    pub fn custom(
        label: impl Into<String>,
        tail_rates: Vec<Option<f64>>,
        eval: impl Fn(NodeId, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom { eval: Arc::new(eval), tail_rates, label: label.into() }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::ExchangeableExponential { .. } => "exchangeable-exponential",
            Self::Table { .. } => "table",
            Self::Custom { label, .. } => label,
        }
    }
}

/// Default-system model: reference measure, environment tree and density family.
#[derive(Debug, Clone)]
pub struct DensityModel {
    reference: ReferenceMeasure,
    tree: ScenarioTree,
    alpha: AlphaFamily,
    grid: Option<Arc<GridPoints>>,
    validated: bool,
}

impl DensityModel {
    pub fn new(reference: ReferenceMeasure, tree: ScenarioTree, alpha: AlphaFamily) -> Result<Self> {
        let n = reference.n();
        let grid = if reference.is_grid() { Some(Arc::new(reference.grid_points()?)) } else { None };
        match &alpha {
            AlphaFamily::Exponential { rates } => {
                if rates.len() != n || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return Err(Error::InvalidModel(format!("need {n} positive exponential rates")));
                }
                if reference.has_marks() {
                    return Err(Error::InvalidModel("exponential family carries no marks".into()));
                }
            }
            AlphaFamily::ExchangeableExponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::InvalidModel("exchangeable rate must be positive".into()));
                }
                if reference.has_marks() {
                    return Err(Error::InvalidModel("exchangeable family carries no marks".into()));
                }
            }
            AlphaFamily::Table { values } => {
                let g = grid.as_ref().ok_or(Error::UnsupportedReference)?;
                if values.len() != tree.len() {
                    return Err(Error::InvalidModel(format!(
                        "table has {} node rows, tree has {} nodes",
                        values.len(),
                        tree.len()
                    )));
                }
                if let Some(r) = values.iter().find(|r| r.len() != g.len()) {
                    return Err(Error::InvalidModel(format!(
                        "table row has {} entries, grid has {} points",
                        r.len(),
                        g.len()
                    )));
                }
            }
            AlphaFamily::Custom { tail_rates, .. } => {
                if !tail_rates.is_empty() && tail_rates.len() != n {
                    return Err(Error::InvalidModel("tail rates must cover every coordinate".into()));
                }
            }
        }
        Ok(Self { reference, tree, alpha, grid, validated: false })
    }

    /// Model whose density does not depend on the environment.
    pub fn deterministic(reference: ReferenceMeasure, horizon: usize, alpha: AlphaFamily) -> Result<Self> {
        Self::new(reference, ScenarioTree::chain(horizon), alpha)
    }

    pub fn reference(&self) -> &ReferenceMeasure {
        &self.reference
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn alpha_family(&self) -> &AlphaFamily {
        &self.alpha
    }

    /// Enumerated support when the reference is a finite grid.
    pub fn grid(&self) -> Option<&GridPoints> {
        self.grid.as_deref()
    }

    pub fn require_grid(&self) -> Result<&GridPoints> {
        self.grid().ok_or(Error::UnsupportedReference)
    }

    pub fn n(&self) -> usize {
        self.reference.n()
    }

    pub fn ordered(&self) -> bool {
        self.reference.ordered()
    }

    pub fn has_marks(&self) -> bool {
        self.reference.has_marks()
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn horizon(&self) -> usize {
        self.tree.depth()
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    /// Runs validation and marks the model as validated when it passes.
    pub fn into_validated(mut self, tol: f64) -> Result<Self> {
        let report = crate::model::validate::validate_density_model(&self, tol)?;
        if !report.passed {
            return Err(Error::InvalidModel(format!(
                "validation failed: max defect {:e} exceeds {tol:e}",
                report.max_defect()
            )));
        }
        self.validated = true;
        Ok(self)
    }

    /// `α_t(node, x)` with `t = depth(node)`.
    pub fn alpha(&self, node: NodeId, x: &[f64]) -> f64 {
        match &self.alpha {
            AlphaFamily::Exponential { rates } => {
                let mut v = 1.0;
                for (u, r) in x.iter().zip(rates) {
                    if *u < 0.0 {
                        return 0.0;
                    }
                    v *= r * (-r * u).exp();
                }
                v
            }
            AlphaFamily::ExchangeableExponential { rate } => {
                let n = self.n();
                let u = &x[..n];
                if u.iter().any(|v| *v < 0.0) {
                    return 0.0;
                }
                let base: f64 = u.iter().map(|v| rate * (-rate * v).exp()).product();
                if self.ordered() {
                    if u.windows(2).any(|p| p[0] > p[1]) {
                        return 0.0;
                    }
                    base * factorial(n)
                } else {
                    base
                }
            }
            AlphaFamily::Table { values } => {
                let g = self.grid.as_ref().expect("table family lives on a grid");
                g.index_of(x).map_or(0.0, |k| values[node][k])
            }
            AlphaFamily::Custom { eval, .. } => eval(node, x),
        }
    }

    /// `α_t(node, u^(k))` on a grid reference.
    pub fn alpha_k(&self, node: NodeId, k: usize) -> f64 {
        match &self.alpha {
            AlphaFamily::Table { values } => values[node][k],
            _ => {
                let g = self.grid.as_ref().expect("grid index requires a grid reference");
                self.alpha(node, g.point(k))
            }
        }
    }

    /// `β_t(node, x) = α_t(node, x) / α_0(x)`, zero where `α_0` vanishes.
    pub fn beta(&self, node: NodeId, x: &[f64]) -> f64 {
        let a0 = self.alpha(0, x);
        if a0 == 0.0 {
            0.0
        } else {
            self.alpha(node, x) / a0
        }
    }

    pub fn beta_k(&self, node: NodeId, k: usize) -> f64 {
        let a0 = self.alpha_k(0, k);
        if a0 == 0.0 {
            0.0
        } else {
            self.alpha_k(node, k) / a0
        }
    }

    /// Prior mass `η({u^(k)}) = α_0(u^(k)) ν({u^(k)})`.
    pub fn prior_mass(&self, k: usize) -> f64 {
        let g = self.grid.as_ref().expect("prior mass requires a grid");
        self.alpha_k(0, k) * g.weight(k)
    }

    /// Prior probability vector over the grid.
    pub fn prior(&self) -> Result<Vec<f64>> {
        let g = self.require_grid()?;
        Ok((0..g.len()).map(|k| self.prior_mass(k)).collect())
    }

    /// Exponential tail decay rate of coordinate `c`, if the family has one.
    pub fn tail_rate(&self, c: usize) -> Option<f64> {
        match &self.alpha {
            AlphaFamily::Exponential { rates } => rates.get(c).copied(),
            AlphaFamily::ExchangeableExponential { rate } => Some(*rate),
            AlphaFamily::Table { .. } => None,
            AlphaFamily::Custom { tail_rates, .. } => tail_rates.get(c).copied().flatten(),
        }
    }

    pub fn tail_rates(&self) -> Vec<Option<f64>> {
        (0..self.n()).map(|c| self.tail_rate(c)).collect()
    }

    /// Product-grid version of a non-ordered Lebesgue model, keeping the same
    /// density family. `breaks` adds cell boundaries (payoff discontinuities).
    pub fn discretize(&self, breaks: &[f64]) -> Result<Self> {
        if matches!(self.reference.kind(), ReferenceKind::Grid { .. }) {
            return Ok(self.clone());
        }
        let reference = self.reference.discretize(breaks, &self.tail_rates())?;
        let mut m = Self::new(reference, self.tree.clone(), self.alpha.clone())?;
        m.validated = self.validated;
        Ok(m)
    }

    /// Same reference and tree with a different density family.
    pub fn with_alpha(&self, alpha: AlphaFamily) -> Result<Self> {
        Self::new(self.reference.clone(), self.tree.clone(), alpha)
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}
