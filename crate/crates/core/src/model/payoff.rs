//! Claims `Y_T(ω, x)` measurable with respect to `F_T ⊗ E`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::density::DensityModel;
use crate::model::tree::NodeId;

pub type PayoffFn = Arc<dyn Fn(NodeId, &[f64]) -> f64 + Send + Sync>;

/// Claim paid at `maturity`, evaluated at a node of that depth and a point of `E`.
#[derive(Clone)]
pub struct PayoffSpec {
    maturity: usize,
    eval: PayoffFn,
    bound: Option<f64>,
    breaks: Vec<f64>,
    discount: f64,
    label: String,
}

impl fmt::Debug for PayoffSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PayoffSpec")
            .field("label", &self.label)
            .field("maturity", &self.maturity)
            .field("bound", &self.bound)
            .field("discount", &self.discount)
            .finish()
    }
}

impl PayoffSpec {
    pub fn new(
        maturity: usize,
        label: impl Into<String>,
        eval: impl Fn(NodeId, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            maturity,
            eval: Arc::new(eval),
            bound: None,
            breaks: Vec::new(),
            discount: 1.0,
            label: label.into(),
        }
    }

    /// `1{u_c > level}`.
    pub fn survival(maturity: usize, coord: usize, level: f64) -> Self {
        Self::new(maturity, format!("survive-{level}"), move |_, x| f64::from(u8::from(x[coord] > level)))
            .with_bound(1.0)
            .with_breaks(vec![level])
    }

    /// `1{max_i u_i > level}`: not every name has defaulted by `level`.
    pub fn last_default_after(maturity: usize, n: usize, level: f64) -> Self {
        Self::new(maturity, format!("last-after-{level}"), move |_, x| {
            f64::from(u8::from(x[..n].iter().any(|u| *u > level)))
        })
        .with_bound(1.0)
        .with_breaks(vec![level])
    }

    /// `1{min_i u_i > level}`: no default by `level`.
    pub fn first_default_after(maturity: usize, n: usize, level: f64) -> Self {
        Self::new(maturity, format!("first-after-{level}"), move |_, x| {
            f64::from(u8::from(x[..n].iter().all(|u| *u > level)))
        })
        .with_bound(1.0)
        .with_breaks(vec![level])
    }

    /// Number of defaults by `level`.
    pub fn default_count(maturity: usize, n: usize, level: f64) -> Self {
        Self::new(maturity, format!("count-{level}"), move |_, x| {
            x[..n].iter().filter(|u| **u <= level).count() as f64
        })
        .with_bound(n as f64)
        .with_breaks(vec![level])
    }

    /// Tabulated values, row-major over (terminal node in depth order, grid index).
    pub fn table(model: &DensityModel, maturity: usize, values: Vec<f64>) -> Result<Self> {
        let grid = model.require_grid()?;
        if maturity > model.horizon() {
            return Err(Error::InvalidPayoff(format!("maturity {maturity} beyond horizon")));
        }
        let nodes = model.tree().nodes_at(maturity);
        let width = grid.len();
        if values.len() != nodes.len() * width {
            return Err(Error::InvalidPayoff(format!(
                "table has {} values, expected {} nodes x {} points",
                values.len(),
                nodes.len(),
                width
            )));
        }
        let first = nodes[0];
        let grid = grid.clone();
        let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self::new(maturity, "table", move |node, x| match grid.index_of(x) {
            Some(k) => values[(node - first) * width + k],
            None => f64::NAN,
        })
        .with_bound(bound))
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    /// Extra quadrature cell boundaries at payoff discontinuities.
    pub fn with_breaks(mut self, breaks: Vec<f64>) -> Self {
        self.breaks = breaks;
        self
    }

    /// Constant discount factor applied to every value.
    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn maturity(&self) -> usize {
        self.maturity
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound.map(|b| b * self.discount.abs())
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn value(&self, node: NodeId, x: &[f64]) -> f64 {
        self.discount * (self.eval)(node, x)
    }

    /// Values on `(terminal node, grid index)`, checking totality.
    pub fn tabulate(&self, model: &DensityModel) -> Result<Vec<Vec<f64>>> {
        let grid = model.require_grid()?;
        let mut out = Vec::new();
        for &node in model.tree().nodes_at(self.maturity) {
            let mut row = Vec::with_capacity(grid.len());
            for k in 0..grid.len() {
                let v = self.value(node, grid.point(k));
                if !v.is_finite() {
                    return Err(Error::MissingPayoff { node, index: k });
                }
                row.push(v);
            }
            out.push(row);
        }
        Ok(out)
    }
}
