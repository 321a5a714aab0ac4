//! Probabilistic consistency checks on a density model.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::density::DensityModel;
use crate::model::reference::{Pins, ReferenceKind, Window};
use crate::model::tree::NodeId;

/// Default tolerance for grid models.
pub const GRID_TOL: f64 = 1e-9;
/// Default tolerance for quadrature models.
pub const QUADRATURE_TOL: f64 = 1e-6;

/// Tolerance matching the kind of reference measure.
pub fn default_tolerance(model: &DensityModel) -> f64 {
    if model.reference().is_grid() {
        GRID_TOL
    } else {
        QUADRATURE_TOL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationRow {
    pub t: usize,
    pub node: NodeId,
    pub integral: f64,
    pub defect: f64,
}

/// Worst one-step martingale defect of `α_·(x)` over the nodes at depth `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub t: usize,
    pub point: Vec<f64>,
    pub node: NodeId,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaRow {
    pub point: Vec<f64>,
    pub expectation: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub normalization: Vec<NormalizationRow>,
    pub martingale: Vec<MartingaleRow>,
    pub beta: Vec<BetaRow>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn max_normalization_defect(&self) -> f64 {
        self.normalization.iter().map(|r| r.defect).fold(0.0, f64::max)
    }

    pub fn max_martingale_defect(&self) -> f64 {
        self.martingale.iter().map(|r| r.defect).fold(0.0, f64::max)
    }

    pub fn max_beta_defect(&self) -> f64 {
        self.beta.iter().map(|r| r.defect).fold(0.0, f64::max)
    }

    pub fn max_defect(&self) -> f64 {
        self.max_normalization_defect()
            .max(self.max_martingale_defect())
            .max(self.max_beta_defect())
    }
}

/// Points at which pointwise conditions are checked: the grid itself, or a
/// fixed product of probe values for Lebesgue references.
fn probe_points(model: &DensityModel) -> Vec<Vec<f64>> {
    if let Some(g) = model.grid() {
        return g.points().map(|p| p.to_vec()).collect();
    }
    let ReferenceKind::Lebesgue { u_max, .. } = *model.reference().kind() else {
        unreachable!()
    };
    let probes: Vec<f64> = [0.0, 0.25, 0.75, 1.5, 3.0, 6.0]
        .into_iter()
        .filter(|v| *v < u_max)
        .chain([u_max])
        .collect();
    let n = model.n();
    let marks = model.reference().mark_axes();
    let mut axes: Vec<Vec<f64>> = vec![probes; n];
    if let Some(m) = marks {
        axes.extend(m.iter().map(|a| a.values.clone()));
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    'outer: loop {
        let p: Vec<f64> = idx.iter().enumerate().map(|(c, &i)| axes[c][i]).collect();
        if !model.ordered() || p[..n].windows(2).all(|w| w[0] <= w[1]) {
            out.push(p);
        }
        if out.len() >= 4096 {
            break;
        }
        for c in (0..axes.len()).rev() {
            idx[c] += 1;
            if idx[c] < axes[c].len() {
                continue 'outer;
            }
            idx[c] = 0;
        }
        break;
    }
    out
}

/// Checks normalization of every `α_t(node, ·)`, the F-martingale property of
/// `α_·(x)` and `E_{P°}[β_T(x)] = 1` wherever `α_0(x) > 0`.
pub fn validate_density_model(model: &DensityModel, tol: f64) -> Result<ValidationReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let tree = model.tree();
    let horizon = model.horizon();
    let points = probe_points(model);
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }

    for t in 0..=horizon {
        for &node in tree.nodes_at(t) {
            for (k, p) in points.iter().enumerate() {
                let v = match model.grid() {
                    Some(_) => model.alpha_k(node, k),
                    None => model.alpha(node, p),
                };
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::NegativeDensity { t, node, point: p.clone(), value: v });
                }
            }
        }
    }

    let eval = |node: NodeId, k: usize, p: &[f64]| match model.grid() {
        Some(_) => model.alpha_k(node, k),
        None => model.alpha(node, p),
    };

    let mut normalization = Vec::new();
    let pins = Pins::none(model.n(), model.has_marks());
    for t in 0..=horizon {
        for &node in tree.nodes_at(t) {
            let integral = model.integrate_free(&pins, Window::ALL, &[], |x| model.alpha(node, x));
            normalization.push(NormalizationRow { t, node, integral, defect: (integral - 1.0).abs() });
        }
    }

    let mut martingale = Vec::new();
    for t in 0..horizon {
        for (k, p) in points.iter().enumerate() {
            let mut worst = (0.0f64, tree.nodes_at(t)[0]);
            for &node in tree.nodes_at(t) {
                let next: f64 = tree
                    .children(node)
                    .iter()
                    .map(|&c| tree.edge_prob(c) * eval(c, k, p))
                    .sum();
                let d = (next - eval(node, k, p)).abs();
                if d > worst.0 {
                    worst = (d, node);
                }
            }
            martingale.push(MartingaleRow { t, point: p.clone(), node: worst.1, defect: worst.0 });
        }
    }

    let mut beta = Vec::new();
    for (k, p) in points.iter().enumerate() {
        let a0 = eval(0, k, p);
        if a0 > 0.0 {
            let expectation: f64 = tree
                .nodes_at(horizon)
                .iter()
                .map(|&leaf| tree.path_prob(leaf) * eval(leaf, k, p) / a0)
                .sum();
            beta.push(BetaRow { point: p.clone(), expectation, defect: (expectation - 1.0).abs() });
        }
    }

    let mut report = ValidationReport { tolerance: tol, normalization, martingale, beta, passed: false };
    report.passed = report.max_defect() <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::density::AlphaFamily;
    use crate::model::reference::{Axis, ReferenceMeasure};
    use crate::model::tree::ScenarioTree;

    #[test]
    fn negative_density_is_a_hard_error() {
        let r = ReferenceMeasure::shared_grid(1, Axis::uniform(vec![0.0, 1.0], 0.5).unwrap(), false).unwrap();
        let alpha = AlphaFamily::Table { values: vec![vec![2.5, -0.5]] };
        let m = DensityModel::new(r, ScenarioTree::chain(0), alpha).unwrap();
        match validate_density_model(&m, 1e-9) {
            Err(Error::NegativeDensity { t: 0, node: 0, point, .. }) => assert_eq!(point, vec![1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_martingale_table_fails() {
        let r = ReferenceMeasure::shared_grid(1, Axis::uniform(vec![0.0, 1.0], 0.5).unwrap(), false).unwrap();
        let tree = ScenarioTree::uniform(1, &[0.5, 0.5]).unwrap();
        let alpha = AlphaFamily::Table { values: vec![vec![1.0, 1.0], vec![2.0, 0.0], vec![2.0, 0.0]] };
        let m = DensityModel::new(r, tree, alpha).unwrap();
        let rep = validate_density_model(&m, 1e-9).unwrap();
        assert!(!rep.passed);
        assert!((rep.max_martingale_defect() - 1.0).abs() < 1e-15);
        assert_eq!(rep.max_normalization_defect(), 0.0);
    }
}
