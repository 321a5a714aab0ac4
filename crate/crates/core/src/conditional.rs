//! Conditional expectations and conditional laws under the total filtration
//! `H = F ∨ σ(χ)` and the observable filtration `G = F ∨ N`.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::reference::point_key;
use crate::model::{
    observation_partition, AlphaFamily, Axis, DensityModel, NodeId, ObservationScheme, Partition, PayoffSpec, Pins,
    ReferenceKind, ReferenceMeasure, Window,
};
use crate::prediction::{marked_tie, nonordered_regime, ordered_regime, single_regime, ClosedPrediction, Regime};

/// How `E[Y_T(χ) | G_t]` is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Integrate the `H`-conditional expectation against `η_t^G`.
    Direct,
    /// Ratio `η_t((Yβ)_t^F) / η_t(β_t)` under the prediction measure.
    Bayes,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "bayes" => Ok(Self::Bayes),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Value on one conditioning atom or regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CondValue {
    pub value: f64,
    /// Zero denominator; `value` is 0 by convention.
    pub mass_zero: bool,
}

fn ratio(num: f64, den: f64) -> CondValue {
    if den == 0.0 {
        CondValue { value: 0.0, mass_zero: true }
    } else {
        CondValue { value: num / den, mass_zero: false }
    }
}

fn check_times(model: &DensityModel, payoff: &PayoffSpec, t: usize) -> Result<()> {
    let horizon = model.horizon();
    if payoff.maturity() > horizon {
        return Err(Error::TimeOutOfRange { t: payoff.maturity(), horizon });
    }
    if t > payoff.maturity() {
        return Err(Error::TimeOutOfRange { t, horizon: payoff.maturity() });
    }
    Ok(())
}

/// `t ↦ E_{P°}[Ψ(·, x) | F_t]` for every grid point `x` on the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametrizedMartingale {
    maturity: usize,
    values: Vec<Vec<f64>>,
}

impl ParametrizedMartingale {
    /// Backward induction from terminal values `psi(leaf, k)` at depth `maturity`.
    pub fn from_terminal(model: &DensityModel, maturity: usize, psi: impl Fn(NodeId, usize) -> f64) -> Result<Self> {
        let g = model.require_grid()?;
        if maturity > model.horizon() {
            return Err(Error::TimeOutOfRange { t: maturity, horizon: model.horizon() });
        }
        let values = model.tree().backward_vec(maturity, g.len(), |leaf, buf| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = psi(leaf, k);
            }
        });
        Ok(Self { maturity, values })
    }

    pub fn maturity(&self) -> usize {
        self.maturity
    }

    pub fn value(&self, node: NodeId, k: usize) -> f64 {
        self.values[node][k]
    }

    pub fn row(&self, node: NodeId) -> &[f64] {
        &self.values[node]
    }

    /// Largest one-step defect `|E[Ψ_{t+1} | F_t] − Ψ_t|`.
    pub fn tower_defect(&self, model: &DensityModel) -> f64 {
        let tree = model.tree();
        let mut worst = 0.0f64;
        for t in 0..self.maturity {
            for &node in tree.nodes_at(t) {
                for (k, v) in self.values[node].iter().enumerate() {
                    let next: f64 = tree.children(node).iter().map(|&c| tree.edge_prob(c) * self.values[c][k]).sum();
                    worst = worst.max((next - v).abs());
                }
            }
        }
        worst
    }
}

/// `E[Y_T(x) α_T(x) | F_t]` for every node and grid point.
pub fn numerator_martingale(model: &DensityModel, payoff: &PayoffSpec) -> Result<ParametrizedMartingale> {
    let table = payoff.tabulate(model)?;
    let first = model.tree().nodes_at(payoff.maturity())[0];
    ParametrizedMartingale::from_terminal(model, payoff.maturity(), |leaf, k| {
        table[leaf - first][k] * model.alpha_k(leaf, k)
    })
}

/// Snapshot of `E[Y_T(χ) | H_t]` as a function of `(node, x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HConditional {
    pub t: usize,
    pub nodes: Vec<NodeId>,
    pub values: Vec<Vec<f64>>,
    pub mass_zero: Vec<Vec<bool>>,
}

impl HConditional {
    pub fn value(&self, node: NodeId, k: usize) -> f64 {
        let i = self.nodes.iter().position(|&n| n == node).expect("node at the snapshot depth");
        self.values[i][k]
    }
}

/// `(node, x) ↦ E[Y_T(x) α_T(x) | F_t] / α_t(x)` on a grid model.
pub fn condexp_h(model: &DensityModel, payoff: &PayoffSpec, t: usize) -> Result<HConditional> {
    check_times(model, payoff, t)?;
    let num = numerator_martingale(model, payoff)?;
    let g = model.require_grid()?;
    let nodes = model.tree().nodes_at(t).to_vec();
    let mut values = Vec::with_capacity(nodes.len());
    let mut mass_zero = Vec::with_capacity(nodes.len());
    for &node in &nodes {
        let (v, z): (Vec<f64>, Vec<bool>) = (0..g.len())
            .map(|k| {
                let r = ratio(num.value(node, k), model.alpha_k(node, k));
                (r.value, r.mass_zero)
            })
            .unzip();
        values.push(v);
        mass_zero.push(z);
    }
    Ok(HConditional { t, nodes, values, mass_zero })
}

fn numerator_at(model: &DensityModel, payoff: &PayoffSpec, desc: &[(NodeId, f64)], x: &[f64]) -> f64 {
    desc.iter().map(|&(d, p)| p * payoff.value(d, x) * model.alpha(d, x)).sum()
}

/// `E[Y_T(x) α_T(x) | F_t](node) / α_t(node, x)` at an arbitrary point.
pub fn condexp_h_at(model: &DensityModel, payoff: &PayoffSpec, node: NodeId, x: &[f64]) -> Result<CondValue> {
    let t = model.tree().node_depth(node);
    check_times(model, payoff, t)?;
    let desc = model.tree().descendants_at(node, payoff.maturity());
    Ok(ratio(numerator_at(model, payoff, &desc, x), model.alpha(node, x)))
}

/// `∫ α_s(node, ·)` over the coordinates not in `pins`, each restricted to
/// `(t, ∞)` (everything at `t = 0`); `s` is the depth of `node`.
pub fn tail_integral(model: &DensityModel, t: f64, pins: &Pins, node: NodeId) -> Result<f64> {
    if pins.n() != model.n() {
        return Err(Error::Dimension(format!("pins cover {} coordinates, model has {}", pins.n(), model.n())));
    }
    if pins.has_marks() != model.has_marks() {
        return Err(Error::Dimension("pins and model disagree on marks".into()));
    }
    Ok(model.integrate_free(pins, Window::survival(t), &[], |x| model.alpha(node, x)))
}

/// `E[Y_T(χ) | G_t]` on the regime given by `pins` and `window`, at `node`.
pub fn regime_value(
    model: &DensityModel,
    payoff: &PayoffSpec,
    node: NodeId,
    pins: &Pins,
    window: Window,
    method: Method,
) -> Result<CondValue> {
    let t = model.tree().node_depth(node);
    check_times(model, payoff, t)?;
    let desc = model.tree().descendants_at(node, payoff.maturity());
    let breaks = payoff.breaks();
    Ok(match method {
        Method::Direct => {
            let den = model.integrate_free(pins, window, breaks, |x| model.alpha(node, x));
            let num = model.integrate_free(pins, window, breaks, |x| {
                let a = model.alpha(node, x);
                if a == 0.0 {
                    0.0
                } else {
                    numerator_at(model, payoff, &desc, x) / a * a
                }
            });
            ratio(num, den)
        }
        Method::Bayes => {
            let eta = ClosedPrediction::new(model, pins.clone(), window);
            if eta.mass_zero {
                return Ok(CondValue { value: 0.0, mass_zero: true });
            }
            let num = eta.expect_with(breaks, |x| {
                let a0 = model.alpha(0, x);
                if a0 == 0.0 {
                    0.0
                } else {
                    numerator_at(model, payoff, &desc, x) / a0
                }
            });
            let den = eta.expect_with(breaks, |x| model.beta(node, x));
            ratio(num, den)
        }
    })
}

/// Row of a `G_t`-conditional output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GRow {
    pub node: NodeId,
    /// Atom index in the `N_t^E` partition.
    pub atom: usize,
    /// Representative grid point of the atom.
    pub representative: Vec<f64>,
    pub value: f64,
    pub mass_zero: bool,
}

/// `E[Y_T(χ) | G_t]` on every `(node, atom)` of a grid model.
#[derive(Debug, Clone, PartialEq)]
pub struct GConditional {
    pub t: usize,
    pub partition: Partition,
    pub rows: Vec<GRow>,
    index: HashMap<(NodeId, usize), usize>,
}

impl GConditional {
    fn new(t: usize, partition: Partition, rows: Vec<GRow>) -> Self {
        let index = rows.iter().enumerate().map(|(i, r)| ((r.node, r.atom), i)).collect();
        Self { t, partition, rows, index }
    }

    /// Row of the atom containing grid point `k` at `node`.
    pub fn row_for(&self, node: NodeId, k: usize) -> &GRow {
        &self.rows[self.index[&(node, self.partition.atom_of(k))]]
    }
}

struct NodeRows<'a> {
    model: &'a DensityModel,
    node: NodeId,
    num: &'a [f64],
}

impl NodeRows<'_> {
    fn atom_value(&self, members: &[usize], method: Method) -> CondValue {
        let m = self.model;
        let g = m.grid().expect("grid model");
        match method {
            Method::Direct => {
                let s: f64 = members.iter().map(|&k| m.alpha_k(self.node, k) * g.weight(k)).sum();
                if s == 0.0 {
                    return CondValue { value: 0.0, mass_zero: true };
                }
                let v = members
                    .iter()
                    .map(|&k| {
                        let a = m.alpha_k(self.node, k);
                        let h = if a == 0.0 { 0.0 } else { self.num[k] / a };
                        (a * g.weight(k) / s) * h
                    })
                    .sum();
                CondValue { value: v, mass_zero: false }
            }
            Method::Bayes => {
                let eta_a: f64 = members.iter().map(|&k| m.prior_mass(k)).sum();
                if eta_a == 0.0 {
                    return CondValue { value: 0.0, mass_zero: true };
                }
                let mut num = 0.0;
                let mut den = 0.0;
                for &k in members {
                    let a0 = m.alpha_k(0, k);
                    if a0 == 0.0 {
                        continue;
                    }
                    let eta = m.prior_mass(k) / eta_a;
                    num += eta * (self.num[k] / a0);
                    den += eta * m.beta_k(self.node, k);
                }
                ratio(num, den)
            }
        }
    }
}

/// `E[Y_T(χ) | G_t]` on every `(node, N_t-atom)` of a grid model, by atom
/// conditioning.
pub fn condexp_g(
    model: &DensityModel,
    scheme: &ObservationScheme,
    payoff: &PayoffSpec,
    t: usize,
    method: Method,
) -> Result<GConditional> {
    check_times(model, payoff, t)?;
    let g = model.require_grid()?;
    let partition = observation_partition(scheme, model.reference(), t as f64)?;
    let num = numerator_martingale(model, payoff)?;
    let nodes = model.tree().nodes_at(t);
    let rows: Vec<GRow> = nodes
        .par_iter()
        .flat_map_iter(|&node| {
            let ctx = NodeRows { model, node, num: num.row(node) };
            partition
                .atoms()
                .iter()
                .enumerate()
                .map(|(a, members)| {
                    let v = ctx.atom_value(members, method);
                    GRow {
                        node,
                        atom: a,
                        representative: g.point(members[0]).to_vec(),
                        value: v.value,
                        mass_zero: v.mass_zero,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(GConditional::new(t, partition, rows))
}

/// Pins and window of the closed-form regime containing `realized`, when the
/// scheme has one.
pub fn closed_regime(
    model: &DensityModel,
    scheme: &ObservationScheme,
    t: f64,
    realized: &[f64],
) -> Result<Option<(Pins, Window)>> {
    let n = model.n();
    if realized.len() != model.dim() {
        return Err(Error::Dimension(format!("realized point has {} entries, expected {}", realized.len(), model.dim())));
    }
    let marks = model.has_marks();
    Ok(match scheme {
        ObservationScheme::Initial => Some((Pins::from_point(realized, n, (1u32 << n) - 1), Window::ALL)),
        ObservationScheme::ProgressiveSingle if !marks => Some(single_regime(model, t, realized[0], None)?),
        ObservationScheme::Insider { t0 } if !marks => Some(single_regime(model, t, realized[0], Some(*t0))?),
        ObservationScheme::OrderedCounting if model.ordered() && !marks => {
            Some(ordered_regime(model, t, realized, None)?)
        }
        ObservationScheme::NonorderedIndicators if !marks => Some(nonordered_regime(model, t, realized)?),
        ObservationScheme::MarkedCounting
            if marks && (model.ordered() || n == 1) && !marked_tie(t, &realized[..n], &realized[n..]) =>
        {
            Some(ordered_regime(model, t, &realized[..n], Some(&realized[n..]))?)
        }
        _ => None,
    })
}

/// `E[Y_T(χ) | G_t]` at `node` on the atom containing `realized`. Uses the
/// closed-form regime when the scheme has one, otherwise atom conditioning
/// on the grid.
pub fn condexp_g_at(
    model: &DensityModel,
    scheme: &ObservationScheme,
    payoff: &PayoffSpec,
    node: NodeId,
    realized: &[f64],
    method: Method,
) -> Result<CondValue> {
    scheme.check_compatible(model.reference())?;
    let t = model.tree().node_depth(node);
    check_times(model, payoff, t)?;
    if let Some((pins, window)) = closed_regime(model, scheme, t as f64, realized)? {
        return regime_value(model, payoff, node, &pins, window, method);
    }
    let g = model.grid().ok_or_else(|| Error::IncompatibleScheme {
        scheme: scheme.to_string(),
        reason: "no closed form; only available on grid models".into(),
    })?;
    let n = model.n();
    let key = scheme.atom_key(realized, n, t as f64);
    let members: Vec<usize> = (0..g.len()).filter(|&k| scheme.atom_key(g.point(k), n, t as f64) == key).collect();
    if members.is_empty() {
        return Err(Error::InvalidRealization("realized point is not in the grid's atoms".into()));
    }
    let num = numerator_martingale(model, payoff)?;
    Ok(NodeRows { model, node, num: num.row(node) }.atom_value(&members, method))
}

/// Value of one closed-form regime on a grid model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeValue {
    pub node: NodeId,
    pub regime: Regime,
    /// Pinned default times in coordinate order (free coordinates omitted).
    pub pins: Vec<f64>,
    /// Grid point used to identify the regime.
    pub representative: Vec<f64>,
    pub value: f64,
    pub mass_zero: bool,
}

fn regimes_on_grid(
    model: &DensityModel,
    payoff: &PayoffSpec,
    t: usize,
    method: Method,
    regime_of: impl Fn(&[f64]) -> Result<(Pins, Window)> + Sync,
) -> Result<Vec<RegimeValue>> {
    check_times(model, payoff, t)?;
    let g = model.require_grid()?;
    let n = model.n();
    let mut seen = HashSet::new();
    let mut reps = Vec::new();
    for k in 0..g.len() {
        let (pins, window) = regime_of(g.point(k))?;
        let mut pinned = vec![0.0; model.dim()];
        pins.fill(&mut pinned);
        let id: Vec<u64> = std::iter::once(pins.mask() as u64).chain(point_key(&pinned)).collect();
        if seen.insert(id) {
            reps.push((k, pins, window));
        }
    }
    let nodes = model.tree().nodes_at(t);
    nodes
        .par_iter()
        .flat_map_iter(|&node| {
            reps.iter()
                .map(|(k, pins, window)| {
                    let v = regime_value(model, payoff, node, pins, *window, method)?;
                    Ok(RegimeValue {
                        node,
                        regime: Regime::from_mask(pins.mask()),
                        pins: (0..n).filter_map(|c| pins.time(c)).collect(),
                        representative: g.point(*k).to_vec(),
                        value: v.value,
                        mass_zero: v.mass_zero,
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Closed-form `E[Y_T | G_t]` for ordered defaults, one row per `(node, E_t^i, σ_(i))`.
pub fn condexp_g_ordered(model: &DensityModel, payoff: &PayoffSpec, t: usize, method: Method) -> Result<Vec<RegimeValue>> {
    if !model.ordered() || model.has_marks() {
        return Err(Error::IncompatibleScheme {
            scheme: "ordered-counting".into(),
            reason: "requires an unmarked ordered model".into(),
        });
    }
    regimes_on_grid(model, payoff, t, method, |p| ordered_regime(model, t as f64, p, None))
}

/// Closed-form `E[Y_T | G_t]` for non-ordered defaults, one row per `(node, E_t^I, τ_I)`.
pub fn condexp_g_nonordered(
    model: &DensityModel,
    payoff: &PayoffSpec,
    t: usize,
    method: Method,
) -> Result<Vec<RegimeValue>> {
    if model.ordered() || model.has_marks() {
        return Err(Error::IncompatibleScheme {
            scheme: "nonordered-indicators".into(),
            reason: "requires an unmarked non-ordered model".into(),
        });
    }
    regimes_on_grid(model, payoff, t, method, |p| nonordered_regime(model, t as f64, p))
}

/// `η_t^G` on one `(node, atom)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawRow {
    pub node: NodeId,
    pub atom: usize,
    pub probabilities: Vec<f64>,
    pub mass_zero: bool,
}

/// `η_t^G(dx) ∝ β_t(x) η_t(dx)` per `(node, atom)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLawG {
    pub t: usize,
    pub partition: Partition,
    pub laws: Vec<LawRow>,
}

impl ConditionalLawG {
    /// `η_t^G(Y(node, ·))` for every row.
    pub fn integrate(&self, y: impl Fn(NodeId, usize) -> f64) -> Vec<f64> {
        self.laws
            .iter()
            .map(|l| l.probabilities.iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(k, p)| p * y(l.node, k)).sum())
            .collect()
    }

    pub fn row_for(&self, node: NodeId, k: usize) -> &LawRow {
        let a = self.partition.atom_of(k);
        self.laws.iter().find(|l| l.node == node && l.atom == a).expect("row exists")
    }
}

pub fn conditional_law_g(model: &DensityModel, scheme: &ObservationScheme, t: usize) -> Result<ConditionalLawG> {
    if t > model.horizon() {
        return Err(Error::TimeOutOfRange { t, horizon: model.horizon() });
    }
    let g = model.require_grid()?;
    let partition = observation_partition(scheme, model.reference(), t as f64)?;
    let mut laws = Vec::new();
    for &node in model.tree().nodes_at(t) {
        for (a, members) in partition.atoms().iter().enumerate() {
            let mut p = vec![0.0; g.len()];
            // β_t η_t restricted to the atom is proportional to α_t ν there
            let s: f64 = members.iter().map(|&k| model.alpha_k(node, k) * g.weight(k)).sum();
            if s > 0.0 {
                for &k in members {
                    p[k] = model.alpha_k(node, k) * g.weight(k) / s;
                }
            }
            laws.push(LawRow { node, atom: a, probabilities: p, mass_zero: s == 0.0 });
        }
    }
    Ok(ConditionalLawG { t, partition, laws })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            if k % 2 == 0 {
                p.swap(i, k - 1);
            } else {
                p.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut p, &mut out);
    out
}

/// Order-statistics density: `α^σ(u) = Σ_Π α^τ(u_Π)` over the distinct
/// rearrangements of a weakly increasing `u`, zero off the chamber. Marks (at
/// `u[n..2n]`) travel with their times.
pub fn symmetrize_density(alpha: impl Fn(&[f64]) -> f64 + Send + Sync, n: usize) -> impl Fn(&[f64]) -> f64 + Send + Sync {
    assert!((1..=8).contains(&n), "symmetrization supports 1 <= n <= 8");
    let perms = permutations(n);
    move |u: &[f64]| {
        if u[..n].windows(2).any(|w| w[0] > w[1]) {
            return 0.0;
        }
        let marked = u.len() == 2 * n;
        let mut seen = HashSet::new();
        let mut v = vec![0.0; u.len()];
        let mut s = 0.0;
        for p in &perms {
            for (i, &j) in p.iter().enumerate() {
                v[i] = u[j];
                if marked {
                    v[n + i] = u[n + j];
                }
            }
            if seen.insert(point_key(&v)) {
                s += alpha(&v);
            }
        }
        s
    }
}

/// Ordered model of the order statistics of a non-ordered model.
pub fn symmetrize_model(model: &DensityModel) -> Result<DensityModel> {
    if model.ordered() {
        return Err(Error::InvalidModel("model is already ordered".into()));
    }
    let n = model.n();
    if n > 8 {
        return Err(Error::InvalidModel("symmetrization supports n <= 8".into()));
    }
    let mut reference = match model.reference().kind() {
        ReferenceKind::Grid { axes } => {
            if axes.iter().any(|a| a != &axes[0]) {
                return Err(Error::InvalidModel("symmetrization needs a common axis".into()));
            }
            ReferenceMeasure::shared_grid(n, Axis::clone(&axes[0]), true)?
        }
        ReferenceKind::Lebesgue { u_max, order } => ReferenceMeasure::lebesgue(n, *u_max, *order, true)?,
    };
    if let Some(m) = model.reference().mark_axes() {
        if m.iter().any(|a| a != &m[0]) {
            return Err(Error::InvalidModel("symmetrization needs a common mark axis".into()));
        }
        reference = reference.with_marks(m.to_vec())?;
    }
    let source = Arc::new(model.clone());
    let alpha = if model.reference().is_grid() {
        let ordered_grid = reference.grid_points()?;
        let values = (0..model.tree().len())
            .map(|node| {
                let src = Arc::clone(&source);
                let sym = symmetrize_density(move |x| src.alpha(node, x), n);
                ordered_grid.points().map(&sym).collect()
            })
            .collect();
        AlphaFamily::Table { values }
    } else {
        let perms_src = Arc::clone(&source);
        let sym_nodes: Vec<_> = (0..model.tree().len())
            .map(|node| {
                let src = Arc::clone(&perms_src);
                Arc::new(symmetrize_density(move |x| src.alpha(node, x), n))
            })
            .collect();
        AlphaFamily::custom("symmetrized", model.tail_rates(), move |node, x| sym_nodes[node](x))
    };
    DensityModel::new(reference, model.tree().clone(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::build_joint_measure;
    use crate::oracle::{brute_force_condexp, AtomTable};

    #[test]
    fn single_default_survival_price() {
        let m = fixtures::fixture_a();
        let y = PayoffSpec::survival(3, 0, 2.0);
        for method in [Method::Direct, Method::Bayes] {
            let v = condexp_g_at(&m, &ObservationScheme::ProgressiveSingle, &y, 1, &[5.0], method).unwrap();
            assert!((v.value - (-1.0f64).exp()).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn fixture_b_h_conditional() {
        let m = fixtures::fixture_b();
        let y = PayoffSpec::new(1, "x=1", |_, x| f64::from(u8::from(x[0] == 1.0)));
        let h = condexp_h(&m, &y, 1).unwrap();
        assert_eq!(h.value(1, 1), 0.0);
        assert!(h.mass_zero[0][1]);
        assert_eq!(h.value(2, 1), 1.0);
        assert_eq!(h.value(2, 0), 0.0);
    }

    #[test]
    fn fixture_b_conditional_law_is_dirac() {
        let m = fixtures::fixture_b();
        let law = conditional_law_g(&m, &ObservationScheme::ProgressiveSingle, 1).unwrap();
        assert_eq!(law.row_for(1, 0).probabilities, vec![1.0, 0.0]);
        assert_eq!(law.row_for(2, 1).probabilities, vec![0.0, 1.0]);
    }

    #[test]
    fn tail_integral_examples() {
        let a = fixtures::fixture_a();
        for node in 0..=3 {
            let v = tail_integral(&a, 1.0, &Pins::none(1, false), node).unwrap();
            assert!((v - (-1.0f64).exp()).abs() < 1e-14);
        }
        let d = fixtures::fixture_d();
        let pins = Pins::none(2, false).pin(0, 0.5, None).unwrap();
        let v = tail_integral(&d, 1.0, &pins, 0).unwrap();
        assert!((v - (-1.5f64).exp()).abs() < 1e-14);
        assert!(tail_integral(&d, 1.0, &Pins::none(3, false), 0).is_err());
    }

    #[test]
    fn fixture_c_tail_integral_is_exhaustive_sum() {
        let m = fixtures::fixture_c();
        let g = m.grid().unwrap();
        let pins = Pins::none(2, false).pin(0, 0.5, None).unwrap();
        for node in 0..m.tree().len() {
            let direct: f64 = (0..g.len())
                .filter(|&k| g.point(k)[0] == 0.5 && g.point(k)[1] > 1.0)
                .map(|k| m.alpha_k(node, k) * g.free_weight(k, 1))
                .sum();
            assert!((tail_integral(&m, 1.0, &pins, node).unwrap() - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn fixture_c_generic_matches_oracle() {
        let m = fixtures::fixture_c();
        let g = m.grid().unwrap();
        let y = PayoffSpec::new(2, "mix", |node, x| (node as f64) * 0.1 + x[0] * x[1]);
        let joint = build_joint_measure(&m, 2).unwrap();
        for scheme in [ObservationScheme::OrderedCounting, ObservationScheme::NonorderedIndicators] {
            for t in 0..=2 {
                let atoms = AtomTable::g_atoms(&m, &scheme, &joint, t).unwrap();
                let oracle = brute_force_condexp(&joint, &atoms, |node, k| Some(y.value(node, g.point(k)))).unwrap();
                for method in [Method::Direct, Method::Bayes] {
                    let out = condexp_g(&m, &scheme, &y, t, method).unwrap();
                    for r in &out.rows {
                        let key = out.partition.key(r.atom);
                        let o = oracle[atoms.find(r.node, key).unwrap()];
                        assert_eq!(o.mass_zero, r.mass_zero);
                        assert!((o.value - r.value).abs() < 1e-12, "{scheme} t={t} {r:?} {o:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn symmetrize_exchangeable_pair() {
        let f = symmetrize_density(|u: &[f64]| (-u[0] - u[1]).exp(), 2);
        assert!((f(&[0.3, 1.2]) - 2.0 * (-1.5f64).exp()).abs() < 1e-15);
        assert_eq!(f(&[1.2, 0.3]), 0.0);
        assert!((f(&[0.7, 0.7]) - (-1.4f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(4).len(), 24);
        let mut p = permutations(3);
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn tied_marks_fall_back_to_atoms() {
        let spec = fixtures::RandomGridSpec { n: 2, ordered: true, marks: true, axis_len: 3, ..Default::default() };
        let m = fixtures::random_grid_model(41, spec);
        let g = m.grid().unwrap();
        let y = PayoffSpec::new(m.horizon(), "y", |_, x| x[2] - 2.0 * x[3]);
        let scheme = ObservationScheme::MarkedCounting;
        let t = m.horizon();
        let out = condexp_g(&m, &scheme, &y, t, Method::Direct).unwrap();
        for &node in m.tree().nodes_at(t) {
            for k in 0..g.len() {
                let v = condexp_g_at(&m, &scheme, &y, node, g.point(k), Method::Direct).unwrap();
                assert!((v.value - out.row_for(node, k).value).abs() < 1e-12, "{:?}", g.point(k));
            }
        }
    }
}
