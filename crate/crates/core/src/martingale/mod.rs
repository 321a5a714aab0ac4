//! Verification and construction of martingales in the observable filtration.

mod characterization;
mod construct;
mod measure;

use std::collections::HashMap;

use serde::Serialize;

use crate::conditional::{condexp_g, Method};
use crate::error::{Error, Result};
use crate::model::{observation_partition, AtomKey, DensityModel, NodeId, ObservationScheme, Partition, PayoffSpec};

pub use characterization::{
    check_nonordered_characterization, check_ordered_characterization, CharacterizationReport, CharacterizationRow,
};
pub use construct::{construct_g_martingale, g_martingale_from_terminal, ConstructorInputs};
pub use measure::{
    change_measure_density, check_immersion, check_initial_enlargement_martingale, ImmersionReport, ImmersionRow,
    InitialReport, MeasureChange,
};

/// Default tolerance for exact grid checks.
pub const TOL: f64 = 1e-10;

/// A process `M_t(ω, x)` evaluated at `(t, node at depth t, x)`.
pub trait AdaptedProcess: Sync {
    fn value(&self, t: usize, node: NodeId, x: &[f64]) -> f64;
}

impl<F> AdaptedProcess for F
where
    F: Fn(usize, NodeId, &[f64]) -> f64 + Sync,
{
    fn value(&self, t: usize, node: NodeId, x: &[f64]) -> f64 {
        self(t, node, x)
    }
}

/// Candidate tabulated per `(t, node, N_t-atom)`; unlisted atoms evaluate to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GMartingaleCandidate {
    scheme: ObservationScheme,
    n: usize,
    entries: HashMap<(usize, NodeId, AtomKey), f64>,
    /// Cells where a zero denominator forced the value to 0.
    pub mass_zero_cells: usize,
}

impl GMartingaleCandidate {
    pub fn new(scheme: ObservationScheme, n: usize) -> Self {
        Self { scheme, n, entries: HashMap::new(), mass_zero_cells: 0 }
    }

    pub fn scheme(&self) -> &ObservationScheme {
        &self.scheme
    }

    /// Sets the value on the atom of `x` at `(t, node)`.
    pub fn set(&mut self, t: usize, node: NodeId, x: &[f64], value: f64) {
        let key = self.scheme.atom_key(x, self.n, t as f64);
        self.entries.insert((t, node, key), value);
    }

    /// Adds `delta` on the atom of `x` at `(t, node)`.
    pub fn perturb(&mut self, t: usize, node: NodeId, x: &[f64], delta: f64) {
        let key = self.scheme.atom_key(x, self.n, t as f64);
        *self.entries.entry((t, node, key)).or_insert(0.0) += delta;
    }

    /// Multiplies the value on the atom of `x` at `(t, node)` by `factor`.
    pub fn scale(&mut self, t: usize, node: NodeId, x: &[f64], factor: f64) {
        let key = self.scheme.atom_key(x, self.n, t as f64);
        if let Some(v) = self.entries.get_mut(&(t, node, key)) {
            *v *= factor;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl AdaptedProcess for GMartingaleCandidate {
    fn value(&self, t: usize, node: NodeId, x: &[f64]) -> f64 {
        let key = self.scheme.atom_key(x, self.n, t as f64);
        self.entries.get(&(t, node, key)).copied().unwrap_or(0.0)
    }
}

/// Where a perturbation was applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationSite {
    pub t: usize,
    pub node: NodeId,
    pub point: Vec<f64>,
    pub before: f64,
    pub epsilon: f64,
}

/// Adds `ε = 1e-3·max(|M|, 1)` on one seeded positive-mass atom.
pub fn perturb_candidate(
    candidate: &GMartingaleCandidate,
    model: &DensityModel,
    seed: u64,
) -> Result<(GMartingaleCandidate, PerturbationSite)> {
    use rand::{Rng, SeedableRng};
    let g = model.require_grid()?;
    let tree = model.tree();
    let mut sites = Vec::new();
    for t in 0..=model.horizon() {
        for &node in tree.nodes_at(t) {
            if tree.path_prob(node) == 0.0 {
                continue;
            }
            for k in 0..g.len() {
                if model.alpha_k(node, k) * g.weight(k) > 0.0 {
                    sites.push((t, node, k));
                }
            }
        }
    }
    if sites.is_empty() {
        return Err(Error::InvalidModel("no positive-mass cell to perturb".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (t, node, k) = sites[rng.gen_range(0..sites.len())];
    let point = g.point(k).to_vec();
    let before = candidate.value(t, node, &point);
    let epsilon = 1e-3 * before.abs().max(1.0);
    let mut out = candidate.clone();
    out.perturb(t, node, &point, epsilon);
    Ok((out, PerturbationSite { t, node, point, before, epsilon }))
}

/// Sorted, de-duplicated check times; all grid times when `times` is empty.
pub(crate) fn normalize_times(model: &DensityModel, times: &[usize]) -> Result<Vec<usize>> {
    let horizon = model.horizon();
    let mut out: Vec<usize> = if times.is_empty() { (0..=horizon).collect() } else { times.to_vec() };
    out.sort_unstable();
    out.dedup();
    if let Some(&t) = out.iter().find(|&&t| t > horizon) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    Ok(out)
}

/// Per-time atom data on a grid model.
pub(crate) struct Level {
    pub t: usize,
    pub partition: Partition,
    /// `η(A)` per atom.
    pub eta: Vec<f64>,
}

impl Level {
    pub fn new(model: &DensityModel, scheme: &ObservationScheme, t: usize) -> Result<Self> {
        let partition = observation_partition(scheme, model.reference(), t as f64)?;
        let eta = partition.atoms().iter().map(|a| a.iter().map(|&k| model.prior_mass(k)).sum()).collect();
        Ok(Self { t, partition, eta })
    }

    /// `∫ β_t dη_t` on each atom at `node`: `Σ_A α_t ν / η(A)`.
    pub fn beta_integral(&self, model: &DensityModel, node: NodeId) -> Vec<f64> {
        let g = model.grid().expect("grid model");
        self.partition
            .atoms()
            .iter()
            .zip(&self.eta)
            .map(|(a, &e)| {
                if e == 0.0 {
                    0.0
                } else {
                    a.iter().map(|&k| model.alpha_k(node, k) * g.weight(k)).sum::<f64>() / e
                }
            })
            .collect()
    }

    /// Candidate value per atom at `node`, checking that it is constant on atoms.
    pub fn values(&self, model: &DensityModel, candidate: &dyn AdaptedProcess, node: NodeId) -> Result<Vec<f64>> {
        let g = model.grid().expect("grid model");
        self.partition
            .atoms()
            .iter()
            .map(|a| {
                let first = candidate.value(self.t, node, g.point(a[0]));
                for &k in &a[1..] {
                    let v = candidate.value(self.t, node, g.point(k));
                    if (v - first).abs() > 1e-12 * first.abs().max(1.0) || v.is_nan() != first.is_nan() {
                        return Err(Error::NotAdapted { t: self.t, node, a: first, b: v });
                    }
                }
                Ok(first)
            })
            .collect()
    }
}

/// One `(t, T, node, atom)` line of an M̃ report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtildeRow {
    pub t: usize,
    pub maturity: usize,
    pub node: NodeId,
    pub atom: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
    /// Direct defect `|E[M_T(χ) | G_t] − M_t(χ)|` on the same atom.
    pub direct_defect: f64,
    pub mass_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtildeReport {
    pub tolerance: f64,
    pub rows: Vec<MtildeRow>,
    pub max_defect: f64,
    pub max_direct_defect: f64,
    /// Condition holds within tolerance.
    pub passed: bool,
    /// `M` is a G-martingale within tolerance (checked directly).
    pub direct_passed: bool,
}

fn tabulate_payoff(model: &DensityModel, candidate: &dyn AdaptedProcess, maturity: usize) -> Result<PayoffSpec> {
    let g = model.require_grid()?;
    let mut values = Vec::new();
    for &node in model.tree().nodes_at(maturity) {
        for k in 0..g.len() {
            values.push(candidate.value(maturity, node, g.point(k)));
        }
    }
    PayoffSpec::table(model, maturity, values)
}

/// Checks `∫ E[M̃_T(x) | F_t] η_t(dx) = M̃_t(χ)` with
/// `M̃_t(x) = M_t(x) ∫ β_t dη_t` for every pair `t < T` of `times`, and
/// verifies `E[M_T(χ) | G_t] = M_t(χ)` directly.
pub fn check_mtilde_condition(
    candidate: &dyn AdaptedProcess,
    model: &DensityModel,
    scheme: &ObservationScheme,
    times: &[usize],
    tol: f64,
) -> Result<MtildeReport> {
    model.require_grid()?;
    let tree = model.tree();
    let times = normalize_times(model, times)?;
    let levels: Vec<Level> = times.iter().map(|&t| Level::new(model, scheme, t)).collect::<Result<_>>()?;

    // M̃ on every (node, atom) of every level
    let mut mtilde: HashMap<NodeId, Vec<f64>> = HashMap::new();
    let mut values: HashMap<NodeId, Vec<f64>> = HashMap::new();
    for lv in &levels {
        for &node in tree.nodes_at(lv.t) {
            let m = lv.values(model, candidate, node)?;
            let z = lv.beta_integral(model, node);
            mtilde.insert(node, m.iter().zip(&z).map(|(a, b)| a * b).collect());
            values.insert(node, m);
        }
    }

    let mut rows = Vec::new();
    for (i, lv) in levels.iter().enumerate() {
        for lt in &levels[i + 1..] {
            let direct = condexp_g(model, scheme, &tabulate_payoff(model, candidate, lt.t)?, lv.t, Method::Direct)?;
            for &node in tree.nodes_at(lv.t) {
                let desc = tree.descendants_at(node, lt.t);
                for (a, members) in lv.partition.atoms().iter().enumerate() {
                    let eta_a = lv.eta[a];
                    let rhs = mtilde[&node][a];
                    let drow = direct.row_for(node, members[0]);
                    if eta_a == 0.0 || drow.mass_zero {
                        rows.push(MtildeRow {
                            t: lv.t,
                            maturity: lt.t,
                            node,
                            atom: a,
                            lhs: 0.0,
                            rhs,
                            defect: 0.0,
                            direct_defect: 0.0,
                            mass_zero: true,
                        });
                        continue;
                    }
                    let mut lhs = 0.0;
                    for &k in members {
                        let w = model.prior_mass(k) / eta_a;
                        if w == 0.0 {
                            continue;
                        }
                        let b = lt.partition.atom_of(k);
                        let e: f64 = desc.iter().map(|&(d, p)| p * mtilde[&d][b]).sum();
                        lhs += w * e;
                    }
                    let m_t = values[&node][a];
                    rows.push(MtildeRow {
                        t: lv.t,
                        maturity: lt.t,
                        node,
                        atom: a,
                        lhs,
                        rhs,
                        defect: (lhs - rhs).abs(),
                        direct_defect: (drow.value - m_t).abs(),
                        mass_zero: false,
                    });
                }
            }
        }
    }
    let max_defect = rows.iter().map(|r| r.defect).fold(0.0, f64::max);
    let max_direct_defect = rows.iter().map(|r| r.direct_defect).fold(0.0, f64::max);
    Ok(MtildeReport {
        tolerance: tol,
        rows,
        max_defect,
        max_direct_defect,
        passed: max_defect <= tol,
        direct_passed: max_direct_defect <= tol,
    })
}

/// Largest `|E[M_T(χ) | G_t] − M_t(χ)|` over pairs `t < T` of `times` and
/// positive-mass atoms.
pub fn g_martingale_defect(
    candidate: &dyn AdaptedProcess,
    model: &DensityModel,
    scheme: &ObservationScheme,
    times: &[usize],
) -> Result<f64> {
    let g = model.require_grid()?;
    let times = normalize_times(model, times)?;
    let mut worst = 0.0f64;
    for (i, &t) in times.iter().enumerate() {
        let lv = Level::new(model, scheme, t)?;
        for &big_t in &times[i + 1..] {
            let out = condexp_g(model, scheme, &tabulate_payoff(model, candidate, big_t)?, t, Method::Direct)?;
            for r in out.rows.iter().filter(|r| !r.mass_zero) {
                let k = lv.partition.atoms()[r.atom][0];
                let m = candidate.value(t, r.node, g.point(k));
                worst = worst.max((r.value - m).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn constant_candidate_has_zero_defect() {
        let m = fixtures::fixture_c();
        let c = |_: usize, _: NodeId, _: &[f64]| 2.5;
        let r = check_mtilde_condition(&c, &m, &ObservationScheme::OrderedCounting, &[], TOL).unwrap();
        assert!(r.passed && r.direct_passed, "{} {}", r.max_defect, r.max_direct_defect);
        assert!(r.max_defect < 1e-14);
    }

    #[test]
    fn deterministic_drift_fails_by_elapsed_time() {
        let m = fixtures::fixture_c();
        let c = |t: usize, _: NodeId, _: &[f64]| t as f64;
        let r = check_mtilde_condition(&c, &m, &ObservationScheme::OrderedCounting, &[], TOL).unwrap();
        assert!(!r.passed && !r.direct_passed);
        // defect equals (T - t) times the atom normalizer ∫β_t dη_t
        let lv = Level::new(&m, &ObservationScheme::OrderedCounting, 0).unwrap();
        let z = lv.beta_integral(&m, 0)[0];
        let row = r.rows.iter().find(|r| r.t == 0 && r.maturity == 2).unwrap();
        assert!((row.defect - 2.0 * z).abs() < 1e-12);
        assert!((row.direct_defect - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_adapted_candidate_is_rejected() {
        let m = fixtures::fixture_c();
        let c = |_: usize, _: NodeId, x: &[f64]| x[1];
        assert!(matches!(
            check_mtilde_condition(&c, &m, &ObservationScheme::OrderedCounting, &[], TOL),
            Err(Error::NotAdapted { .. })
        ));
    }
}
