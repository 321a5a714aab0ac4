//! Immersion, equivalent changes of measure and initial-enlargement martingales.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{g_martingale_defect, normalize_times, AdaptedProcess, Level};
use crate::error::{Error, Result};
use crate::model::{build_joint_measure, DensityModel, NodeId, ObservationScheme, PayoffSpec, Pins, Window};
use crate::oracle::{brute_force_condexp, AtomTable};

/// Number of random F-martingales tested for the G-martingale property.
pub const F_MARTINGALE_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImmersionRow {
    pub t: usize,
    pub maturity: usize,
    pub node: NodeId,
    pub atom: usize,
    /// `∫ β_t dη_t` on the atom.
    pub lhs: f64,
    /// `∫ β_T(d) dη_t` at the descendant `d` furthest from `lhs`.
    pub rhs: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImmersionReport {
    pub tolerance: f64,
    pub seed: u64,
    pub rows: Vec<ImmersionRow>,
    pub max_defect: f64,
    pub condition_passed: bool,
    /// G-martingale defect of each random F-martingale.
    pub f_martingale_defects: Vec<f64>,
    pub f_martingales_passed: bool,
    pub passed: bool,
}

/// Checks `∫ β_t dη_t = ∫ β_T dη_t` for `t < T` and tests seeded
/// F-martingales for the G-martingale property.
pub fn check_immersion(
    model: &DensityModel,
    scheme: &ObservationScheme,
    times: &[usize],
    seed: u64,
    tol: f64,
) -> Result<ImmersionReport> {
    model.require_grid()?;
    scheme.check_compatible(model.reference())?;
    let times = normalize_times(model, times)?;
    let tree = model.tree();

    let mut rows = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let lv = Level::new(model, scheme, t)?;
        for &big_t in &times[i + 1..] {
            for &node in tree.nodes_at(t) {
                let lhs_all = lv.beta_integral(model, node);
                let desc = tree.descendants_at(node, big_t);
                for (a, members) in lv.partition.atoms().iter().enumerate() {
                    let eta = lv.eta[a];
                    if eta == 0.0 {
                        continue;
                    }
                    let lhs = lhs_all[a];
                    let mut rhs = lhs;
                    let mut defect = 0.0;
                    for &(d, p) in &desc {
                        if p == 0.0 {
                            continue;
                        }
                        let v: f64 = members.iter().map(|&k| model.prior_mass(k) * model.beta_k(d, k)).sum::<f64>() / eta;
                        if (v - lhs).abs() > defect {
                            defect = (v - lhs).abs();
                            rhs = v;
                        }
                    }
                    rows.push(ImmersionRow { t, maturity: big_t, node, atom: a, lhs, rhs, defect });
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = *times.last().expect("non-empty");
    let mut f_martingale_defects = Vec::with_capacity(F_MARTINGALE_SAMPLES);
    for _ in 0..F_MARTINGALE_SAMPLES {
        let leaves: Vec<f64> = tree.nodes_at(last).iter().map(|_| rng.gen::<f64>()).collect();
        let first = tree.nodes_at(last)[0];
        let values = tree.backward(last, |leaf| leaves[leaf - first]);
        let f = move |_: usize, node: NodeId, _: &[f64]| values[node];
        f_martingale_defects.push(g_martingale_defect(&f, model, scheme, &times)?);
    }

    let max_defect = rows.iter().map(|r| r.defect).fold(0.0, f64::max);
    let condition_passed = max_defect <= tol;
    let f_martingales_passed = f_martingale_defects.iter().all(|&d| d <= tol);
    Ok(ImmersionReport {
        tolerance: tol,
        seed,
        rows,
        max_defect,
        condition_passed,
        f_martingale_defects,
        f_martingales_passed,
        passed: condition_passed && f_martingales_passed,
    })
}

/// Conditional density of `χ` given `F_t` under `dQ/dP = M_t(χ)` on `G_t`:
/// `α^Q_t = M_t α_t / ∫ M_t α_t dν`.
pub struct MeasureChange<'a> {
    model: &'a DensityModel,
    candidate: &'a dyn AdaptedProcess,
    t: usize,
    nodes: Vec<NodeId>,
    /// `∫ M_t α_t dν` per node at `t`, i.e. `E[M_t(χ) | F_t]`.
    normalizers: Vec<f64>,
}

impl<'a> MeasureChange<'a> {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    fn slot(&self, node: NodeId) -> usize {
        node - self.nodes[0]
    }

    pub fn normalizer(&self, node: NodeId) -> f64 {
        self.normalizers[self.slot(node)]
    }

    /// `Q` probability of the environment path through `node`.
    pub fn path_prob(&self, node: NodeId) -> f64 {
        self.model.tree().path_prob(node) * self.normalizer(node)
    }

    /// `α^Q_t(node, x)`; 0 where the normalizer vanishes.
    pub fn density(&self, node: NodeId, x: &[f64]) -> f64 {
        let z = self.normalizer(node);
        if z > 0.0 {
            self.candidate.value(self.t, node, x) * self.model.alpha(node, x) / z
        } else {
            0.0
        }
    }

    /// `α^Q_t` tabulated per node at `t` on a grid model.
    pub fn table(&self) -> Result<Vec<Vec<f64>>> {
        let g = self.model.require_grid()?;
        Ok(self.nodes.iter().map(|&node| (0..g.len()).map(|k| self.density(node, g.point(k))).collect()).collect())
    }

    fn integrate(&self, breaks: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
        let pins = Pins::none(self.model.n(), self.model.has_marks());
        self.model.integrate_free(&pins, Window::ALL, breaks, |x| f(x))
    }

    fn check_payoff(&self, payoff: &PayoffSpec) -> Result<()> {
        if payoff.maturity() != self.t {
            return Err(Error::InvalidPayoff(format!(
                "payoff matures at {} but the measure change is at {}",
                payoff.maturity(),
                self.t
            )));
        }
        Ok(())
    }

    /// `E_Q[Y(χ)]` computed from `α^Q_t` and the `Q` path law.
    pub fn price_q(&self, payoff: &PayoffSpec) -> Result<f64> {
        self.check_payoff(payoff)?;
        Ok(self
            .nodes
            .iter()
            .map(|&node| {
                let q = self.path_prob(node);
                if q == 0.0 {
                    return 0.0;
                }
                q * self.integrate(payoff.breaks(), |x| payoff.value(node, x) * self.density(node, x))
            })
            .sum())
    }

    /// `E_P[M_t(χ) Y(χ)]`.
    pub fn price_p_weighted(&self, payoff: &PayoffSpec) -> Result<f64> {
        self.check_payoff(payoff)?;
        let tree = self.model.tree();
        Ok(self
            .nodes
            .iter()
            .map(|&node| {
                tree.path_prob(node)
                    * self.integrate(payoff.breaks(), |x| {
                        payoff.value(node, x) * self.candidate.value(self.t, node, x) * self.model.alpha(node, x)
                    })
            })
            .sum())
    }
}

/// Builds `α^Q_t` from a positive candidate with `E[M_t(χ)] = 1`.
pub fn change_measure_density<'a>(
    candidate: &'a dyn AdaptedProcess,
    model: &'a DensityModel,
    t: usize,
    breaks: &[f64],
    tol: f64,
) -> Result<MeasureChange<'a>> {
    let horizon = model.horizon();
    if t > horizon {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let tree = model.tree();
    let nodes = tree.nodes_at(t).to_vec();
    if let Some(g) = model.grid() {
        for &node in &nodes {
            for k in 0..g.len() {
                let v = candidate.value(t, node, g.point(k));
                if v < 0.0 || v.is_nan() {
                    return Err(Error::NegativeCandidate { t, node, value: v });
                }
            }
        }
    }
    let pins = Pins::none(model.n(), model.has_marks());
    let mut negative = None;
    let normalizers: Vec<f64> = nodes
        .iter()
        .map(|&node| {
            model.integrate_free(&pins, Window::ALL, breaks, |x| {
                let v = candidate.value(t, node, x);
                if v < 0.0 && negative.is_none() {
                    negative = Some((node, v));
                }
                v * model.alpha(node, x)
            })
        })
        .collect();
    if let Some((node, value)) = negative {
        return Err(Error::NegativeCandidate { t, node, value });
    }
    let mean: f64 = nodes.iter().zip(&normalizers).map(|(&n, z)| tree.path_prob(n) * z).sum();
    if (mean - 1.0).abs() > tol {
        return Err(Error::InvalidModel(format!("candidate has E[M_t(χ)] = {mean}, expected 1")));
    }
    Ok(MeasureChange { model, candidate, t, nodes, normalizers })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialReport {
    pub tolerance: f64,
    /// Largest `|E[α_{t+1} M_{t+1}(x) | F_t] − α_t M_t(x)|`.
    pub parametrized_defect: f64,
    /// Largest `|E[M_T(χ) | H_t] − M_t(χ)|` from the brute-force oracle.
    pub h_defect: f64,
    pub parametrized_passed: bool,
    pub h_passed: bool,
}

impl InitialReport {
    pub fn passed(&self) -> bool {
        self.parametrized_passed && self.h_passed
    }

    pub fn consistent(&self) -> bool {
        self.parametrized_passed == self.h_passed
    }
}

/// An H-martingale is a process whose product with `α_t(x)` is an
/// F-martingale for every `x`; both sides are checked.
pub fn check_initial_enlargement_martingale(
    candidate: &dyn AdaptedProcess,
    model: &DensityModel,
    times: &[usize],
    tol: f64,
) -> Result<InitialReport> {
    let g = model.require_grid()?;
    let times = normalize_times(model, times)?;
    let tree = model.tree();
    let (start, end) = (times[0], *times.last().expect("non-empty"));

    let mut parametrized_defect = 0.0f64;
    for t in start..end {
        for &node in tree.nodes_at(t) {
            for k in 0..g.len() {
                if model.prior_mass(k) == 0.0 {
                    continue;
                }
                let x = g.point(k);
                let now = model.alpha_k(node, k) * candidate.value(t, node, x);
                let next: f64 = tree
                    .children(node)
                    .iter()
                    .map(|&c| tree.edge_prob(c) * model.alpha_k(c, k) * candidate.value(t + 1, c, x))
                    .sum();
                parametrized_defect = parametrized_defect.max((next - now).abs());
            }
        }
    }

    let mut h_defect = 0.0f64;
    for (i, &t) in times.iter().enumerate() {
        for &big_t in &times[i + 1..] {
            let joint = build_joint_measure(model, big_t)?;
            let atoms = AtomTable::h_atoms(model, &joint, t);
            let values = brute_force_condexp(&joint, &atoms, |node, k| Some(candidate.value(big_t, node, g.point(k))))?;
            for (atom, v) in atoms.atoms().iter().zip(values) {
                if v.mass_zero {
                    continue;
                }
                let k = atom.key[0] as usize;
                h_defect = h_defect.max((v.value - candidate.value(t, atom.node, g.point(k))).abs());
            }
        }
    }

    Ok(InitialReport {
        tolerance: tol,
        parametrized_defect,
        h_defect,
        parametrized_passed: parametrized_defect <= tol,
        h_passed: h_defect <= tol,
    })
}
