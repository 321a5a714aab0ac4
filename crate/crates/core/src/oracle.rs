//! Ground truth: exhaustive conditioning on finite models and Monte Carlo
//! sampling of (environment path, default variable).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AlphaFamily, AtomKey, DensityModel, JointMeasure, NodeId, ObservationScheme};

/// Name of the generator used by [`sample_system`].
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), one stream per chunk";

/// Draws per parallel chunk.
pub const CHUNK: usize = 4096;

/// One atom of a sub-σ-algebra of `F_T ⊗ E` restricted to the joint support.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// Node at the conditioning depth that contains the atom.
    pub node: NodeId,
    /// Identifier of the atom inside that node.
    pub key: AtomKey,
    /// Members as (position in the joint's node list, grid index).
    pub members: Vec<(usize, usize)>,
    pub mass: f64,
}

/// Partition of the joint support into atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomTable {
    atoms: Vec<Atom>,
    index: HashMap<(NodeId, AtomKey), usize>,
}

impl AtomTable {
    /// Groups `(node, k)` pairs of the joint by `(anchor node, key)`.
    pub fn group_by(joint: &JointMeasure, mut key: impl FnMut(NodeId, usize) -> (NodeId, AtomKey)) -> Self {
        let mut atoms: Vec<Atom> = Vec::new();
        let mut index = HashMap::new();
        for (i, &node) in joint.nodes().iter().enumerate() {
            for k in 0..joint.width() {
                let id = key(node, k);
                let a = *index.entry(id.clone()).or_insert_with(|| {
                    atoms.push(Atom { node: id.0, key: id.1, members: Vec::new(), mass: 0.0 });
                    atoms.len() - 1
                });
                atoms[a].members.push((i, k));
                atoms[a].mass += joint.mass_at(i, k);
            }
        }
        Self { atoms, index }
    }

    /// One atom holding everything.
    pub fn trivial(joint: &JointMeasure) -> Self {
        Self::group_by(joint, |_, _| (0, Vec::new()))
    }

    /// Atoms of `F_t`.
    pub fn f_atoms(model: &DensityModel, joint: &JointMeasure, t: usize) -> Self {
        let tree = model.tree();
        Self::group_by(joint, |node, _| (tree.ancestor_at(node, t), Vec::new()))
    }

    /// Atoms of `H_t = F_t ∨ σ(χ)`.
    pub fn h_atoms(model: &DensityModel, joint: &JointMeasure, t: usize) -> Self {
        let tree = model.tree();
        Self::group_by(joint, |node, k| (tree.ancestor_at(node, t), vec![k as u64]))
    }

    /// Atoms of `G_t = F_t ∨ N_t`.
    pub fn g_atoms(model: &DensityModel, scheme: &ObservationScheme, joint: &JointMeasure, t: usize) -> Result<Self> {
        scheme.check_compatible(model.reference())?;
        let grid = model.require_grid()?;
        let tree = model.tree();
        let n = model.n();
        let keys: Vec<AtomKey> = grid.points().map(|p| scheme.atom_key(p, n, t as f64)).collect();
        Ok(Self::group_by(joint, |node, k| (tree.ancestor_at(node, t), keys[k].clone())))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn find(&self, node: NodeId, key: &AtomKey) -> Option<usize> {
        self.index.get(&(node, key.clone())).copied()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }
}

/// Conditional expectation on one atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomValue {
    pub value: f64,
    pub mass: f64,
    /// The atom carries no mass; `value` is 0 by convention.
    pub mass_zero: bool,
}

/// `Σ m·Y / Σ m` on every atom. `payoff(node, k)` may return `None` only off
/// the support.
pub fn brute_force_condexp(
    joint: &JointMeasure,
    atoms: &AtomTable,
    payoff: impl Fn(NodeId, usize) -> Option<f64>,
) -> Result<Vec<AtomValue>> {
    let nodes = joint.nodes();
    atoms
        .atoms()
        .iter()
        .map(|a| {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(i, k) in &a.members {
                let m = joint.mass_at(i, k);
                if m == 0.0 {
                    continue;
                }
                let y = payoff(nodes[i], k).ok_or(Error::MissingPayoff { node: nodes[i], index: k })?;
                num += m * y;
                den += m;
            }
            Ok(if den > 0.0 {
                AtomValue { value: num / den, mass: den, mass_zero: false }
            } else {
                AtomValue { value: 0.0, mass: 0.0, mass_zero: true }
            })
        })
        .collect()
}

/// One joint draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Draw {
    /// Terminal node of the environment path.
    pub leaf: NodeId,
    pub chi: Vec<f64>,
    /// Grid index of `chi` on grid models.
    pub index: Option<usize>,
    /// Per time `0..=T`, bit mask of coordinates whose default time is revealed.
    pub history: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub seed: u64,
    pub draws: Vec<Draw>,
}

impl SampleSet {
    /// Sample mean and standard error of `f`.
    pub fn estimate(&self, f: impl Fn(&Draw) -> f64) -> (f64, f64) {
        let n = self.draws.len() as f64;
        let vals: Vec<f64> = self.draws.iter().map(f).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }
}

/// I.i.d. draws of `(path, χ)`: the path by tree probabilities, `χ` from the
/// terminal density `α_T(path, ·)`. Deterministic for a given seed regardless
/// of thread count.
pub fn sample_system(model: &DensityModel, scheme: &ObservationScheme, seed: u64, count: usize) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    scheme.check_compatible(model.reference())?;
    let tree = model.tree();
    let horizon = model.horizon();
    let leaves = tree.nodes_at(horizon);
    let first_leaf = leaves[0];
    let leaf_cdf = Cdf::new(leaves.iter().map(|&l| tree.path_prob(l)));

    let grid_cdf: Option<Vec<Cdf>> = match model.grid() {
        Some(g) => Some(
            leaves
                .iter()
                .map(|&l| Cdf::new((0..g.len()).map(|k| model.alpha_k(l, k) * g.weight(k))))
                .collect(),
        ),
        None => {
            if !matches!(
                model.alpha_family(),
                AlphaFamily::Exponential { .. } | AlphaFamily::ExchangeableExponential { .. }
            ) {
                return Err(Error::UnsupportedReference);
            }
            None
        }
    };

    let n = model.n();
    let chunks = count.div_ceil(CHUNK);
    let draws: Vec<Draw> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(count - c * CHUNK);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let leaf = first_leaf + leaf_cdf.pick(rng.gen::<f64>());
                let (chi, index) = match (&grid_cdf, model.grid()) {
                    (Some(cdf), Some(g)) => {
                        let k = cdf[leaf - first_leaf].pick(rng.gen::<f64>());
                        (g.point(k).to_vec(), Some(k))
                    }
                    _ => (draw_parametric(model, &mut rng), None),
                };
                let history = (0..=horizon)
                    .map(|t| {
                        (0..n)
                            .filter(|&i| scheme.revealed(chi[i], t as f64))
                            .fold(0u32, |m, i| m | (1 << i))
                    })
                    .collect();
                out.push(Draw { leaf, chi, index, history });
            }
            out
        })
        .collect();
    Ok(SampleSet { seed, draws })
}

fn draw_parametric(model: &DensityModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = model.n();
    let mut u: Vec<f64> = (0..n)
        .map(|c| {
            let rate = model.tail_rate(c).expect("parametric family has rates");
            -(1.0 - rng.gen::<f64>()).ln() / rate
        })
        .collect();
    if model.ordered() {
        u.sort_by(f64::total_cmp);
    }
    u
}

/// Inverse-transform table for a finite distribution.
struct Cdf {
    acc: Vec<f64>,
    last_positive: usize,
}

impl Cdf {
    fn new(weights: impl Iterator<Item = f64>) -> Self {
        let mut total = 0.0;
        let mut last_positive = 0;
        let mut acc = Vec::new();
        for (i, w) in weights.enumerate() {
            total += w;
            if w > 0.0 {
                last_positive = i;
            }
            acc.push(total);
        }
        acc.iter_mut().for_each(|v| *v /= total);
        Self { acc, last_positive }
    }

    /// Smallest index whose cumulative probability exceeds `u`; zero-weight
    /// cells are never returned.
    fn pick(&self, u: f64) -> usize {
        self.acc.partition_point(|c| *c <= u).min(self.last_positive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::build_joint_measure;

    #[test]
    fn fixture_b_g_atoms() {
        let m = fixtures::fixture_b();
        let joint = build_joint_measure(&m, 1).unwrap();
        let atoms = AtomTable::g_atoms(&m, &ObservationScheme::ProgressiveSingle, &joint, 1).unwrap();
        let g = m.grid().unwrap();
        let vals = brute_force_condexp(&joint, &atoms, |_, k| Some(g.point(k)[0])).unwrap();
        let on = |node: NodeId, u: f64| {
            let key = ObservationScheme::ProgressiveSingle.atom_key(&[u], 1, 1.0);
            vals[atoms.find(node, &key).unwrap()]
        };
        assert_eq!(on(1, 0.0).value, 0.0);
        assert_eq!(on(2, 1.0).value, 1.0);
        assert!(on(1, 1.0).mass_zero);
    }

    #[test]
    fn trivial_partition_gives_mean() {
        let m = fixtures::fixture_c();
        let joint = build_joint_measure(&m, 2).unwrap();
        let atoms = AtomTable::trivial(&joint);
        let v = brute_force_condexp(&joint, &atoms, |node, k| Some((node * 10 + k) as f64)).unwrap();
        let mut mean = 0.0;
        for (i, &node) in joint.nodes().iter().enumerate() {
            for k in 0..joint.width() {
                mean += joint.mass_at(i, k) * (node * 10 + k) as f64;
            }
        }
        assert!((v[0].value - mean).abs() < 1e-12);
    }

    #[test]
    fn missing_payoff_is_reported() {
        let m = fixtures::fixture_b();
        let joint = build_joint_measure(&m, 1).unwrap();
        let atoms = AtomTable::trivial(&joint);
        assert!(matches!(
            brute_force_condexp(&joint, &atoms, |_, _| None),
            Err(Error::MissingPayoff { .. })
        ));
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = fixtures::fixture_b();
        let a = sample_system(&m, &ObservationScheme::ProgressiveSingle, 11, 10_000).unwrap();
        let b = sample_system(&m, &ObservationScheme::ProgressiveSingle, 11, 10_000).unwrap();
        assert_eq!(a, b);
        // χ is fully determined by the path
        assert!(a.draws.iter().all(|d| d.index == Some(d.leaf - 1)));
    }
}
