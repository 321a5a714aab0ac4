//! Reference models used by the test suite, the CLI and the documentation.
//!
//! * A: one exponential default, Lebesgue reference on `[0, 10]` with folded tail.
//! * A-grid: the same law on a half-unit grid with exact cell masses.
//! * B: two environment states that each reveal the default value.
//! * C: two ordered defaults on a two-step binary tree, environment-coupled.
//! * D: two independent exponential defaults (and the ordered exchangeable variant).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{AlphaFamily, Axis, DensityModel, ReferenceMeasure, ScenarioTree};

/// Horizon of the deterministic fixtures.
pub const HORIZON: usize = 3;

/// Builds the named fixture (`fixtureA`, `fixtureA-grid`, `fixtureB`,
/// `fixtureC`, `fixtureD`, `fixtureD-ordered`).
pub fn by_name(name: &str) -> Option<DensityModel> {
    let m = match name.to_ascii_lowercase().as_str() {
        "fixturea" | "a" => fixture_a(),
        "fixturea-grid" | "a-grid" => fixture_a_grid(),
        "fixtureb" | "b" => fixture_b(),
        "fixturec" | "c" => fixture_c(),
        "fixtured" | "d" => fixture_d(),
        "fixtured-ordered" | "d-ordered" => fixture_d_ordered(),
        _ => return None,
    };
    Some(m)
}

pub const NAMES: [&str; 6] = ["fixtureA", "fixtureA-grid", "fixtureB", "fixtureC", "fixtureD", "fixtureD-ordered"];

fn validated(m: Result<DensityModel>, tol: f64) -> DensityModel {
    m.and_then(|m| m.into_validated(tol)).expect("built-in fixture is valid")
}

pub fn fixture_a() -> DensityModel {
    let r = ReferenceMeasure::lebesgue(1, 10.0, 16, false).expect("reference");
    validated(DensityModel::deterministic(r, HORIZON, AlphaFamily::Exponential { rates: vec![1.0] }), 1e-9)
}

/// Grid `u_k = k/2`, `k = 1..=20`, unit-rate exponential cell masses; the mass
/// beyond 10 is folded into the last point.
pub fn fixture_a_grid() -> DensityModel {
    let h = 0.5;
    let count = 20;
    let values: Vec<f64> = (1..=count).map(|k| k as f64 * h).collect();
    let row: Vec<f64> = (1..=count)
        .map(|k| {
            let lo = (-(k as f64 - 1.0) * h).exp();
            let hi = if k == count { 0.0 } else { (-(k as f64) * h).exp() };
            (lo - hi) / h
        })
        .collect();
    let r = ReferenceMeasure::shared_grid(1, Axis::uniform(values, h).expect("axis"), false).expect("reference");
    let tree = ScenarioTree::chain(HORIZON);
    let alpha = AlphaFamily::Table { values: vec![row; tree.len()] };
    validated(DensityModel::new(r, tree, alpha), 1e-12)
}

pub fn fixture_b() -> DensityModel {
    let r = ReferenceMeasure::shared_grid(1, Axis::uniform(vec![0.0, 1.0], 0.5).expect("axis"), false)
        .expect("reference");
    let tree = ScenarioTree::uniform(1, &[0.5, 0.5]).expect("tree");
    let alpha = AlphaFamily::from_terminal(&tree, vec![vec![2.0, 0.0], vec![0.0, 2.0]]).expect("alpha");
    validated(DensityModel::new(r, tree, alpha), 1e-12)
}

/// Raw terminal weights of Fixture C, one row per leaf over the six chamber
/// points `(0.5,0.5), (0.5,1.5), (0.5,2.5), (1.5,1.5), (1.5,2.5), (2.5,2.5)`.
pub const FIXTURE_C_RAW: [[f64; 6]; 4] = [
    [3.0, 1.0, 2.0, 1.0, 4.0, 1.0],
    [1.0, 2.0, 1.0, 3.0, 1.0, 2.0],
    [2.0, 2.0, 3.0, 1.0, 1.0, 3.0],
    [1.0, 3.0, 1.0, 2.0, 2.0, 1.0],
];

pub fn fixture_c() -> DensityModel {
    let r = ReferenceMeasure::shared_grid(2, Axis::uniform(vec![0.5, 1.5, 2.5], 1.0).expect("axis"), true)
        .expect("reference");
    let tree = ScenarioTree::from_edges(2, &[(0, 0.4), (0, 0.6), (1, 0.3), (1, 0.7), (2, 0.5), (2, 0.5)])
        .expect("tree");
    let terminal = FIXTURE_C_RAW
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let alpha = AlphaFamily::from_terminal(&tree, terminal).expect("alpha");
    validated(DensityModel::new(r, tree, alpha), 1e-12)
}

pub fn fixture_d() -> DensityModel {
    let r = ReferenceMeasure::lebesgue(2, 20.0, 16, false).expect("reference");
    validated(DensityModel::deterministic(r, HORIZON, AlphaFamily::Exponential { rates: vec![1.0, 1.0] }), 1e-9)
}

pub fn fixture_d_ordered() -> DensityModel {
    let r = ReferenceMeasure::lebesgue(2, 20.0, 16, true).expect("reference");
    validated(DensityModel::deterministic(r, HORIZON, AlphaFamily::ExchangeableExponential { rate: 1.0 }), 1e-9)
}

/// Shape of a randomly generated grid model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGridSpec {
    pub n: usize,
    pub ordered: bool,
    pub marks: bool,
    pub depth: usize,
    pub branching: usize,
    pub axis_len: usize,
    /// Probability that a terminal density entry is set to zero.
    pub zero_prob: f64,
    /// When false, every leaf shares the same terminal row (`β ≡ 1`).
    pub coupled: bool,
}

impl Default for RandomGridSpec {
    fn default() -> Self {
        Self { n: 2, ordered: false, marks: false, depth: 2, branching: 2, axis_len: 3, zero_prob: 0.1, coupled: true }
    }
}

impl RandomGridSpec {
    /// Draws a shape within the desk-scale limits: `n <= 3`, at most 64 paths,
    /// at most 512 grid points.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let n = rng.gen_range(1..=3);
        let depth = rng.gen_range(1..=3);
        let branching = match depth {
            1 => rng.gen_range(2..=4),
            2 => rng.gen_range(2..=4),
            _ => rng.gen_range(2..=3),
        };
        let max_axis = match n {
            1 => 8,
            2 => 6,
            _ => 4,
        };
        let marks = n <= 2 && rng.gen_bool(0.25);
        Self {
            n,
            ordered: rng.gen_bool(0.5),
            marks,
            depth,
            branching,
            axis_len: rng.gen_range(2..=max_axis),
            zero_prob: if rng.gen_bool(0.5) { 0.15 } else { 0.0 },
            coupled: rng.gen_bool(0.8),
        }
    }
}

/// Random validated grid model. Default times lie on multiples of 1/2 so
/// that some coincide with observation times.
pub fn random_grid_model(seed: u64, spec: RandomGridSpec) -> DensityModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs: Vec<f64> = (0..spec.branching).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= s);
    let tree = ScenarioTree::uniform(spec.depth, &probs).expect("tree");

    let top = 2 * (spec.depth + 1);
    let mut axes = Vec::new();
    for _ in 0..spec.n {
        let mut cand: Vec<f64> = (1..=top).map(|k| k as f64 * 0.5).collect();
        while cand.len() > spec.axis_len {
            let i = rng.gen_range(0..cand.len());
            cand.remove(i);
        }
        let w = cand.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        axes.push(Axis::new(cand, w).expect("axis"));
    }
    if spec.ordered {
        let shared = axes[0].clone();
        axes = vec![shared; spec.n];
    }
    let mut r = ReferenceMeasure::grid(axes, spec.ordered).expect("reference");
    if spec.marks {
        let marks = (0..spec.n)
            .map(|_| Axis::new(vec![-1.0, 0.5, 2.0], (0..3).map(|_| rng.gen_range(0.5..1.5)).collect()).expect("axis"))
            .collect();
        r = r.with_marks(marks).expect("marks");
    }
    let grid = r.grid_points().expect("grid");
    let leaves = tree.nodes_at(spec.depth).len();
    let draw_row = |rng: &mut ChaCha8Rng| {
        let mut row: Vec<f64> = (0..grid.len())
            .map(|_| if rng.gen_bool(spec.zero_prob) { 0.0 } else { rng.gen_range(0.05..1.0) })
            .collect();
        if row.iter().all(|v| *v == 0.0) {
            row[0] = 1.0;
        }
        let z: f64 = row.iter().enumerate().map(|(k, v)| v * grid.weight(k)).sum();
        row.iter_mut().for_each(|v| *v /= z);
        row
    };
    let terminal: Vec<Vec<f64>> = if spec.coupled {
        (0..leaves).map(|_| draw_row(&mut rng)).collect()
    } else {
        let row = draw_row(&mut rng);
        vec![row; leaves]
    };
    let alpha = AlphaFamily::from_terminal(&tree, terminal).expect("alpha");
    validated(DensityModel::new(r, tree, alpha), 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_density_model;

    #[test]
    fn named_fixtures_validate() {
        for name in NAMES {
            let m = by_name(name).unwrap();
            let tol = crate::model::validate::default_tolerance(&m).min(1e-9);
            assert!(validate_density_model(&m, tol).unwrap().passed, "{name}");
        }
    }

    #[test]
    fn random_models_respect_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..40 {
            let spec = RandomGridSpec::sample(&mut rng);
            let m = random_grid_model(seed, spec);
            assert!(m.grid().unwrap().len() <= 512);
            assert!(m.tree().nodes_at(m.horizon()).len() <= 64);
        }
    }
}
