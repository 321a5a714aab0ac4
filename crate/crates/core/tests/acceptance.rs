//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout. The
//! process fails when a criterion fails, except for the entries listed in
//! `KNOWN_FAILURES`, whose failing values are themselves asserted.

use std::process::ExitCode;
use std::time::Instant;

use multidefault::conditional::{
    condexp_g, condexp_g_at, condexp_g_nonordered, condexp_g_ordered, symmetrize_density, symmetrize_model, Method,
};
use multidefault::fixtures::{self, RandomGridSpec};
use multidefault::martingale::{
    change_measure_density, check_immersion, check_mtilde_condition, check_nonordered_characterization,
    check_ordered_characterization, construct_g_martingale, g_martingale_from_terminal, perturb_candidate,
    AdaptedProcess, ConstructorInputs, TOL,
};
use multidefault::model::{
    build_joint_measure, observation_partition, AlphaFamily, Axis, DensityModel, NodeId, ObservationScheme,
    PayoffSpec, ReferenceMeasure, ScenarioTree,
};
use multidefault::oracle::{brute_force_condexp, sample_system, AtomTable};
use multidefault::prediction::{
    marked_tie, predict_generic, predict_marked, predict_nonordered, predict_ordered, predict_single_default,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail as stated, with the reason checked below.
const KNOWN_FAILURES: [usize; 1] = [8];

struct Outcome {
    id: usize,
    passed: bool,
    detail: String,
}

fn outcome(id: usize, passed: bool, detail: String) -> Outcome {
    Outcome { id, passed, detail }
}

const ALL_SCHEMES: [ObservationScheme; 8] = [
    ObservationScheme::Initial,
    ObservationScheme::ProgressiveSingle,
    ObservationScheme::Insider { t0: 1.0 },
    ObservationScheme::Advanced { epsilon: 0.5 },
    ObservationScheme::Delayed { epsilon: 0.5 },
    ObservationScheme::OrderedCounting,
    ObservationScheme::NonorderedIndicators,
    ObservationScheme::MarkedCounting,
];

fn schemes_for(m: &DensityModel) -> Vec<ObservationScheme> {
    ALL_SCHEMES.iter().copied().filter(|s| s.check_compatible(m.reference()).is_ok()).collect()
}

fn grid_fixtures() -> Vec<(String, DensityModel)> {
    let mut out = vec![
        ("fixtureA-grid".to_string(), fixtures::fixture_a_grid()),
        ("fixtureB".to_string(), fixtures::fixture_b()),
        ("fixtureC".to_string(), fixtures::fixture_c()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..12 {
        let spec = RandomGridSpec::sample(&mut rng);
        out.push((format!("random-{seed}"), fixtures::random_grid_model(seed, spec)));
    }
    for (seed, n) in [(40u64, 1usize), (41, 2)] {
        let spec = RandomGridSpec { n, ordered: true, marks: true, axis_len: 3, ..RandomGridSpec::default() };
        out.push((format!("marked-{n}"), fixtures::random_grid_model(seed, spec)));
    }
    out
}

fn mix_payoff(maturity: usize, dim: usize) -> PayoffSpec {
    PayoffSpec::new(maturity, "mix", move |node, x| {
        let s: f64 = x[..dim].iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).sum();
        0.1 * node as f64 + s.sin() + 2.0
    })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut flag_mismatch = 0;
    let mut cells = 0usize;
    for (_, m) in grid_fixtures() {
        let g = m.grid().unwrap();
        let horizon = m.horizon();
        let y = mix_payoff(horizon, m.dim());
        let joint = build_joint_measure(&m, horizon).unwrap();
        for scheme in schemes_for(&m) {
            for t in 0..=horizon {
                let atoms = AtomTable::g_atoms(&m, &scheme, &joint, t).unwrap();
                let oracle = brute_force_condexp(&joint, &atoms, |node, k| Some(y.value(node, g.point(k)))).unwrap();
                for method in [Method::Direct, Method::Bayes] {
                    let out = condexp_g(&m, &scheme, &y, t, method).unwrap();
                    for r in &out.rows {
                        let o = oracle[atoms.find(r.node, out.partition.key(r.atom)).unwrap()];
                        cells += 1;
                        if o.mass_zero != r.mass_zero {
                            flag_mismatch += 1;
                        } else if !o.mass_zero {
                            worst = worst.max((o.value - r.value).abs());
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        1,
        worst <= 1e-10 && flag_mismatch == 0 && secs < 10.0,
        format!("{cells} (node, atom) cells, max |condexp - oracle| = {worst:.3e}, mass-zero mismatches {flag_mismatch}, {secs:.2}s"),
    )
}

/// Closed prediction for `scheme` at the realized point, when one exists.
fn closed_prediction(m: &DensityModel, scheme: &ObservationScheme, t: f64, x: &[f64]) -> Option<Vec<f64>> {
    let n = m.n();
    let p = match scheme {
        ObservationScheme::ProgressiveSingle if !m.has_marks() => predict_single_default(m, t, x[0], None),
        ObservationScheme::Insider { t0 } if !m.has_marks() => predict_single_default(m, t, x[0], Some(*t0)),
        ObservationScheme::OrderedCounting if m.ordered() && !m.has_marks() => predict_ordered(m, t, x),
        ObservationScheme::NonorderedIndicators if !m.ordered() && !m.has_marks() => predict_nonordered(m, t, x),
        ObservationScheme::MarkedCounting if m.ordered() || n == 1 => {
            if marked_tie(t, &x[..n], &x[n..]) {
                return None;
            }
            let obs: Vec<(f64, f64)> = (0..n).map(|c| (x[c], x[n + c])).collect();
            predict_marked(m, t, &obs)
        }
        _ => return None,
    };
    Some(p.unwrap().to_grid().unwrap())
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    let mut flag_mismatch = 0;
    let mut paths = std::collections::BTreeSet::new();
    for (_, m) in grid_fixtures() {
        let g = m.grid().unwrap();
        let prior = m.prior().unwrap();
        let horizon = m.horizon();
        let y = mix_payoff(horizon, m.dim());
        for scheme in schemes_for(&m) {
            for half in 0..=2 * horizon {
                let t = half as f64 * 0.5;
                for k in 0..g.len() {
                    let Some(closed) = closed_prediction(&m, &scheme, t, g.point(k)) else { continue };
                    paths.insert(format!("{scheme}").split(':').next().unwrap().to_string());
                    let generic = predict_generic(&prior, &scheme, m.reference(), t, k).unwrap().to_grid().unwrap();
                    for (a, b) in closed.iter().zip(&generic) {
                        worst = worst.max((a - b).abs());
                    }
                    compared += 1;
                }
            }
            // conditional expectations: closed regimes against atom conditioning
            for t in 0..=horizon {
                for method in [Method::Direct, Method::Bayes] {
                    let generic = condexp_g(&m, &scheme, &y, t, method).unwrap();
                    let regimes = match scheme {
                        ObservationScheme::OrderedCounting if m.ordered() && !m.has_marks() => {
                            Some(condexp_g_ordered(&m, &y, t, method).unwrap())
                        }
                        ObservationScheme::NonorderedIndicators if !m.ordered() && !m.has_marks() => {
                            Some(condexp_g_nonordered(&m, &y, t, method).unwrap())
                        }
                        _ => None,
                    };
                    if let Some(rows) = regimes {
                        for r in rows {
                            let k = g.index_of(&r.representative).unwrap();
                            let gr = generic.row_for(r.node, k);
                            compared += 1;
                            if gr.mass_zero != r.mass_zero {
                                flag_mismatch += 1;
                            } else {
                                worst = worst.max((gr.value - r.value).abs());
                            }
                        }
                    } else if g.len() <= 64
                        && matches!(
                            scheme,
                            ObservationScheme::ProgressiveSingle
                                | ObservationScheme::Insider { .. }
                                | ObservationScheme::MarkedCounting
                                | ObservationScheme::Initial
                        )
                    {
                        for &node in m.tree().nodes_at(t) {
                            for k in 0..g.len() {
                                let v = condexp_g_at(&m, &scheme, &y, node, g.point(k), method).unwrap();
                                let gr = generic.row_for(node, k);
                                compared += 1;
                                if gr.mass_zero != v.mass_zero {
                                    flag_mismatch += 1;
                                } else {
                                    worst = worst.max((gr.value - v.value).abs());
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let paths: Vec<_> = paths.into_iter().collect();
    outcome(
        2,
        worst <= 1e-10 && flag_mismatch == 0 && paths.len() == 5,
        format!(
            "paths [{}], {compared} comparisons, max |specialized - generic| = {worst:.3e}, mass-zero mismatches {flag_mismatch}",
            paths.join(", ")
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut norm_defect: f64 = 0.0;
    let mut mart_defect: f64 = 0.0;
    let mut checks = 0usize;
    for (_, m) in grid_fixtures() {
        let g = m.grid().unwrap();
        let prior = m.prior().unwrap();
        let hs: Vec<Vec<f64>> = (0..20).map(|_| (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for scheme in schemes_for(&m) {
            let times: Vec<f64> = (0..=2 * m.horizon()).map(|h| h as f64 * 0.5).collect();
            for w in times.windows(2) {
                let (t, s) = (w[0], w[1]);
                let coarse = observation_partition(&scheme, m.reference(), t).unwrap();
                let fine = observation_partition(&scheme, m.reference(), s).unwrap();
                if !fine.refines(&coarse) {
                    continue;
                }
                for atom in coarse.atoms() {
                    let eta_a: f64 = atom.iter().map(|&k| prior[k]).sum();
                    if eta_a == 0.0 {
                        continue;
                    }
                    let now = predict_generic(&prior, &scheme, m.reference(), t, atom[0]).unwrap();
                    let p_now = now.to_grid().unwrap();
                    norm_defect = norm_defect.max((p_now.iter().sum::<f64>() - 1.0).abs());
                    let mut children: Vec<usize> = atom.iter().map(|&k| fine.atom_of(k)).collect();
                    children.sort_unstable();
                    children.dedup();
                    for h in &hs {
                        let lhs: f64 = p_now.iter().zip(h).map(|(p, v)| p * v).sum();
                        let mut rhs = 0.0;
                        for &b in &children {
                            let members = &fine.atoms()[b];
                            let eta_b: f64 = members.iter().map(|&k| prior[k]).sum();
                            if eta_b == 0.0 {
                                continue;
                            }
                            let next = predict_generic(&prior, &scheme, m.reference(), s, members[0]).unwrap();
                            let p_next = next.to_grid().unwrap();
                            rhs += eta_b / eta_a * p_next.iter().zip(h).map(|(p, v)| p * v).sum::<f64>();
                        }
                        mart_defect = mart_defect.max((lhs - rhs).abs());
                        checks += 1;
                    }
                }
            }
        }
    }
    // closed-form predictions on the quadrature fixtures
    for (m, scheme) in [
        (fixtures::fixture_a(), ObservationScheme::ProgressiveSingle),
        (fixtures::fixture_d(), ObservationScheme::NonorderedIndicators),
        (fixtures::fixture_d_ordered(), ObservationScheme::OrderedCounting),
    ] {
        let points: [&[f64]; 3] = [&[0.4, 2.7], &[1.2, 4.0], &[3.5, 5.0]];
        for t in [0.0, 0.5, 1.0, 2.5] {
            for p in points {
                let x = &p[..m.n()];
                let closed = match scheme {
                    ObservationScheme::ProgressiveSingle => predict_single_default(&m, t, x[0], None),
                    ObservationScheme::NonorderedIndicators => predict_nonordered(&m, t, x),
                    _ => predict_ordered(&m, t, x),
                }
                .unwrap();
                norm_defect = norm_defect.max((closed.total_mass() - 1.0).abs());
            }
        }
    }
    outcome(
        3,
        norm_defect <= 1e-10 && mart_defect <= 1e-10,
        format!("max |η_t(1) - 1| = {norm_defect:.3e}, N-martingale defect {mart_defect:.3e} over {checks} (atom, h) checks with 20 test functions"),
    )
}

fn criterion_4() -> Outcome {
    let a = fixtures::fixture_a();
    let ag = fixtures::fixture_a_grid();
    let single = ObservationScheme::ProgressiveSingle;
    let mut quad: f64 = 0.0;
    let mut grid_rel: f64 = 0.0;
    for t in 0..=2usize {
        for s in [2.0, 2.5, 3.0, 4.5] {
            if (t as f64) > s {
                continue;
            }
            let y = PayoffSpec::survival(3, 0, s);
            let exact = (-(s - t as f64)).exp();
            for method in [Method::Direct, Method::Bayes] {
                let v = condexp_g_at(&a, &single, &y, t, &[t as f64 + 0.25], method).unwrap();
                quad = quad.max((v.value - exact).abs());
                let out = condexp_g(&ag, &single, &y, t, method).unwrap();
                let k = ag.grid().unwrap().index_of(&[t as f64 + 0.5]).unwrap();
                grid_rel = grid_rel.max((out.row_for(t, k).value - exact).abs() / exact);
            }
        }
    }
    // insider with t >= t0 against the plain scheme
    let t0 = 1.0;
    let insider = ObservationScheme::Insider { t0 };
    let mut insider_gap: f64 = 0.0;
    for m in [fixtures::fixture_a_grid(), fixtures::fixture_b()] {
        let g = m.grid().unwrap();
        let y = mix_payoff(m.horizon(), 1);
        for t in 1..=m.horizon() {
            for method in [Method::Direct, Method::Bayes] {
                let plain = condexp_g(&m, &single, &y, t, method).unwrap();
                let ins = condexp_g(&m, &insider, &y, t, method).unwrap();
                for &node in m.tree().nodes_at(t) {
                    for k in 0..g.len() {
                        let (p, q) = (plain.row_for(node, k), ins.row_for(node, k));
                        insider_gap = insider_gap.max((p.value - q.value).abs());
                    }
                }
            }
        }
    }
    let y = PayoffSpec::survival(3, 0, 2.5);
    for t in 1..=3usize {
        for tau in [0.3, 0.9, 1.7, 2.6, 6.0] {
            let p = condexp_g_at(&a, &single, &y, t, &[tau], Method::Direct).unwrap();
            let q = condexp_g_at(&a, &insider, &y, t, &[tau], Method::Direct).unwrap();
            insider_gap = insider_gap.max((p.value - q.value).abs());
        }
    }
    outcome(
        4,
        quad <= 1e-9 && grid_rel <= 1e-14 && insider_gap <= 1e-12,
        format!("quadrature error {quad:.3e}, grid relative error {grid_rel:.3e}, insider vs plain gap {insider_gap:.3e}"),
    )
}

/// Non-ordered exchangeable grid model on a shared axis.
fn exchangeable_grid(seed: u64) -> DensityModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Axis::new(vec![0.5, 1.0, 1.5, 2.5, 3.5], vec![1.0, 0.5, 1.0, 1.0, 2.0]).unwrap();
    let r = ReferenceMeasure::shared_grid(2, axis.clone(), false).unwrap();
    let tree = ScenarioTree::uniform(2, &[0.3, 0.7]).unwrap();
    let grid = r.grid_points().unwrap();
    let len = axis.len();
    let terminal: Vec<Vec<f64>> = (0..tree.nodes_at(2).len())
        .map(|_| {
            let mut sym = vec![vec![0.0; len]; len];
            for i in 0..len {
                for j in i..len {
                    let v = rng.gen_range(0.1..1.0);
                    sym[i][j] = v;
                    sym[j][i] = v;
                }
            }
            let row: Vec<f64> = (0..grid.len())
                .map(|k| {
                    let p = grid.point(k);
                    let i = axis.values.iter().position(|v| *v == p[0]).unwrap();
                    let j = axis.values.iter().position(|v| *v == p[1]).unwrap();
                    sym[i][j]
                })
                .collect();
            let z: f64 = row.iter().enumerate().map(|(k, v)| v * grid.weight(k)).sum();
            row.iter().map(|v| v / z).collect()
        })
        .collect();
    let alpha = AlphaFamily::from_terminal(&tree, terminal).unwrap();
    DensityModel::new(r, tree, alpha).unwrap().into_validated(1e-12).unwrap()
}

fn criterion_5() -> Outcome {
    let f = symmetrize_density(|u: &[f64]| (-u[0] - u[1]).exp(), 2);
    let mut sym_gap: f64 = 0.0;
    let mut off_chamber: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a: f64 = rng.gen_range(0.0..8.0);
        let b: f64 = rng.gen_range(0.0..8.0);
        let (lo, hi) = (a.min(b), a.max(b));
        if lo == hi {
            continue;
        }
        sym_gap = sym_gap.max((f(&[lo, hi]) - 2.0 * (-lo - hi).exp()).abs());
        off_chamber = off_chamber.max(f(&[hi, lo]).abs());
    }

    let payoffs = |h: usize| {
        vec![
            PayoffSpec::first_default_after(h, 2, 2.0),
            PayoffSpec::last_default_after(h, 2, 1.5),
            PayoffSpec::default_count(h, 2, 2.5),
        ]
    };
    let mut gap: f64 = 0.0;
    // quadrature: independent pair against its exchangeable ordered version
    let d = fixtures::fixture_d();
    let dord = fixtures::fixture_d_ordered();
    for y in payoffs(3) {
        for t in 0..=3usize {
            for tau in [[0.4, 2.9], [2.9, 0.4], [1.5, 0.7], [5.0, 4.0], [0.2, 0.6]] {
                let mut sigma = tau;
                sigma.sort_by(f64::total_cmp);
                for method in [Method::Direct, Method::Bayes] {
                    let a = condexp_g_at(&d, &ObservationScheme::NonorderedIndicators, &y, t, &tau, method).unwrap();
                    let b = condexp_g_at(&dord, &ObservationScheme::OrderedCounting, &y, t, &sigma, method).unwrap();
                    gap = gap.max((a.value - b.value).abs());
                }
            }
        }
    }
    // grid: exchangeable non-ordered model against its symmetrized ordered model
    for seed in 0..4 {
        let m = exchangeable_grid(seed);
        let ord = symmetrize_model(&m).unwrap().into_validated(1e-12).unwrap();
        let (g, og) = (m.grid().unwrap(), ord.grid().unwrap());
        for y in payoffs(m.horizon()) {
            for t in 0..=m.horizon() {
                for method in [Method::Direct, Method::Bayes] {
                    let a = condexp_g(&m, &ObservationScheme::NonorderedIndicators, &y, t, method).unwrap();
                    let b = condexp_g(&ord, &ObservationScheme::OrderedCounting, &y, t, method).unwrap();
                    for &node in m.tree().nodes_at(t) {
                        for k in 0..g.len() {
                            let mut p = g.point(k).to_vec();
                            p.sort_by(f64::total_cmp);
                            let ko = og.index_of(&p).unwrap();
                            let (ra, rb) = (a.row_for(node, k), b.row_for(node, ko));
                            if !ra.mass_zero && !rb.mass_zero {
                                gap = gap.max((ra.value - rb.value).abs());
                            }
                        }
                    }
                }
            }
        }
    }
    outcome(
        5,
        sym_gap <= 1e-12 && off_chamber == 0.0 && gap <= 1e-9,
        format!("symmetrized density error {sym_gap:.3e} on the open chamber, ordered vs non-ordered gap {gap:.3e}"),
    )
}

fn characterize(m: &DensityModel, cand: &dyn AdaptedProcess) -> (bool, bool) {
    let r = if m.ordered() {
        check_ordered_characterization(cand, m, &[], TOL).unwrap()
    } else {
        check_nonordered_characterization(cand, m, &[], TOL).unwrap()
    };
    (r.a_passed, r.b_passed)
}

/// Every name has grid values beyond the horizon, so no default regime runs
/// out of support before the horizon (seeded inputs need this).
fn regimes_persist(m: &DensityModel) -> bool {
    let g = m.grid().unwrap();
    let h = m.horizon() as f64;
    (0..m.n()).all(|c| g.points().any(|p| p[c] > h))
}

fn criterion_6() -> Outcome {
    let mut models = vec![fixtures::fixture_c()];
    let mut seed = 100u64;
    while models.len() < 50 {
        let spec = RandomGridSpec { zero_prob: 0.0, ordered: seed % 2 == 0, ..RandomGridSpec::default() };
        let m = fixtures::random_grid_model(seed, spec);
        if regimes_persist(&m) {
            models.push(m);
        }
        seed += 1;
    }
    let mut good = 0;
    let mut bad = 0;
    let mut co_fail = 0;
    for (i, m) in models.iter().enumerate() {
        let scheme = if m.ordered() { ObservationScheme::OrderedCounting } else { ObservationScheme::NonorderedIndicators };
        let seed = i as u64;
        let cand = construct_g_martingale(m, &ConstructorInputs::seeded(m, seed).unwrap()).unwrap();
        let rep = check_mtilde_condition(&cand, m, &scheme, &[], TOL).unwrap();
        let (a, b) = characterize(m, &cand);
        if rep.passed && rep.direct_passed && a && b {
            good += 1;
        }
        let (pert, _) = perturb_candidate(&cand, m, seed + 1000).unwrap();
        let rep = check_mtilde_condition(&pert, m, &scheme, &[], TOL).unwrap();
        let (a, b) = characterize(m, &pert);
        if !rep.passed && !rep.direct_passed {
            bad += 1;
        }
        if a == b && !a {
            co_fail += 1;
        }
    }
    outcome(
        6,
        good == 50 && bad == 50 && co_fail == 50,
        format!("constructed passing {good}/50, perturbed failing both checks {bad}/50, (A) and (B) failing together {co_fail}/50"),
    )
}

fn criterion_7() -> Outcome {
    let mut independent = vec![(fixtures::fixture_a_grid(), ObservationScheme::ProgressiveSingle)];
    for seed in 0..4u64 {
        let spec = RandomGridSpec { coupled: false, ordered: seed % 2 == 1, ..RandomGridSpec::default() };
        let m = fixtures::random_grid_model(300 + seed, spec);
        let s = if m.ordered() { ObservationScheme::OrderedCounting } else { ObservationScheme::NonorderedIndicators };
        independent.push((m, s));
    }
    let mut worst: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    let mut all = true;
    for (m, s) in &independent {
        let r = check_immersion(m, s, &[], 17, TOL).unwrap();
        worst = worst.max(r.max_defect);
        worst_f = r.f_martingale_defects.iter().fold(worst_f, |a, &d| a.max(d));
        all &= r.passed && r.f_martingale_defects.len() == 3;
    }
    let c = check_immersion(&fixtures::fixture_c(), &ObservationScheme::OrderedCounting, &[], 17, TOL).unwrap();
    outcome(
        7,
        all && worst <= 1e-10 && worst_f <= 1e-10 && !c.condition_passed && c.max_defect > 1e-3,
        format!(
            "β ≡ 1 models: defect {worst:.3e}, F-martingale defect {worst_f:.3e}; fixture C defect {:.3e}",
            c.max_defect
        ),
    )
}

/// Fixture B values `(P̄(β_1 = 0), P(β_1(χ) = 0), E_P[1/β_1(χ)])`.
fn fixture_b_boundary() -> (f64, f64, f64) {
    let m = fixtures::fixture_b();
    let g = m.grid().unwrap();
    let tree = m.tree();
    let prior = m.prior().unwrap();
    let joint = build_joint_measure(&m, 1).unwrap();
    let mut pbar = 0.0;
    let mut p = 0.0;
    let mut inv = 0.0;
    for (i, &node) in joint.nodes().iter().enumerate() {
        for k in 0..g.len() {
            let beta = m.beta_k(node, k);
            if beta == 0.0 {
                pbar += tree.path_prob(node) * prior[k];
                p += joint.mass_at(i, k);
            }
            let mass = joint.mass_at(i, k);
            if mass > 0.0 {
                inv += mass / beta;
            }
        }
    }
    (pbar, p, inv)
}

fn criterion_8() -> Outcome {
    let (pbar, p, inv) = fixture_b_boundary();
    outcome(
        8,
        pbar == 0.5 && p == 0.0 && inv == 1.0,
        format!("P̄(β_1=0) = {pbar}, P(β_1(χ)=0) = {p}, E_P[1/β_1(χ)] = {inv} (stated target 1)"),
    )
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut models = vec![
        (fixtures::fixture_a_grid(), ObservationScheme::ProgressiveSingle),
        (fixtures::fixture_b(), ObservationScheme::ProgressiveSingle),
        (fixtures::fixture_c(), ObservationScheme::OrderedCounting),
    ];
    for seed in 0..3u64 {
        let m = fixtures::random_grid_model(500 + seed, RandomGridSpec::default());
        models.push((m, ObservationScheme::NonorderedIndicators));
    }
    for (m, scheme) in &models {
        let g = m.grid().unwrap();
        let h = m.horizon();
        let zeta = |d: NodeId, k: usize| 0.5 + ((d * 7 + k * 3) % 5) as f64 * 0.25;
        let joint = build_joint_measure(m, h).unwrap();
        let mean: f64 = joint
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &d)| (0..g.len()).map(|k| joint.mass_at(i, k) * zeta(d, k)).sum::<f64>())
            .sum();
        let cand = g_martingale_from_terminal(m, scheme, h, |d, k| zeta(d, k) / mean).unwrap();
        for t in 0..=h {
            let q = change_measure_density(&cand, m, t, &[], 1e-9).unwrap();
            for y in [mix_payoff(t, m.dim()), PayoffSpec::survival(t, 0, 1.0)] {
                let a = q.price_q(&y).unwrap();
                let b = q.price_p_weighted(&y).unwrap();
                worst = worst.max((a - b).abs());
                count += 1;
            }
        }
    }
    outcome(9, worst <= 1e-10, format!("{count} prices, max |Q price - M-weighted P price| = {worst:.3e}"))
}

fn criterion_10() -> Outcome {
    let count = 100_000;
    let exact_grid = |m: &DensityModel, y: &PayoffSpec| {
        let g = m.grid().unwrap();
        let joint = build_joint_measure(m, y.maturity()).unwrap();
        joint
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &d)| (0..g.len()).map(|k| joint.mass_at(i, k) * y.value(d, g.point(k))).sum::<f64>())
            .sum::<f64>()
    };
    let a = fixtures::fixture_a();
    let ag = fixtures::fixture_a_grid();
    let b = fixtures::fixture_b();
    let c = fixtures::fixture_c();
    let d = fixtures::fixture_d();
    let y_b = PayoffSpec::new(1, "value", |_, x| x[0]);
    let y_c = PayoffSpec::first_default_after(2, 2, 1.0);
    let cases: Vec<(&str, &DensityModel, ObservationScheme, PayoffSpec, f64)> = vec![
        ("A survive-2", &a, ObservationScheme::ProgressiveSingle, PayoffSpec::survival(3, 0, 2.0), (-2.0f64).exp()),
        ("A-grid survive-1.5", &ag, ObservationScheme::ProgressiveSingle, PayoffSpec::survival(3, 0, 1.5), (-1.5f64).exp()),
        ("B value", &b, ObservationScheme::ProgressiveSingle, y_b.clone(), exact_grid(&b, &y_b)),
        ("C first-1", &c, ObservationScheme::OrderedCounting, y_c.clone(), exact_grid(&c, &y_c)),
        (
            "D last-2",
            &d,
            ObservationScheme::NonorderedIndicators,
            PayoffSpec::last_default_after(3, 2, 2.0),
            1.0 - (1.0 - (-2.0f64).exp()).powi(2),
        ),
    ];
    let mut inside = 0;
    let mut reproducible = true;
    let mut parts = Vec::new();
    for (i, (label, m, scheme, y, exact)) in cases.iter().enumerate() {
        let seed = 77 + i as u64;
        let s = sample_system(m, scheme, seed, count).unwrap();
        let tree = m.tree();
        let (mean, se) = s.estimate(|dr| y.value(tree.ancestor_at(dr.leaf, y.maturity()), &dr.chi));
        let z = (mean - exact).abs() / se;
        if z <= 3.0 {
            inside += 1;
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let again = pool.install(|| sample_system(m, scheme, seed, count).unwrap());
        reproducible &= again == s;
        parts.push(format!("{label} z={z:.2}"));
    }
    outcome(
        10,
        inside == 5 && reproducible,
        format!("{inside}/5 within 3σ ({}), reruns identical: {reproducible}", parts.join(", ")),
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 10] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ];
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for c in criteria {
        let o = c();
        println!("criterion {:>2}: {}  {}", o.id, if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if o.passed {
            passed += 1;
        } else if !KNOWN_FAILURES.contains(&o.id) {
            unexpected.push(o.id);
        }
    }
    // The criterion 8 target of 1 is not reachable: the stated facts force 1/2.
    let (pbar, p, inv) = fixture_b_boundary();
    let analysis_holds = pbar == 0.5 && p == 0.0 && inv == 0.5;
    println!("acceptance: {passed}/10 passed; known failures {KNOWN_FAILURES:?}, analysis holds: {analysis_holds}");
    if unexpected.is_empty() && analysis_holds {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
