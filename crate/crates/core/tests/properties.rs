use multidefault::conditional::{condexp_g, symmetrize_density, Method};
use multidefault::config::ModelConfig;
use multidefault::fixtures::{self, RandomGridSpec};
use multidefault::martingale::{
    change_measure_density, check_mtilde_condition, construct_g_martingale, g_martingale_from_terminal,
    perturb_candidate, ConstructorInputs, TOL,
};
use multidefault::model::{
    build_joint_measure, validate_density_model, DensityModel, NodeId, ObservationScheme, PayoffSpec,
};
use multidefault::oracle::{brute_force_condexp, sample_system, AtomTable};
use multidefault::prediction::predict_generic;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(seed: u64) -> DensityModel {
    let spec = RandomGridSpec::sample(&mut ChaCha8Rng::seed_from_u64(seed));
    fixtures::random_grid_model(seed, spec)
}

fn schemes(m: &DensityModel) -> Vec<ObservationScheme> {
    [
        ObservationScheme::Initial,
        ObservationScheme::ProgressiveSingle,
        ObservationScheme::Insider { t0: 1.5 },
        ObservationScheme::Advanced { epsilon: 0.5 },
        ObservationScheme::Delayed { epsilon: 1.0 },
        ObservationScheme::OrderedCounting,
        ObservationScheme::NonorderedIndicators,
        ObservationScheme::MarkedCounting,
    ]
    .into_iter()
    .filter(|s| s.check_compatible(m.reference()).is_ok())
    .collect()
}

fn payoff(m: &DensityModel) -> PayoffSpec {
    let n = m.n();
    PayoffSpec::new(m.horizon(), "p", move |node, x| (node % 3) as f64 + x[..n].iter().sum::<f64>().cos())
}

fn n2_model(seed: u64) -> DensityModel {
    let mut s = seed;
    loop {
        let spec = RandomGridSpec { zero_prob: 0.0, ordered: s % 2 == 0, ..RandomGridSpec::default() };
        let m = fixtures::random_grid_model(s, spec);
        let g = m.grid().unwrap();
        let h = m.horizon() as f64;
        if (0..2).all(|c| g.points().any(|p| p[c] > h)) {
            return m;
        }
        s += 1_000_003;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_models_validate(seed in 0u64..10_000) {
        let m = model(seed);
        let r = validate_density_model(&m, 1e-9).unwrap();
        prop_assert!(r.passed, "max defect {}", r.max_defect());
    }

    #[test]
    fn trivial_partition_gives_the_mean(seed in 0u64..10_000) {
        let m = model(seed);
        let g = m.grid().unwrap();
        let y = payoff(&m);
        let joint = build_joint_measure(&m, m.horizon()).unwrap();
        let mean: f64 = joint.nodes().iter().enumerate()
            .map(|(i, &d)| (0..g.len()).map(|k| joint.mass_at(i, k) * y.value(d, g.point(k))).sum::<f64>())
            .sum();
        let v = brute_force_condexp(&joint, &AtomTable::trivial(&joint), |d, k| Some(y.value(d, g.point(k)))).unwrap();
        prop_assert_eq!(v.len(), 1);
        prop_assert!((v[0].value - mean).abs() < 1e-12);
    }

    #[test]
    fn coarse_atoms_average_fine_atoms(seed in 0u64..10_000) {
        let m = model(seed);
        let g = m.grid().unwrap();
        let y = payoff(&m);
        let h = m.horizon();
        let joint = build_joint_measure(&m, h).unwrap();
        for scheme in schemes(&m) {
            for t in 0..h {
                let coarse = AtomTable::g_atoms(&m, &scheme, &joint, t).unwrap();
                let fine = AtomTable::g_atoms(&m, &scheme, &joint, t + 1).unwrap();
                let cv = brute_force_condexp(&joint, &coarse, |d, k| Some(y.value(d, g.point(k)))).unwrap();
                let fv = brute_force_condexp(&joint, &fine, |d, k| Some(y.value(d, g.point(k)))).unwrap();
                let mut owner = std::collections::HashMap::new();
                for (a, atom) in coarse.atoms().iter().enumerate() {
                    for &cell in &atom.members {
                        owner.insert(cell, a);
                    }
                }
                let mut acc = vec![0.0; coarse.len()];
                for (b, atom) in fine.atoms().iter().enumerate() {
                    let a = owner[&atom.members[0]];
                    prop_assert!(atom.members.iter().all(|c| owner[c] == a), "fine atom straddles coarse atoms");
                    acc[a] += fv[b].mass * fv[b].value;
                }
                for (a, v) in cv.iter().enumerate() {
                    prop_assert!((acc[a] - v.mass * v.value).abs() < 1e-12, "{scheme} t={t}");
                }
            }
        }
    }

    #[test]
    fn direct_and_bayes_agree(seed in 0u64..10_000) {
        let m = model(seed);
        let y = payoff(&m);
        for scheme in schemes(&m) {
            for t in 0..=m.horizon() {
                let a = condexp_g(&m, &scheme, &y, t, Method::Direct).unwrap();
                let b = condexp_g(&m, &scheme, &y, t, Method::Bayes).unwrap();
                for (ra, rb) in a.rows.iter().zip(&b.rows) {
                    prop_assert_eq!(ra.mass_zero, rb.mass_zero);
                    prop_assert!((ra.value - rb.value).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn predictions_normalize(seed in 0u64..10_000, half in 0usize..8) {
        let m = model(seed);
        let g = m.grid().unwrap();
        let prior = m.prior().unwrap();
        let t = half as f64 * 0.5;
        for scheme in schemes(&m) {
            for k in 0..g.len() {
                if prior[k] == 0.0 {
                    continue;
                }
                let p = predict_generic(&prior, &scheme, m.reference(), t, k).unwrap();
                prop_assert!(!p.mass_zero());
                prop_assert!((p.total_mass() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constructed_passes_and_perturbed_fails(seed in 0u64..10_000) {
        let m = n2_model(seed);
        let scheme = if m.ordered() { ObservationScheme::OrderedCounting } else { ObservationScheme::NonorderedIndicators };
        let cand = construct_g_martingale(&m, &ConstructorInputs::seeded(&m, seed).unwrap()).unwrap();
        let r = check_mtilde_condition(&cand, &m, &scheme, &[], TOL).unwrap();
        prop_assert!(r.passed && r.direct_passed, "{} {}", r.max_defect, r.max_direct_defect);
        let (bad, _) = perturb_candidate(&cand, &m, seed).unwrap();
        let r = check_mtilde_condition(&bad, &m, &scheme, &[], TOL).unwrap();
        prop_assert!(!r.passed && !r.direct_passed);
    }

    #[test]
    fn measure_change_prices_agree(seed in 0u64..10_000) {
        let m = model(seed);
        let scheme = schemes(&m)[1];
        let g = m.grid().unwrap();
        let h = m.horizon();
        let zeta = |d: NodeId, k: usize| 1.0 + ((d + 2 * k) % 4) as f64;
        let joint = build_joint_measure(&m, h).unwrap();
        let mean: f64 = joint.nodes().iter().enumerate()
            .map(|(i, &d)| (0..g.len()).map(|k| joint.mass_at(i, k) * zeta(d, k)).sum::<f64>())
            .sum();
        let cand = g_martingale_from_terminal(&m, &scheme, h, |d, k| zeta(d, k) / mean).unwrap();
        for t in 0..=h {
            let q = change_measure_density(&cand, &m, t, &[], 1e-9).unwrap();
            let y = PayoffSpec::new(t, "y", |node, x| node as f64 - x[0]);
            prop_assert!((q.price_q(&y).unwrap() - q.price_p_weighted(&y).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn config_round_trip(seed in 0u64..10_000) {
        let m = model(seed);
        let cfg = ModelConfig::from_model(&m).unwrap();
        let back = ModelConfig::parse(&cfg.to_toml().unwrap()).unwrap().build().unwrap();
        let g = m.grid().unwrap();
        for node in 0..m.tree().len() {
            for k in 0..g.len() {
                prop_assert_eq!(back.alpha_k(node, k).to_bits(), m.alpha_k(node, k).to_bits());
            }
        }
    }

    #[test]
    fn sampling_is_deterministic(seed in 0u64..10_000) {
        let m = model(seed);
        let scheme = schemes(&m)[0];
        let a = sample_system(&m, &scheme, seed, 300).unwrap();
        let b = sample_system(&m, &scheme, seed, 300).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn symmetrized_symmetric_density_scales_by_permutations(u in prop::collection::vec(0.0f64..10.0, 3)) {
        let f = symmetrize_density(|x: &[f64]| (-x.iter().sum::<f64>()).exp(), 3);
        let mut s = u.clone();
        s.sort_by(f64::total_cmp);
        let distinct = s.windows(2).all(|w| w[0] < w[1]);
        prop_assume!(distinct);
        let base = (-s.iter().sum::<f64>()).exp();
        prop_assert!((f(&s) - 6.0 * base).abs() <= 1e-12 * base.max(1.0));
        if u != s {
            prop_assert_eq!(f(&u), 0.0);
        }
    }
}
