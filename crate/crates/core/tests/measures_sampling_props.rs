use atomflow::measures::{atom_mass, em, make_atomic, mu_star_mass, AtomicMeasure, WeightSequence};
use atomflow::sampling::{
    estimate_barycenter_coeffs, sample_measure, sample_weights, verify_barycenter_identity, BaseLaw, RandomMeasureLaw,
    WeightLaw,
};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn weights_and_points(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (1usize..8).prop_flat_map(move |n| {
        (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n),
        )
            .prop_map(|(w, x)| {
                let s: f64 = w.iter().sum();
                (w.iter().map(|v| v / s).collect(), x)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn canonicalization_idempotent((w, x) in weights_and_points(2)) {
        let m = make_atomic(&w, &x).unwrap();
        let again = make_atomic(m.weights(), &m.locations()).unwrap();
        prop_assert_eq!(again, m);
    }

    #[test]
    fn order_independent((w, x) in weights_and_points(2), seed in any::<u64>()) {
        let m = make_atomic(&w, &x).unwrap();
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let w2: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        let x2: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let m2 = make_atomic(&w2, &x2).unwrap();
        prop_assert_eq!(m.locations(), m2.locations());
        for (a, b) in m.weights().iter().zip(m2.weights()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn em_atom_mass_round_trip((w, x) in weights_and_points(3)) {
        let m = em(&w, &x).unwrap();
        for (a, xi) in w.iter().zip(&x) {
            prop_assert!((atom_mass(&m, xi) - a).abs() <= 1e-15);
        }
        let star = mu_star_mass(&m);
        prop_assert!(star > 0.0 && star <= 1.0);
        prop_assert_eq!(star == 1.0, m.len() == 1);
    }

    #[test]
    fn merging_conserves_mass((w, x) in weights_and_points(1)) {
        // Duplicate every point: total mass must stay one.
        let mut w2: Vec<f64> = w.iter().map(|v| v / 2.0).collect();
        w2.extend(w2.clone());
        let mut x2 = x.clone();
        x2.extend(x.clone());
        let m = make_atomic(&w2, &x2).unwrap();
        prop_assert!((m.total_mass() - 1.0).abs() <= 1e-12);
        prop_assert!(m.len() <= x.len());
    }

    #[test]
    fn uniform_mu_star(n in 1usize..50) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let m = em(&vec![1.0 / n as f64; n], &x).unwrap();
        prop_assert!((mu_star_mass(&m) - 1.0 / n as f64).abs() <= 1e-15);
    }

    #[test]
    fn sampled_measures_are_probability(seed in any::<u64>(), beta in 0.3f64..3.0, d in 1usize..4) {
        let law = RandomMeasureLaw::new(WeightLaw::StickBreaking { beta }, BaseLaw::unit_box(d));
        let m = sample_measure(&law, seed).unwrap();
        prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(m.coords().iter().all(|c| (0.0..=1.0).contains(c)));
        let ws = sample_weights(&law, seed).unwrap();
        prop_assert!(ws.is_strictly_decreasing(0.0) || ws.len() < 2);
        prop_assert_eq!(sample_measure(&law, seed).unwrap(), m);
    }
}

#[test]
fn weight_sequence_rejects_bad_mass() {
    assert!(WeightSequence::new(vec![0.5, 0.4], 0.0).is_err());
    assert!(WeightSequence::new(vec![0.5, 0.4], 0.1).is_ok());
}

#[test]
fn dirac_has_unit_star_mass() {
    assert_eq!(mu_star_mass(&AtomicMeasure::dirac(&[1.0, 2.0])), 1.0);
}

#[test]
fn normalization_for_all_laws() {
    let laws = [
        WeightLaw::StickBreaking { beta: 0.5 },
        WeightLaw::StickBreaking { beta: 2.0 },
        WeightLaw::Poisson { lambda: 2.0 },
        WeightLaw::Fixed {
            weights: vec![0.6, 0.3, 0.1],
        },
    ];
    for (k, wl) in laws.into_iter().enumerate() {
        let law = RandomMeasureLaw::new(wl, BaseLaw::unit_box(1));
        let c = estimate_barycenter_coeffs(&law, 20_000, k as u64).unwrap();
        let se = c.c1.stderr.hypot(c.c2.stderr);
        assert!((c.c1.mean + c.c2.mean - 1.0).abs() <= 3.0 * se + 1e-12, "{c:?}");
    }
}

#[test]
fn first_moment_identity_random_functions() {
    use rand::Rng;
    let mut rng = atomflow::rng::stream(3, "first-moment", 0);
    let law = RandomMeasureLaw::new(WeightLaw::StickBreaking { beta: 1.0 }, BaseLaw::unit_box(2));
    for k in 0..10 {
        let (a, b, c) = (
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.0..6.0),
        );
        let f = move |x: &[f64]| (a * x[0] + b * x[1] + c).sin();
        let g = |_: &[f64], _: &[f64]| 0.0;
        let r = verify_barycenter_identity(&law, f, g, 20_000, 100 + k).unwrap();
        assert!(r.first_order_ok, "{r:?}");
    }
}

#[test]
fn poisson_atom_counts_chi_square() {
    let lambda = 2.0;
    let law = RandomMeasureLaw::new(WeightLaw::Poisson { lambda }, BaseLaw::unit_box(1));
    let n = 10_000;
    let mut counts = [0usize; 8];
    for s in 0..n {
        let k = sample_weights(&law, s as u64).unwrap().len() - 1;
        counts[k.min(7)] += 1;
    }
    let pois = Poisson::new(lambda).unwrap();
    let mut probs: Vec<f64> = (0..7).map(|k| pois.pmf(k)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let stat: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let crit = ChiSquared::new(7.0).unwrap().inverse_cdf(0.99);
    assert!(stat < crit, "chi-square {stat} >= {crit}");
}
