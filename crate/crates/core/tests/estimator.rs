use caplab::activations::{Activation, SERIES_TOL};
use caplab::linalg::Matrix;
use caplab::networks::{DenseNet, Network, PatchSet, Pooling};
use caplab::rademacher::{
    estimate, exact_rademacher_finite, sphere_points, EstimateOptions, Family, HypothesisSpec, FINITE_ENUM_CAP,
};
use caplab::shattering::NormKind;
use caplab::Error;

fn opts(trials: usize, seed: u64) -> EstimateOptions {
    EstimateOptions {
        trials,
        seed,
        ..EstimateOptions::default()
    }
}

#[test]
fn estimate_is_below_exact_value_of_its_own_iterates() {
    let points = sphere_points(8, 16, 1.0, 21);
    let spec = HypothesisSpec::dense(Activation::Relu, 1.0, 1.0, NormKind::Spectral, 4);
    let est = estimate(
        &points,
        &spec,
        &EstimateOptions {
            exact_signs: true,
            ..opts(256, 4)
        },
    )
    .unwrap();
    assert!(est.signs_enumerated);
    assert_eq!(est.trials, 256);
    assert_eq!(est.iterates.len(), 256);
    let exact = exact_rademacher_finite(&points, &est.iterates, FINITE_ENUM_CAP).unwrap();
    assert!(est.mean <= exact + 1e-9, "{} vs {exact}", est.mean);
    // ‖W‖_F ≤ √n‖W‖ puts the class inside a Frobenius ball, where the
    // contraction argument gives 2·b·B√n·b_x/√m.
    let upper = 2.0 * 1.0 * 2.0 * 1.0 / 8f64.sqrt();
    assert!(est.mean <= upper);
    for (net, value) in est.iterates.iter().zip(&est.best_trial_values) {
        let Network::Dense(d) = net else { panic!("dense iterate expected") };
        assert!(caplab::linalg::norm(&d.u) <= 1.0 + 1e-9);
        assert!(caplab::linalg::spectral_norm_default(&d.w).unwrap() <= 1.0 + 1e-8);
        assert!(value.is_finite());
    }
}

#[test]
fn linear_class_at_sixty_four_points() {
    let points = sphere_points(64, 12, 1.0, 64);
    let spec = HypothesisSpec::dense(Activation::Identity, 1.0, 1.0, NormKind::Spectral, 2);
    let est = estimate(&points, &spec, &opts(200, 64)).unwrap();
    assert!(est.mean <= 0.125 + 3.0 * est.stderr, "{est:?}");
}

#[test]
fn frobenius_class_below_contraction_curve() {
    let spec = HypothesisSpec::dense(Activation::Relu, 1.0, 1.0, NormKind::Frobenius, 4);
    for m in [8usize, 32, 128] {
        let points = sphere_points(m, 16, 1.0, m as u64);
        let est = estimate(&points, &spec, &opts(60, 3)).unwrap();
        let curve = 2.0 * (1.0 + (m as f64).ln().powf(1.5)) / (m as f64).sqrt();
        assert!(est.mean <= curve + 3.0 * est.stderr, "m={m}: {} vs {curve}", est.mean);
    }
}

#[test]
fn smooth_class_below_series_ceiling() {
    let sigma = Activation::Polynomial { coeffs: vec![0.5, 0.0, 0.25] };
    let ceiling = sigma.tilde_sigma(1.0, SERIES_TOL).unwrap();
    let spec = HypothesisSpec::dense(sigma, 1.0, 1.0, NormKind::Spectral, 3);
    let points = sphere_points(16, 6, 1.0, 5);
    let est = estimate(&points, &spec, &opts(100, 5)).unwrap();
    assert!(est.mean <= ceiling / 4.0 + 3.0 * est.stderr, "{} vs {}", est.mean, ceiling / 4.0);
}

#[test]
fn linear_class_scales_with_the_points() {
    let spec = HypothesisSpec::dense(Activation::Identity, 1.0, 1.0, NormKind::Spectral, 2);
    let points = sphere_points(16, 8, 1.0, 6);
    let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| 2.5 * x).collect()).collect();
    let a = estimate(&points, &spec, &opts(100, 6)).unwrap();
    let b = estimate(&scaled, &spec, &opts(100, 6)).unwrap();
    assert!((b.mean - 2.5 * a.mean).abs() <= 3.0 * b.stderr, "{} vs {}", b.mean, 2.5 * a.mean);
}

#[test]
fn mean_is_average_of_trial_values() {
    let spec = HypothesisSpec::dense(Activation::Relu, 1.0, 2.0, NormKind::Frobenius, 3);
    let points = sphere_points(10, 5, 1.0, 7);
    let est = estimate(&points, &spec, &opts(30, 1)).unwrap();
    let mean = est.best_trial_values.iter().sum::<f64>() / 30.0;
    assert!((est.mean - mean).abs() < 1e-15);
    assert!(est.stderr >= 0.0);
    assert_eq!(est.restarts_per_trial, 8);
}

#[test]
fn conv_families_respect_caps() {
    let phi = PatchSet::strided_1d(12, 4, 2).unwrap();
    let points = sphere_points(10, 12, 1.0, 8);
    for (family, pooling) in [
        (Family::ConvLinear, Pooling::Max),
        (Family::ConvPool, Pooling::Max),
        (Family::ConvPool, Pooling::Average),
    ] {
        let spec = HypothesisSpec {
            family,
            patches: Some(phi.clone()),
            pooling,
            ..HypothesisSpec::dense(Activation::Relu, 1.0, 1.0, NormKind::Spectral, 1)
        };
        let est = estimate(&points, &spec, &opts(20, 2)).unwrap();
        assert!(est.mean > 0.0 && est.mean < 1.0, "{family:?}: {}", est.mean);
        for net in &est.iterates {
            let Network::Conv(c) = net else { panic!("conv iterate expected") };
            let w = caplab::networks::conform_matrix(&c.phi, &c.w).unwrap();
            assert!(caplab::linalg::spectral_norm_default(&w).unwrap() <= 1.0 + 1e-8);
        }
        let exact = exact_rademacher_finite(&points, &est.iterates, FINITE_ENUM_CAP).unwrap();
        assert!(exact.is_finite());
    }
}

#[test]
fn deep_power_family_runs() {
    let spec = HypothesisSpec {
        family: Family::DeepPower,
        k: 2,
        depth: 2,
        ..HypothesisSpec::dense(Activation::Identity, 1.0, 1.0, NormKind::Spectral, 3)
    };
    let points = sphere_points(8, 4, 1.0, 9);
    let est = estimate(&points, &spec, &opts(16, 9)).unwrap();
    // Every net in the class is bounded by b·B^{k+k²}·b_x^{k²} = 1.
    assert!(est.mean > 0.0 && est.mean <= 1.0);
}

#[test]
fn finite_class_pair_and_monotonicity() {
    let points = sphere_points(6, 3, 1.0, 10);
    let w = Matrix::from_rows(&[vec![0.3, -0.7, 0.2]]).unwrap();
    let f = Network::Dense(DenseNet::new(vec![1.0], w.clone(), Activation::Relu).unwrap());
    let neg_f = Network::Dense(DenseNet::new(vec![-1.0], w, Activation::Relu).unwrap());
    let outputs: Vec<f64> = points.iter().map(|x| f.forward(x).unwrap()).collect();
    let mut brute = 0.0;
    for mask in 0..64u32 {
        let s: f64 = outputs
            .iter()
            .enumerate()
            .map(|(i, v)| if mask >> i & 1 == 1 { *v } else { -*v })
            .sum();
        brute += s.abs();
    }
    brute /= 64.0 * 6.0;
    let pair = exact_rademacher_finite(&points, &[f.clone(), neg_f], FINITE_ENUM_CAP).unwrap();
    assert!((pair - brute).abs() < 1e-14);
    let single = exact_rademacher_finite(&points, &[f], FINITE_ENUM_CAP).unwrap();
    assert!(single <= pair);
    assert!(single.abs() < 1e-14);
}

#[test]
fn bad_inputs_are_rejected() {
    let spec = HypothesisSpec::dense(Activation::Relu, 1.0, 1.0, NormKind::Spectral, 2);
    assert!(matches!(estimate(&[], &spec, &opts(4, 0)), Err(Error::InvalidParameter(_))));
    let ragged = vec![vec![1.0, 0.0], vec![1.0]];
    assert!(matches!(estimate(&ragged, &spec, &opts(4, 0)), Err(Error::Dimension { .. })));
    let conv = HypothesisSpec {
        family: Family::ConvPool,
        ..spec.clone()
    };
    assert!(estimate(&[vec![1.0, 0.0]], &conv, &opts(4, 0)).is_err());
    let negative = HypothesisSpec { big_b: -1.0, ..spec };
    assert!(estimate(&[vec![1.0]], &negative, &opts(4, 0)).is_err());
}
