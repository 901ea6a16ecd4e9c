mod common;

use common::{central_difference, relative_error, rng, uniform_points};
use gms::gp::{build_covariance, fit_gradient_ascent, fit_rprop, GradientAscentFitConfig, KernelParams, PreferenceModel, RpropFitConfig};
use gms::material::MaterialParams;
use gms::optim::{maximize_rprop, RpropConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_instance(seed: u64, m: usize) -> (Vec<MaterialParams>, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = r.random_range(5..=30);
    let x = uniform_points(&mut r, n, m);
    let y = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
    let mut theta = vec![r.random_range(-1.0..2.0)];
    let base = (m as f64).sqrt().ln();
    theta.extend((0..m).map(|_| base + r.random_range(-0.7..0.7)));
    theta.push(r.random_range(-4.0..0.0));
    (x, y, theta)
}

fn lml(x: &[MaterialParams], y: &[f64], theta: &[f64]) -> f64 {
    PreferenceModel::new(x.to_vec(), y.to_vec(), KernelParams::from_log(theta).unwrap())
        .unwrap()
        .log_marginal_likelihood()
}

#[test]
fn likelihood_gradient_matches_finite_differences() {
    let start = std::time::Instant::now();
    for case in 0..20u64 {
        let m = [3, 19, 38][case as usize % 3];
        let (x, y, theta) = random_instance(100 + case, m);
        let model = PreferenceModel::new(x.clone(), y.clone(), KernelParams::from_log(&theta).unwrap()).unwrap();
        let analytic = model.likelihood_gradient();
        let numeric = central_difference(&theta, 1e-5, |t| lml(&x, &y, t));
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "case {case} (m={m}): relative error {err:e}");
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

/// Dense oracle: explicit inverse and LU determinant, no Cholesky.
fn dense_lml(x: &[MaterialParams], y: &[f64], k: &KernelParams) -> f64 {
    let n = x.len();
    let sf2 = k.signal_variance();
    let ls = k.length_scales();
    let kmat = DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = (0..ls.len())
            .map(|d| ((x[i].get(d) - x[j].get(d)) / ls[d]).powi(2))
            .sum();
        sf2 * (-0.5 * d2).exp() + if i == j { k.noise() } else { 0.0 }
    });
    let u = DVector::from_column_slice(y);
    let inv = kmat.clone().try_inverse().unwrap();
    let det = kmat.lu().determinant();
    -0.5 * (u.transpose() * inv * &u)[0] - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn likelihood_matches_dense_oracle() {
    for case in 0..6u64 {
        let (x, y, theta) = random_instance(200 + case, 3 + case as usize);
        let k = KernelParams::from_log(&theta).unwrap();
        let ours = PreferenceModel::new(x.clone(), y.clone(), k.clone()).unwrap().log_marginal_likelihood();
        let oracle = dense_lml(&x, &y, &k);
        assert!((ours - oracle).abs() < 1e-8 * oracle.abs().max(1.0), "{ours} vs {oracle}");
    }
}

#[test]
fn covariance_entries_follow_the_ard_formula() {
    let mut r = rng(3);
    let x = uniform_points(&mut r, 6, 4);
    let k = KernelParams::new(2.5, vec![0.2, 0.7, 1.5, 3.0], 0.1).unwrap();
    let kmat = build_covariance(&x, &k).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let d2: f64 = (0..4).map(|d| ((x[i].get(d) - x[j].get(d)) / k.length_scales()[d]).powi(2)).sum();
            let expect = 2.5 * (-0.5 * d2).exp() + if i == j { 0.1 } else { 0.0 };
            assert!((kmat[(i, j)] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn near_noiseless_model_interpolates() {
    let mut r = rng(11);
    let x = uniform_points(&mut r, 12, 3);
    let y: Vec<f64> = (0..12).map(|_| r.random_range(0.0..10.0)).collect();
    let k = KernelParams::new(4.0, vec![0.3; 3], 1e-9).unwrap();
    let model = PreferenceModel::new(x.clone(), y.clone(), k).unwrap();
    let worst = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| (model.predict(xi).unwrap().mean - yi).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "max residual {worst:e}");
}

#[test]
fn far_from_data_the_posterior_reverts_to_the_prior() {
    let sf2 = 3.0;
    let noise = 0.02;
    let x = vec![
        MaterialParams::new(vec![0.0, 0.0]).unwrap(),
        MaterialParams::new(vec![0.1, 0.05]).unwrap(),
    ];
    let model = PreferenceModel::new(x, vec![7.0, 8.0], KernelParams::new(sf2, vec![0.02, 0.02], noise).unwrap()).unwrap();
    let p = model.predict(&MaterialParams::new(vec![1.0, 1.0]).unwrap()).unwrap();
    assert!(p.mean.abs() < 1e-6 * sf2);
    assert!((p.variance - (sf2 + noise)).abs() < 1e-6);
}

#[test]
fn sample_order_does_not_matter() {
    let (x, y, theta) = random_instance(7, 5);
    let k = KernelParams::from_log(&theta).unwrap();
    let a = PreferenceModel::new(x.clone(), y.clone(), k.clone()).unwrap();
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.reverse();
    idx.rotate_left(3);
    let b = PreferenceModel::new(
        idx.iter().map(|&i| x[i].clone()).collect(),
        idx.iter().map(|&i| y[i]).collect(),
        k,
    )
    .unwrap();
    assert!((a.log_marginal_likelihood() - b.log_marginal_likelihood()).abs() < 1e-9);
    let mut r = rng(8);
    for q in uniform_points(&mut r, 20, 5) {
        let (pa, pb) = (a.predict(&q).unwrap(), b.predict(&q).unwrap());
        assert!((pa.mean - pb.mean).abs() < 1e-9);
        assert!((pa.variance - pb.variance).abs() < 1e-9);
    }
}

#[test]
fn rprop_finds_the_grid_maximum_of_a_concave_toy() {
    let f = |t: f64| -(t - 1.7).powi(2) + 0.3 * (t - 1.7).powi(3).min(0.0);
    let trace = maximize_rprop(vec![-2.0], &[true], &RpropConfig::default(), |t| {
        let h = 1e-6;
        Ok((f(t[0]), vec![(f(t[0] + h) - f(t[0] - h)) / (2.0 * h)]))
    })
    .unwrap();
    let grid_best = (0..=8000)
        .map(|i| -4.0 + i as f64 * 1e-3)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    assert!((trace.params[0] - grid_best).abs() < 2e-3);
    assert!(trace.trajectory.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn both_optimizers_improve_the_likelihood() {
    let (x, y, _) = random_instance(31, 19);
    let init = KernelParams::wide_prior(19);
    let rp = fit_rprop(x.clone(), y.clone(), &init, &RpropFitConfig::default()).unwrap();
    let ga = fit_gradient_ascent(x, y, &init, &GradientAscentFitConfig::default()).unwrap();
    assert!(rp.trajectory.windows(2).all(|w| w[1] >= w[0]));
    assert!(rp.model.log_marginal_likelihood() > rp.initial_log_likelihood());
    assert!(ga.model.log_marginal_likelihood() >= ga.initial_log_likelihood());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn posterior_variance_is_bounded_by_the_prior(seed in 0u64..10_000, m in 1usize..6) {
        let (x, y, theta) = random_instance(seed, m);
        let k = KernelParams::from_log(&theta).unwrap();
        let model = PreferenceModel::new(x, y, k.clone()).unwrap();
        let mut r = rng(seed ^ 0xabc);
        for q in uniform_points(&mut r, 5, m) {
            let p = model.predict(&q).unwrap();
            prop_assert!(p.variance >= 0.0);
            prop_assert!(p.variance <= k.signal_variance() + k.noise() + 1e-9);
            prop_assert_eq!(p.mean, model.predict_mean(&q).unwrap());
        }
    }

    #[test]
    fn covariance_is_symmetric_with_noise_on_the_diagonal(seed in 0u64..10_000) {
        let (x, _, theta) = random_instance(seed, 4);
        let k = KernelParams::from_log(&theta).unwrap();
        let kmat = build_covariance(&x, &k).unwrap();
        for i in 0..x.len() {
            prop_assert!((kmat[(i, i)] - k.signal_variance() - k.noise()).abs() < 1e-12);
            for j in 0..i {
                prop_assert_eq!(kmat[(i, j)], kmat[(j, i)]);
                prop_assert!(kmat[(i, j)] <= k.signal_variance());
            }
        }
    }
}
