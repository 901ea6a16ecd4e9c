mod common;

use common::{central_difference, relative_error, rng, uniform_points};
use gms::gplvm::{fit_gplvm, pca_init, GplvmConfig, LatentKernel, LatentModel, LatentPoint};
use gms::material::MaterialParams;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

/// `z` rows on a random 2-D affine subspace of `[0, 1]^m`.
pub fn subspace_rows(seed: u64, z: usize, m: usize) -> Vec<MaterialParams> {
    let mut r = rng(seed);
    let origin: Vec<f64> = (0..m).map(|_| r.random_range(0.3..0.7)).collect();
    let dirs: Vec<Vec<f64>> = (0..2).map(|_| (0..m).map(|_| r.random_range(-0.25..0.25)).collect()).collect();
    (0..z)
        .map(|_| {
            let (a, b) = (r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
            MaterialParams::new((0..m).map(|d| origin[d] + a * dirs[0][d] + b * dirs[1][d]).collect()).unwrap()
        })
        .collect()
}

fn rmse(model: &LatentModel) -> f64 {
    let mut sum = 0.0;
    for (l, x) in model.latents().iter().zip(model.observed()) {
        let p = model.project(l);
        sum += p.raw.iter().zip(x.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    (sum / (model.z() * model.dim()) as f64).sqrt()
}

fn pack(latents: &[LatentPoint], k: &LatentKernel) -> Vec<f64> {
    let mut t: Vec<f64> = latents.iter().flatten().copied().collect();
    t.extend(k.to_log());
    t
}

fn unpack(t: &[f64], z: usize) -> (Vec<LatentPoint>, LatentKernel) {
    let latents = t[..2 * z].chunks(2).map(|c| [c[0], c[1]]).collect();
    (latents, LatentKernel::from_log([t[2 * z], t[2 * z + 1], t[2 * z + 2]]).unwrap())
}

#[test]
fn likelihood_gradient_matches_finite_differences() {
    for case in 0..6u64 {
        let mut r = rng(case);
        let z = r.random_range(3..12);
        let m = [3, 19, 38][case as usize % 3];
        let rows = uniform_points(&mut r, z, m);
        let latents: Vec<LatentPoint> = (0..z).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let k = LatentKernel::new(r.random_range(0.5..2.0), r.random_range(0.3..1.5), r.random_range(0.01..0.2)).unwrap();
        let model = LatentModel::new(rows.clone(), latents.clone(), k).unwrap();
        let theta = pack(&latents, &k);
        let numeric = central_difference(&theta, 1e-6, |t| {
            let (l, k) = unpack(t, z);
            LatentModel::new(rows.clone(), l, k).unwrap().log_likelihood()
        });
        let err = relative_error(&model.gradient(), &numeric, 1e-8);
        assert!(err < 1e-5, "case {case}: relative error {err:e}");
    }
}

#[test]
fn planar_data_is_reconstructed() {
    let rows = subspace_rows(4, 16, 19);
    let fit = fit_gplvm(rows, &GplvmConfig::default()).unwrap();
    assert!(fit.model.log_likelihood() >= fit.initial_log_likelihood());
    let e = rmse(&fit.model);
    assert!(e <= 1e-2, "rmse {e}");
}

#[test]
fn two_point_midpoint_matches_the_hand_solution() {
    let x1 = MaterialParams::new(vec![0.2, 0.9, 0.4]).unwrap();
    let x2 = MaterialParams::new(vec![0.6, 0.1, 0.4]).unwrap();
    let (sf2, ell, noise) = (1.5, 0.8, 0.05);
    let model = LatentModel::new(
        vec![x1.clone(), x2.clone()],
        vec![[-0.5, 0.0], [0.5, 0.0]],
        LatentKernel::new(sf2, ell, noise).unwrap(),
    )
    .unwrap();
    // By symmetry K⁻¹k* has equal entries c / (σ² + β⁻¹ + k₁₂).
    let c = sf2 * (-0.25 / (2.0 * ell * ell)).exp();
    let k12 = sf2 * (-1.0 / (2.0 * ell * ell)).exp();
    let weight = c / (sf2 + noise + k12);
    let p = model.project(&[0.0, 0.0]);
    for d in 0..3 {
        let expect = weight * (x1.get(d) + x2.get(d));
        assert!((p.raw[d] - expect).abs() < 1e-12);
    }
    let var = sf2 + noise - 2.0 * c * weight;
    assert!((p.variance - var).abs() < 1e-12);
}

#[test]
fn shifting_every_latent_changes_nothing() {
    let mut r = rng(9);
    let rows = uniform_points(&mut r, 8, 6);
    let latents: Vec<LatentPoint> = (0..8).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    let k = LatentKernel::default();
    let a = LatentModel::new(rows.clone(), latents.clone(), k).unwrap();
    let shift = [3.25, -1.5];
    let moved = latents.iter().map(|l| [l[0] + shift[0], l[1] + shift[1]]).collect();
    let b = LatentModel::new(rows, moved, k).unwrap();
    assert!((a.log_likelihood() - b.log_likelihood()).abs() < 1e-9);
    let pa = a.project(&[0.1, 0.2]);
    let pb = b.project(&[0.1 + shift[0], 0.2 + shift[1]]);
    for (u, v) in pa.raw.iter().zip(&pb.raw) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn pca_spread_equals_the_top_two_eigenvalues() {
    let mut r = rng(2);
    let rows = uniform_points(&mut r, 14, 7);
    let lat = pca_init(&rows).unwrap();
    let z = rows.len();
    let spread: f64 = (0..2)
        .map(|k| {
            let mean = lat.iter().map(|l| l[k]).sum::<f64>() / z as f64;
            lat.iter().map(|l| (l[k] - mean).powi(2)).sum::<f64>() / (z - 1) as f64
        })
        .sum();
    // Oracle: singular values of the centered data matrix.
    let x = DMatrix::from_fn(z, 7, |i, j| rows[i].get(j));
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(z, 7, |i, j| x[(i, j)] - mean[j]);
    let mut sv: Vec<f64> = centered.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top2 = (sv[0] * sv[0] + sv[1] * sv[1]) / (z - 1) as f64;
    assert!((spread - top2).abs() < 1e-10 * top2);
    for l in &lat {
        assert!(l.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    let same = vec![MaterialParams::new(vec![0.5; 4]).unwrap(); 5];
    assert!(fit_gplvm(same, &GplvmConfig::default()).is_err());
    assert!(fit_gplvm(vec![MaterialParams::new(vec![0.5; 4]).unwrap()], &GplvmConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_continuous(seed in any::<u64>(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let mut r = rng(seed);
        let rows = uniform_points(&mut r, 6, 5);
        let latents: Vec<LatentPoint> = (0..6).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let model = LatentModel::new(rows, latents, LatentKernel::default()).unwrap();
        let a = model.project(&[x, y]);
        let b = model.project(&[x + 1e-7, y - 1e-7]);
        for (u, v) in a.raw.iter().zip(&b.raw) {
            prop_assert!((u - v).abs() < 1e-4);
        }
        prop_assert!(a.params.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(a.variance >= 0.0);
    }
}
