mod common;

use common::{rng, uniform_points};
use gms::decoder::{Architecture, DecoderNetwork};
use gms::gp::{KernelParams, PreferenceModel};
use gms::gplvm::{LatentKernel, LatentModel, LatentPoint};
use gms::maps::{
    combined_product, explore, preference_map, product_map, query_bilinear, resample, similarity_map, Bounds, GridKind,
    LatentGrid,
};
use gms::material::MaterialParams;
use proptest::prelude::*;
use rand::Rng;

const M: usize = 6;

fn fixture() -> (PreferenceModel, LatentModel, DecoderNetwork) {
    let mut r = rng(1);
    let xs = uniform_points(&mut r, 30, M);
    let scores: Vec<f64> = xs.iter().map(|x| 10.0 * x.get(0) * (1.0 - x.get(2))).collect();
    let pref = PreferenceModel::new(xs.clone(), scores, KernelParams::new(10.0, vec![0.6; M], 0.05).unwrap()).unwrap();
    let latents: Vec<LatentPoint> = (0..8).map(|_| [r.random_range(-1.0..1.0), r.random_range(-0.5..0.5)]).collect();
    let lat = LatentModel::new(xs[..8].to_vec(), latents, LatentKernel::new(0.3, 0.7, 0.01).unwrap()).unwrap();
    let arch = Architecture {
        m: M,
        res: 8,
        channels: 8,
        kernel: 3,
        blocks: 4,
        hidden: 16,
    };
    (pref, lat, DecoderNetwork::init_glorot(arch, 4).unwrap())
}

/// Gridpoint `(i, j)` recomputed from the padded latent bounding box.
fn expected_gridpoint(lat: &LatentModel, r: usize, i: usize, j: usize) -> LatentPoint {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for l in lat.latents() {
        for a in 0..2 {
            lo[a] = lo[a].min(l[a]);
            hi[a] = hi[a].max(l[a]);
        }
    }
    let at = |a: usize, k: usize| {
        let pad = 0.1 * (hi[a] - lo[a]);
        let (min, max) = (lo[a] - pad, hi[a] + pad);
        min + (max - min) * k as f64 / (r - 1) as f64
    };
    [at(0, i), at(1, j)]
}

#[test]
fn preference_grid_matches_pointwise_evaluation() {
    let (pref, lat, _) = fixture();
    let r = 12;
    let grid = preference_map(&pref, &lat, r).unwrap();
    for j in 0..r {
        for i in 0..r {
            let p = expected_gridpoint(&lat, r, i, j);
            let g = grid.gridpoint(i, j);
            assert!((p[0] - g[0]).abs() < 1e-12 && (p[1] - g[1]).abs() < 1e-12);
            let expect = pref.predict_mean_raw(&lat.project(&p).raw).unwrap();
            assert!((grid.at(i, j) - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn similarity_grid_matches_pointwise_evaluation() {
    let (_, lat, net) = fixture();
    let reference = lat.observed()[2].clone();
    let r = 7;
    let grid = similarity_map(&net, &lat, &reference, r).unwrap();
    let target = net.forward(&reference).unwrap();
    let mut distances = Vec::new();
    for j in 0..r {
        for i in 0..r {
            let img = net.forward(&lat.project(&grid.gridpoint(i, j)).params).unwrap();
            let d: f64 = img
                .pixels
                .iter()
                .zip(&target.pixels)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            distances.push(d);
        }
    }
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    for (k, d) in distances.iter().enumerate() {
        assert!((grid.distances.as_ref().unwrap()[k] - d).abs() < 1e-4);
        assert!((grid.values[k] - (-d / median).exp()).abs() < 1e-4);
        assert!((0.0..=1.0).contains(&grid.values[k]));
    }
}

#[test]
fn product_is_the_exact_elementwise_product() {
    let (pref, lat, net) = fixture();
    let p = preference_map(&pref, &lat, 9).unwrap();
    let s = similarity_map(&net, &lat, &lat.observed()[0], 9).unwrap();
    let prod = product_map(&p, &s).unwrap();
    for k in 0..81 {
        assert_eq!(prod.values[k], p.values[k] * s.values[k]);
    }
    let coarse = similarity_map(&net, &lat, &lat.observed()[0], 5).unwrap();
    let combined = combined_product(&p, &coarse).unwrap();
    let up = resample(&coarse, 9).unwrap();
    assert_eq!(combined.r, 9);
    for k in 0..81 {
        assert_eq!(combined.values[k], p.values[k] * up.values[k]);
    }
}

fn reference_bilinear(grid: &LatentGrid, x: f64, y: f64) -> f64 {
    let r = grid.r as f64;
    let fx = (x - grid.bounds.min[0]) / (grid.bounds.max[0] - grid.bounds.min[0]) * (r - 1.0);
    let fy = (y - grid.bounds.min[1]) / (grid.bounds.max[1] - grid.bounds.min[1]) * (r - 1.0);
    let (i, j) = (fx.floor() as usize, fy.floor() as usize);
    let (tx, ty) = (fx - i as f64, fy - j as f64);
    grid.at(i, j) * (1.0 - tx) * (1.0 - ty)
        + grid.at(i + 1, j) * tx * (1.0 - ty)
        + grid.at(i, j + 1) * (1.0 - tx) * ty
        + grid.at(i + 1, j + 1) * tx * ty
}

#[test]
fn bilinear_queries_match_stored_values_and_the_formula() {
    let (pref, lat, _) = fixture();
    let grid = preference_map(&pref, &lat, 10).unwrap();
    for j in 0..10 {
        for i in 0..10 {
            let q = query_bilinear(&grid, &grid.gridpoint(i, j));
            assert!(!q.clamped);
            assert!((q.value - grid.at(i, j)).abs() < 1e-12);
        }
    }
    let mut r = rng(77);
    for _ in 0..100 {
        let x = r.random_range(grid.bounds.min[0]..grid.bounds.max[0]);
        let y = r.random_range(grid.bounds.min[1]..grid.bounds.max[1]);
        let q = query_bilinear(&grid, &[x, y]);
        assert!((q.value - reference_bilinear(&grid, x, y)).abs() < 1e-12);
    }
    let outside = query_bilinear(&grid, &[grid.bounds.max[0] + 5.0, grid.bounds.min[1] - 5.0]);
    assert!(outside.clamped);
    assert!((outside.value - grid.at(9, 0)).abs() < 1e-12);
}

#[test]
fn queries_are_continuous_across_cell_edges() {
    let (pref, lat, _) = fixture();
    let grid = preference_map(&pref, &lat, 8).unwrap();
    let eps = 1e-10;
    for i in 1..7 {
        let edge = grid.gridpoint(i, 3);
        let y = edge[1] + 0.37 * (grid.gridpoint(0, 4)[1] - edge[1]);
        let left = query_bilinear(&grid, &[edge[0] - eps, y]).value;
        let right = query_bilinear(&grid, &[edge[0] + eps, y]).value;
        assert!((left - right).abs() < 1e-6);
    }
}

#[test]
fn thread_count_does_not_change_grids() {
    let (pref, lat, net) = fixture();
    let build = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            (
                preference_map(&pref, &lat, 15).unwrap(),
                similarity_map(&net, &lat, &lat.observed()[1], 9).unwrap(),
            )
        })
    };
    assert_eq!(build(1), build(3));
}

#[test]
fn exploring_moves_through_the_projection() {
    let (_, lat, net) = fixture();
    let origin = lat.latents()[0];
    let step = explore(&lat, &net, &origin, &[0.05, -0.02]).unwrap();
    assert_eq!(step.params, lat.project(&[origin[0] + 0.05, origin[1] - 0.02]).params);
    assert_eq!(step.preview, net.forward(&step.params).unwrap());
    assert!(explore(&lat, &net, &origin, &[f64::NAN, 0.0]).is_err());
}

#[test]
fn mismatched_grids_do_not_multiply() {
    let (pref, lat, _) = fixture();
    let a = preference_map(&pref, &lat, 6).unwrap();
    let b = preference_map(&pref, &lat, 7).unwrap();
    assert!(product_map(&a, &b).is_err());
    let shifted = LatentGrid::new(
        GridKind::Similarity,
        6,
        Bounds {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        },
        vec![1.0; 36],
    )
    .unwrap();
    assert!(product_map(&a, &shifted).is_err());
    assert!(preference_map(&pref, &lat, 1).is_err());
    let _ = MaterialParams::zeros(M);
}

proptest! {
    #[test]
    fn grid_text_round_trips(seed in any::<u64>(), r in 2usize..9) {
        let mut g = rng(seed);
        let values: Vec<f64> = (0..r * r).map(|_| g.random_range(-5.0..5.0)).collect();
        let bounds = Bounds { min: [-1.0, -2.0], max: [0.5, 3.0] };
        let grid = LatentGrid::new(GridKind::Product, r, bounds, values).unwrap();
        let back = LatentGrid::from_text(&grid.header(), &grid.to_text()).unwrap();
        prop_assert_eq!(back, grid);
    }
}
