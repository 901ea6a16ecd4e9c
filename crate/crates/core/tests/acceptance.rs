//! Acceptance gate. Runs every criterion in order, prints one `PASS` or
//! `FAIL` line each and exits nonzero if any failed. Arguments that do not
//! start with `-` select criteria by substring.

mod common;

use std::cell::OnceCell;
use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::{central_difference, relative_error, rng, uniform_points};
use gms::decoder::{psnr, train, Adam, AdamConfig, Architecture, DecoderNetwork, TrainConfig};
use gms::eval::{jsd, normalize, run_comparison, ComparisonConfig, ScoredSplit};
use gms::gp::{KernelParams, Optimizer, PreferenceModel};
use gms::gplvm::{fit_gplvm, GplvmConfig, LatentModel};
use gms::maps::{explore, preference_map, product_map, query_bilinear, similarity_map, LatentGrid};
use gms::material::{preset_user, MaterialParams, PreferenceSample};
use gms::recommend::{predicted_score, recommend, threshold_sweep, RecommendationConfig};
use gms::render::{generate_dataset, render_reference};
use gms::seed;
use gms::session::{high_scorers, Session, SessionConfig};
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------- GPR

fn gpr_gradient() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..20u64 {
        let m = [3, 19, 38][case as usize % 3];
        let mut r = rng(1000 + case);
        let n = r.random_range(5..=30);
        let x = uniform_points(&mut r, n, m);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
        let mut theta = vec![r.random_range(-1.0..2.0)];
        theta.extend((0..m).map(|_| (m as f64).sqrt().ln() + r.random_range(-0.7..0.7)));
        theta.push(r.random_range(-4.0..0.0));
        let model = PreferenceModel::new(x.clone(), y.clone(), KernelParams::from_log(&theta).unwrap()).unwrap();
        let numeric = central_difference(&theta, 1e-5, |t| {
            PreferenceModel::new(x.clone(), y.clone(), KernelParams::from_log(t).unwrap())
                .unwrap()
                .log_marginal_likelihood()
        });
        worst = worst.max(relative_error(&model.likelihood_gradient(), &numeric, 1e-8));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst < 1e-4 && secs < 10.0,
        format!("worst relative error {worst:.2e} over 20 instances in {secs:.2}s"),
    )
}

fn gpr_interpolation() -> Check {
    let mut r = rng(2);
    let x = uniform_points(&mut r, 20, 5);
    let y: Vec<f64> = (0..20).map(|_| r.random_range(0.0..10.0)).collect();
    let model = PreferenceModel::new(x.clone(), y.clone(), KernelParams::new(5.0, vec![0.4; 5], 1e-9).unwrap()).unwrap();
    let residual = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| (model.predict(xi).unwrap().mean - yi).abs())
        .fold(0.0, f64::max);

    let (sf2, noise) = (5.0, 1e-9);
    let near = uniform_points(&mut r, 10, 2).into_iter().map(|p| MaterialParams::clamped(&[0.1 * p.get(0), 0.1 * p.get(1)])).collect();
    let ys = (0..10).map(|k| k as f64).collect();
    let local = PreferenceModel::new(near, ys, KernelParams::new(sf2, vec![0.02; 2], noise).unwrap()).unwrap();
    let far = local.predict(&MaterialParams::new(vec![1.0, 1.0]).unwrap()).unwrap();
    let ok = residual < 1e-4 && far.mean.abs() < 1e-6 * sf2 && (far.variance - (sf2 + noise)).abs() < 1e-6;
    ensure(
        ok,
        format!(
            "max training residual {residual:.2e}; far mean {:.1e}, far variance error {:.1e}",
            far.mean,
            (far.variance - sf2 - noise).abs()
        ),
    )
}

// ---------------------------------------------------- optimizer table

struct Comparison {
    report: gms::eval::ExperimentReport,
    prior_jsd: f64,
    secs: f64,
}

fn comparison_run() -> Comparison {
    let config = ComparisonConfig::default();
    let start = Instant::now();
    let report = run_comparison(&config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    // Same pool and held-out set as the m = 19 cells.
    let user = preset_user("glassy", 19).unwrap();
    let split = ScoredSplit::generate(&user, 500, config.held_out, seed::derive(config.seed, "table2/glassy/19")).unwrap();
    let prior = PreferenceModel::new(
        split.train[..250].to_vec(),
        split.train_scores[..250].to_vec(),
        KernelParams::wide_prior(19),
    )
    .unwrap();
    let prior_jsd = split.jsd_of(&prior).unwrap();
    print!("{}", report.to_csv().lines().map(|l| format!("      {l}\n")).collect::<String>());
    Comparison { report, prior_jsd, secs }
}

fn optimizer_comparison(t: &Comparison) -> Check {
    let cell = |m, n, o| t.report.find("glassy", m, n, o).map(|r| r.jsd).unwrap_or(f64::NAN);
    let fitted = cell(19, 250, Optimizer::Rprop);
    let mut ok = fitted <= 0.25 && fitted < t.prior_jsd && t.secs < 600.0;
    let mut gaps = Vec::new();
    for n in [150, 250, 500] {
        let gap = cell(38, n, Optimizer::Rprop) - cell(38, n, Optimizer::GradientAscent);
        ok &= gap <= 0.05;
        gaps.push(format!("{gap:+.3}"));
    }
    ensure(
        ok,
        format!(
            "m=19 n=250 JSD {fitted:.4} (wide prior {:.4}); m=38 rprop-GA gaps [{}]; {:.0}s",
            t.prior_jsd,
            gaps.join(", "),
            t.secs
        ),
    )
}

fn sample_size_stability(t: &Comparison) -> Check {
    let at = |n| t.report.find("glassy", 19, n, Optimizer::Rprop).map(|r| r.jsd).unwrap_or(f64::NAN);
    let (small, large) = (at(150), at(500));
    ensure(large <= small + 0.05, format!("JSD n=150 {small:.4}, n=500 {large:.4}"))
}

// ------------------------------------------------------ recommendations

fn oracle_samples(m: usize, n: usize, seed_value: u64) -> Vec<PreferenceSample> {
    let user = preset_user("glassy", m).unwrap();
    gms::recommend::generate_gallery(n, m, seed_value)
        .unwrap()
        .into_iter()
        .map(|x| {
            let s = user.score(&x).unwrap();
            PreferenceSample::new(x, s).unwrap()
        })
        .collect()
}

fn fitted_model() -> PreferenceModel {
    let samples = oracle_samples(19, 250, 40);
    Optimizer::Rprop
        .fit(
            samples.iter().map(|s| s.params.clone()).collect(),
            samples.iter().map(|s| s.score).collect(),
            &KernelParams::wide_prior(19),
            Default::default(),
        )
        .unwrap()
        .model
}

fn recommendation_soundness() -> Check {
    let model = fitted_model();
    let start = Instant::now();
    let set = recommend(
        &model,
        &RecommendationConfig {
            threshold: 4.0,
            count: 300,
            seed: 1,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let sound = set.items.len() == 300 && set.items.iter().all(|it| predicted_score(&model, &it.params).unwrap() >= 4.0);

    let sweep = threshold_sweep(&model, &[2.0, 4.0, 6.0, 8.0], 300, &RecommendationConfig { seed: 2, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let rates: Vec<f64> = sweep.iter().map(|r| r.acceptance_rate).collect();
    let monotone = rates.windows(2).all(|w| w[1] <= w[0]);

    let base = RecommendationConfig {
        threshold: 6.0,
        count: 100,
        budget: 100_000,
        seed: 3,
        ..Default::default()
    };
    let climb = recommend(&model, &base).map_err(|e| e.to_string())?;
    let plain = recommend(&model, &RecommendationConfig { hillclimb_steps: 0, ..base }).map_err(|e| e.to_string())?;
    let enough = climb.proposals.min(plain.proposals) >= 1000;
    let helps = climb.acceptance_rate >= plain.acceptance_rate;
    ensure(
        sound && monotone && enough && helps && secs < 60.0,
        format!(
            "300 at tau=4 all re-score >= 4: {sound} ({secs:.1}s); rates {rates:.4?}; tau=6 climb {:.4} ({} proposals) vs plain {:.4} ({} proposals)",
            climb.acceptance_rate, climb.proposals, plain.acceptance_rate, plain.proposals
        ),
    )
}

// --------------------------------------------------------------- GPLVM

fn reconstruction_rmse(model: &LatentModel) -> f64 {
    let mut sum = 0.0;
    for (l, x) in model.latents().iter().zip(model.observed()) {
        sum += model.project(l).raw.iter().zip(x.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    (sum / (model.z() * model.dim()) as f64).sqrt()
}

fn gplvm() -> Check {
    let samples = oracle_samples(19, 500, 41);
    let rows: Vec<MaterialParams> = high_scorers(&samples, 0.0, 16).into_iter().map(|s| s.params).collect();
    let z = rows.len();
    let start = Instant::now();
    let fit = fit_gplvm(rows, &GplvmConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let rmse = reconstruction_rmse(&fit.model);

    let mut r = rng(6);
    let origin: Vec<f64> = (0..19).map(|_| r.random_range(0.3..0.7)).collect();
    let dirs: Vec<Vec<f64>> = (0..2).map(|_| (0..19).map(|_| r.random_range(-0.25..0.25)).collect()).collect();
    let planar: Vec<MaterialParams> = (0..16)
        .map(|_| {
            let (a, b) = (r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
            MaterialParams::new((0..19).map(|d| origin[d] + a * dirs[0][d] + b * dirs[1][d]).collect()).unwrap()
        })
        .collect();
    let planar_rmse = reconstruction_rmse(&fit_gplvm(planar, &GplvmConfig::default()).unwrap().model);
    let ll = fit.model.log_likelihood();
    ensure(
        z == 16 && ll >= fit.initial_log_likelihood() && rmse <= 0.15 && planar_rmse <= 1e-2 && secs < 60.0,
        format!(
            "z={z}; log-likelihood {ll:.2} vs PCA init {:.2}; RMSE {rmse:.4}; planar RMSE {planar_rmse:.2e}; {secs:.2}s",
            fit.initial_log_likelihood()
        ),
    )
}

// ------------------------------------------------------------- decoder

fn tiny_gradient_error() -> f64 {
    let arch = Architecture {
        m: 4,
        res: 4,
        channels: 4,
        kernel: 3,
        blocks: 4,
        hidden: 8,
    };
    let mut net = DecoderNetwork::<f64>::init_glorot(arch, 3).unwrap();
    let mut r = rng(4);
    let p: Vec<f64> = net.parameters().iter().map(|v| v + r.random_range(-0.05..0.05)).collect();
    net.set_parameters(&p).unwrap();
    let x: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
    let target: Vec<f64> = (0..net.output_len()).map(|_| r.random::<f64>()).collect();
    let analytic = net.gradients_for(&x, &target).unwrap().1.flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for i in 0..p.len() {
        let mut loss_at = |v: f64| {
            q[i] = v;
            probe.set_parameters(&q).unwrap();
            probe.gradients_for(&x, &target).unwrap().0
        };
        let numeric = (loss_at(p[i] + 1e-4) - loss_at(p[i] - 1e-4)) / 2e-4;
        q[i] = p[i];
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn overfit_one_mse() -> f32 {
    let arch = Architecture {
        m: 19,
        res: 8,
        channels: 16,
        kernel: 3,
        blocks: 4,
        hidden: 64,
    };
    let mut net = DecoderNetwork::<f32>::init_glorot(arch, 1).unwrap();
    let x = MaterialParams::new((0..19).map(|k| (k as f64 * 0.37) % 1.0).collect()).unwrap();
    let target = render_reference(&x, 8, 0.0, 0).unwrap();
    let input: Vec<f32> = x.as_slice().iter().map(|v| *v as f32).collect();
    let mut adam = Adam::new(&net, AdamConfig::default());
    for _ in 0..500 {
        let (_, g) = net.gradients_for(&input, &target.pixels).unwrap();
        adam.update(&mut net, &g);
    }
    net.gradients_for(&input, &target.pixels).unwrap().0
}

const DESK_PAIRS: usize = 4000;
const DESK_RES: usize = 32;

fn desk_train(noise: f64, epochs: usize, label: &str) -> (DecoderNetwork, f64) {
    let pairs = generate_dataset(DESK_PAIRS, DESK_RES, noise, seed::derive(0, label)).unwrap();
    let mut net = DecoderNetwork::<f32>::init_glorot(Architecture::standard(19, DESK_RES), seed::derive(0, "init")).unwrap();
    let cfg = TrainConfig {
        epochs,
        seed: seed::derive(0, "shuffle"),
        ..Default::default()
    };
    let start = Instant::now();
    train(&mut net, pairs, &cfg).unwrap();
    (net, start.elapsed().as_secs_f64())
}

fn held_out_params() -> Vec<MaterialParams> {
    generate_dataset(100, 8, 0.0, seed::derive(0, "held-out")).unwrap().map(|(x, _)| x).collect()
}

fn decoder() -> Check {
    let fd = tiny_gradient_error();
    let overfit = overfit_one_mse();
    let (net, secs) = desk_train(0.0, 30, "clean");
    let scores: Vec<f64> = held_out_params()
        .iter()
        .map(|x| {
            let truth = render_reference(x, DESK_RES, 0.0, 0).unwrap();
            psnr(&net.forward(x).unwrap(), &truth).unwrap().value()
        })
        .collect();
    let (avg, worst) = (mean(&scores), min(&scores));
    ensure(
        fd < 1e-3 && overfit < 1e-3 && secs <= 1800.0 && avg >= 30.0 && worst >= 20.0,
        format!(
            "tiny-net FD error {fd:.1e}; overfit-one MSE {overfit:.1e}; {} parameters trained in {secs:.0}s; held-out PSNR mean {avg:.2} dB, min {worst:.2} dB",
            net.parameter_count()
        ),
    )
}

fn denoising() -> Check {
    let sigma = 0.05;
    let (net, secs) = desk_train(sigma, 30, "noisy");
    let mut predicted = Vec::new();
    let mut noisy = Vec::new();
    for (k, x) in held_out_params().iter().enumerate() {
        let clean = render_reference(x, DESK_RES, 0.0, 0).unwrap();
        let target = render_reference(x, DESK_RES, sigma, 9000 + k as u64).unwrap();
        predicted.push(psnr(&net.forward(x).unwrap(), &clean).unwrap().value());
        noisy.push(psnr(&target, &clean).unwrap().value());
    }
    let gain = mean(&predicted) - mean(&noisy);
    ensure(
        gain >= 2.0,
        format!(
            "predictions {:.2} dB vs noisy targets {:.2} dB against clean renders (gain {gain:.2} dB, {secs:.0}s training)",
            mean(&predicted),
            mean(&noisy)
        ),
    )
}

// ----------------------------------------------------------------- JSD

fn jsd_unit_truths() -> Check {
    let one = normalize(&[1.0, 0.0]).unwrap();
    let other = normalize(&[0.0, 1.0]).unwrap();
    let half = normalize(&[0.5, 0.5]).unwrap();
    let same = jsd(&half, &half).unwrap();
    let disjoint = jsd(&one, &other).unwrap();
    let hand = jsd(&one, &half).unwrap();
    let mut r = rng(9);
    let mut asym: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..20);
        let a: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let (p, q) = (normalize(&a).unwrap(), normalize(&b).unwrap());
        asym = asym.max((jsd(&p, &q).unwrap() - jsd(&q, &p).unwrap()).abs());
    }
    ensure(
        same == 0.0 && (disjoint - LN_2).abs() <= 1e-12 && asym == 0.0 && (hand - 0.2158).abs() <= 1e-4,
        format!("self {same}; disjoint - ln 2 = {:.1e}; max asymmetry {asym:.1e}; hand case {hand:.5}", disjoint - LN_2),
    )
}

// ---------------------------------------------------------- latent maps

fn bilinear_oracle(grid: &LatentGrid, x: f64, y: f64) -> f64 {
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

fn latent_maps() -> Check {
    let pref = fitted_model();
    let samples = oracle_samples(19, 500, 41);
    let rows = high_scorers(&samples, 0.0, 16).into_iter().map(|s| s.params).collect();
    let lat = fit_gplvm(rows, &GplvmConfig::default()).unwrap().model;
    let net = DecoderNetwork::<f32>::init_glorot(Architecture::standard(19, 32), 8).unwrap();
    let reference = lat.observed()[0].clone();

    let start = Instant::now();
    let p = preference_map(&pref, &lat, 50).map_err(|e| e.to_string())?;
    let pref_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let s = similarity_map(&net, &lat, &reference, 20).map_err(|e| e.to_string())?;
    let sim_secs = start.elapsed().as_secs_f64();

    let p20 = preference_map(&pref, &lat, 20).unwrap();
    let prod = product_map(&p20, &s).unwrap();
    let exact = (0..400).all(|k| prod.values[k] == p20.values[k] * s.values[k]);

    let mut at_nodes: f64 = 0.0;
    for j in 0..50 {
        for i in 0..50 {
            at_nodes = at_nodes.max((query_bilinear(&p, &p.gridpoint(i, j)).value - p.at(i, j)).abs());
        }
    }
    let mut r = rng(10);
    let mut interior: f64 = 0.0;
    for _ in 0..100 {
        let x = r.random_range(p.bounds.min[0]..p.bounds.max[0]);
        let y = r.random_range(p.bounds.min[1]..p.bounds.max[1]);
        interior = interior.max((query_bilinear(&p, &[x, y]).value - bilinear_oracle(&p, x, y)).abs());
    }

    let origin = lat.latents()[0];
    explore(&lat, &net, &origin, &[0.0, 0.0]).unwrap();
    let mut slowest: f64 = 0.0;
    for k in 0..20 {
        let t = Instant::now();
        explore(&lat, &net, &origin, &[0.01 * k as f64, -0.005 * k as f64]).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }
    ensure(
        exact && at_nodes <= 1e-12 && interior <= 1e-12 && pref_secs < 30.0 && sim_secs < 30.0 && slowest <= 0.05,
        format!(
            "product exact: {exact}; bilinear error nodes {at_nodes:.1e}, interior {interior:.1e}; r=50 preference {pref_secs:.2}s, r=20 similarity {sim_secs:.2}s; slowest preview {:.1} ms",
            slowest * 1e3
        ),
    )
}

// ---------------------------------------------------------- end to end

fn end_to_end() -> Check {
    let net = Arc::new(DecoderNetwork::<f32>::init_glorot(Architecture::standard(19, 32), 11).unwrap());
    let session = || {
        let mut s = Session::new("e2e", 19, SessionConfig { seed: 2024, ..Default::default() }).unwrap();
        let user = preset_user("glassy", 19).unwrap();
        let scored = s
            .gallery(250, 0)
            .unwrap()
            .into_iter()
            .map(|x| {
                let v = user.score(&x).unwrap();
                PreferenceSample::new(x, v).unwrap()
            })
            .collect();
        s.add_scores(scored).unwrap();
        s.set_decoder(net.clone()).unwrap();
        s
    };
    let (mut a, mut b) = (session(), session());
    let run_a = serde_json::to_vec(&a.run_gms(4.0, 50).map_err(|e| e.to_string())?).unwrap();
    let run_b = serde_json::to_vec(&b.run_gms(4.0, 50).map_err(|e| e.to_string())?).unwrap();
    let export_a = serde_json::to_vec(&a.export()).unwrap();
    let export_b = serde_json::to_vec(&b.export()).unwrap();
    let identical = run_a == run_b && export_a == export_b;

    let back = Session::import(&serde_json::from_slice(&export_a).unwrap()).map_err(|e| e.to_string())?;
    let (p, q) = (a.preference().unwrap(), back.preference().unwrap());
    let mut r = rng(12);
    let bit_exact = uniform_points(&mut r, 100, 19).iter().all(|x| {
        let (u, v) = (p.predict(x).unwrap(), q.predict(x).unwrap());
        u.mean.to_bits() == v.mean.to_bits() && u.variance.to_bits() == v.variance.to_bits()
    });
    ensure(
        identical && bit_exact,
        format!(
            "two runs byte-identical: {identical} ({} + {} bytes); 100 predictions bit-exact after import: {bit_exact}",
            run_a.len(),
            export_a.len()
        ),
    )
}

// ---------------------------------------------------------------- main

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        if !wanted(name) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name} [{:.1}s]: {detail}", start.elapsed().as_secs_f64());
        results.push((name, outcome));
    };

    run("gpr-gradient", &mut gpr_gradient);
    run("gpr-interpolation", &mut gpr_interpolation);
    let comparison = OnceCell::new();
    run("optimizer-comparison", &mut || optimizer_comparison(comparison.get_or_init(comparison_run)));
    run("sample-size-stability", &mut || sample_size_stability(comparison.get_or_init(comparison_run)));
    run("recommendation-soundness", &mut recommendation_soundness);
    run("gplvm", &mut gplvm);
    run("decoder", &mut decoder);
    run("denoising", &mut denoising);
    run("jsd-unit-truths", &mut jsd_unit_truths);
    run("latent-maps", &mut latent_maps);
    run("end-to-end", &mut end_to_end);

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
