//! Color the latent plane by predicted preference, by similarity to a
//! reference material and by their product, then query between gridpoints.
//!
//!     cargo run --example latent_maps

use gms::decoder::{Architecture, DecoderNetwork};
use gms::gp::{Frozen, KernelParams, Optimizer};
use gms::gplvm::{fit_gplvm, GplvmConfig};
use gms::maps::{combined_product, explore, preference_map, query_bilinear, similarity_map};
use gms::material::{preset_user, PreferenceSample};
use gms::recommend::generate_gallery;
use gms::session::high_scorers;

fn main() -> gms::error::Result<()> {
    let user = preset_user("glassy", 19)?;
    let samples = generate_gallery(300, 19, 4)?
        .into_iter()
        .map(|x| {
            let s = user.score(&x)?;
            PreferenceSample::new(x, s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pref = Optimizer::Rprop
        .fit(
            samples.iter().map(|s| s.params.clone()).collect(),
            samples.iter().map(|s| s.score).collect(),
            &KernelParams::wide_prior(19),
            Frozen::default(),
        )?
        .model;
    let high = high_scorers(&samples, 0.0, 16);
    let lat = fit_gplvm(high.iter().map(|s| s.params.clone()).collect(), &GplvmConfig::default())?.model;
    // An untrained network keeps the example fast; any decoder will do.
    let net = DecoderNetwork::<f32>::init_glorot(Architecture::standard(19, 32), 5)?;

    let preference = preference_map(&pref, &lat, 50)?;
    let similarity = similarity_map(&net, &lat, &high[0].params, 20)?;
    let product = combined_product(&preference, &similarity)?;
    for grid in [&preference, &similarity, &product] {
        let (lo, hi) = grid.min_max();
        println!("{:<10} r={:<3} range [{lo:.3}, {hi:.3}]", grid.kind.name(), grid.r, lo = lo, hi = hi);
    }

    let (a, b) = (product.gridpoint(10, 10), product.gridpoint(11, 11));
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    println!("product between gridpoints: {:.4}", query_bilinear(&product, &mid).value);

    let step = explore(&lat, &net, &lat.latents()[0], &[0.05, 0.0])?;
    println!("explored to ({:.3}, {:.3}); preview mean {:.3}", step.point[0], step.point[1], step.preview.mean());
    Ok(())
}
