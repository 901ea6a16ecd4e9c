//! Embed high-scoring materials in a 2-D plane and walk across it.
//!
//!     cargo run --example latent_space

use gms::gplvm::{fit_gplvm, GplvmConfig};
use gms::material::{preset_user, PreferenceSample};
use gms::recommend::generate_gallery;
use gms::session::high_scorers;

fn main() -> gms::error::Result<()> {
    let user = preset_user("translucent", 19)?;
    let samples = generate_gallery(400, 19, 5)?
        .into_iter()
        .map(|x| {
            let s = user.score(&x)?;
            PreferenceSample::new(x, s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows = high_scorers(&samples, 0.0, 16).into_iter().map(|s| s.params).collect();

    let fit = fit_gplvm(rows, &GplvmConfig::default())?;
    let model = &fit.model;
    println!(
        "embedded {} materials; log-likelihood {:.2} (PCA start {:.2})",
        model.z(),
        model.log_likelihood(),
        fit.initial_log_likelihood()
    );

    let (lo, hi) = model.bounds();
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let point = [lo[0] + t * (hi[0] - lo[0]), 0.5 * (lo[1] + hi[1])];
        let p = model.project(&point);
        println!(
            "({:+.2}, {:+.2}) -> first coordinates {:.2?}  variance {:.4}",
            point[0],
            point[1],
            &p.params.as_slice()[..4],
            p.variance
        );
    }
    Ok(())
}
