//! One full pass of the pipeline on a session scored by a synthetic user:
//! fit, recommend, embed, build the maps, then export and re-import.
//!
//!     cargo run --example session_pipeline

use std::sync::Arc;

use gms::decoder::{Architecture, DecoderNetwork};
use gms::material::{preset_user, PreferenceSample};
use gms::session::{Session, SessionConfig};

fn main() -> gms::error::Result<()> {
    let config = SessionConfig {
        seed: 42,
        recommendation_count: 30,
        ..Default::default()
    };
    let mut session = Session::new("demo", 19, config)?;
    let user = preset_user("glassy", 19)?;
    for round in 0..5 {
        let scored = session
            .gallery(50, round)?
            .into_iter()
            .map(|x| {
                let s = user.score(&x)?;
                PreferenceSample::new(x, s)
            })
            .collect::<Result<Vec<_>, _>>()?;
        session.add_scores(scored)?;
    }
    session.set_decoder(Arc::new(DecoderNetwork::init_glorot(Architecture::standard(19, 32), 1)?))?;

    let run = session.run_gms(4.0, 30)?;
    println!(
        "{} samples -> {} recommendations (acceptance {:.3}), {} materials embedded",
        session.samples().len(),
        run.recommendations.items.len(),
        run.recommendations.acceptance_rate,
        run.latent.z
    );
    let (lo, hi) = run.product.min_max();
    println!("product map {0}x{0}, values in [{lo:.3}, {hi:.3}]", run.product.r);

    let doc = serde_json::to_string(&session.export())?;
    let back = Session::import(&serde_json::from_str(&doc)?)?;
    let x = &run.recommendations.items[0].params;
    println!(
        "export is {} KiB; re-imported prediction {:.6} vs {:.6}",
        doc.len() / 1024,
        back.preference().unwrap().predict(x)?.mean,
        session.preference().unwrap().predict(x)?.mean
    );
    Ok(())
}
