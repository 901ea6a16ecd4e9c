//! Draw recommendations above a score threshold and watch variety fall as
//! the threshold rises.
//!
//!     cargo run --example recommendations

use gms::gp::{Frozen, KernelParams, Optimizer};
use gms::material::preset_user;
use gms::recommend::{generate_gallery, recommend, threshold_sweep, RecommendationConfig};

fn main() -> gms::error::Result<()> {
    let user = preset_user("glassy", 19)?;
    let gallery = generate_gallery(250, 19, 3)?;
    let scores = gallery.iter().map(|x| user.score(x)).collect::<Result<Vec<_>, _>>()?;
    let model = Optimizer::Rprop.fit(gallery, scores, &KernelParams::wide_prior(19), Frozen::default())?.model;

    let cfg = RecommendationConfig {
        threshold: 4.0,
        count: 20,
        seed: 7,
        ..Default::default()
    };
    let set = recommend(&model, &cfg)?;
    println!(
        "{} recommendations from {} proposals ({} hill-climbed), acceptance {:.3}",
        set.items.len(),
        set.proposals,
        set.hillclimb_invocations,
        set.acceptance_rate
    );
    for item in set.items.iter().take(3) {
        println!("  predicted {:.2}, oracle {:.2}", item.predicted, user.score(&item.params)?);
    }

    println!("threshold  acceptance  mean predicted");
    for row in threshold_sweep(&model, &[1.0, 3.0, 5.0, 7.0], 50, &cfg)? {
        println!("{:9.1}  {:10.4}  {:14.2}", row.threshold, row.acceptance_rate, row.mean_predicted);
    }
    Ok(())
}
