//! Fit a preference model to synthetic scores and compare the two
//! hyperparameter optimizers.
//!
//!     cargo run --example preference_model

use gms::gp::{Frozen, KernelParams, Optimizer};
use gms::material::preset_user;
use gms::recommend::generate_gallery;

fn main() -> gms::error::Result<()> {
    let m = 19;
    let user = preset_user("glassy", m)?;
    let gallery = generate_gallery(150, m, 1)?;
    let scores = gallery.iter().map(|x| user.score(x)).collect::<Result<Vec<_>, _>>()?;
    let init = KernelParams::wide_prior(m);

    for optimizer in [Optimizer::Rprop, Optimizer::GradientAscent] {
        let fit = optimizer.fit(gallery.clone(), scores.clone(), &init, Frozen::default())?;
        let k = fit.model.kernel();
        println!(
            "{:<16} log-likelihood {:8.2} -> {:8.2}  signal variance {:.3}  noise {:.4}",
            optimizer.name(),
            fit.initial_log_likelihood(),
            fit.model.log_marginal_likelihood(),
            k.signal_variance(),
            k.noise()
        );
    }

    // Short length scales mark the coordinates the user cares about.
    let fit = Optimizer::Rprop.fit(gallery, scores, &init, Frozen::default())?;
    let mut ls: Vec<(usize, f64)> = fit.model.kernel().length_scales().into_iter().enumerate().collect();
    ls.sort_by(|a, b| a.1.total_cmp(&b.1));
    println!("most relevant coordinates: {:?}", ls[..5].iter().map(|(d, _)| d).collect::<Vec<_>>());

    let probe = generate_gallery(3, m, 99)?;
    for x in &probe {
        let p = fit.model.predict(x)?;
        println!("predicted {:5.2} ± {:.2}   true {:5.2}", p.mean, p.variance.sqrt(), user.score(x)?);
    }
    Ok(())
}
