//! Score fitted models against a synthetic user with the Jensen-Shannon
//! divergence on held-out materials.
//!
//!     cargo run --example jsd_evaluation

use gms::eval::{jsd, normalize, run_comparison, ComparisonConfig};
use gms::gp::Optimizer;

fn main() -> gms::error::Result<()> {
    let p = normalize(&[1.0, 0.0])?;
    let q = normalize(&[0.5, 0.5])?;
    println!("jsd((1,0), (1/2,1/2)) = {:.4} nats", jsd(&p, &q)?);

    let config = ComparisonConfig {
        ms: vec![19],
        ns: vec![100, 200],
        optimizers: vec![Optimizer::Rprop],
        held_out: 300,
        ..Default::default()
    };
    print!("{}", run_comparison(&config)?.to_csv());
    Ok(())
}
