//! Train a small decoder on rendered pairs and measure how close its
//! previews come to the renderer.
//!
//!     cargo run --example decoder_training

use gms::decoder::{psnr, train, Architecture, DecoderNetwork, TrainConfig};
use gms::render::{generate_dataset, render_reference};

fn main() -> gms::error::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let res = 16;
    let arch = Architecture {
        channels: 16,
        hidden: 256,
        ..Architecture::standard(19, res)
    };
    let mut net = DecoderNetwork::<f32>::init_glorot(arch, 1)?;
    println!("{} parameters", net.parameter_count());

    let pairs = generate_dataset(1500, res, 0.0, 2)?;
    let report = train(
        &mut net,
        pairs,
        &TrainConfig {
            epochs: 8,
            ..Default::default()
        },
    )?;
    print!("{}", report.to_csv());

    let held_out: Vec<_> = generate_dataset(20, res, 0.0, 3)?.collect();
    let mut total = 0.0;
    for (x, _) in &held_out {
        let truth = render_reference(x, res, 0.0, 0)?;
        total += psnr(&net.forward(x)?, &truth)?.value();
    }
    println!("held-out mean PSNR {:.2} dB", total / held_out.len() as f64);
    Ok(())
}
