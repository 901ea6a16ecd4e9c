//! Render a material with the reference shader and save it as PPM.
//!
//!     cargo run --example render_swatch -- swatch.ppm

use gms::material::MaterialParams;
use gms::render::render_reference;

fn main() -> gms::error::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "swatch.ppm".into());
    // A warm, glossy material: mostly red base color, low roughness.
    let mut values = vec![0.1; 19];
    values[..3].copy_from_slice(&[0.9, 0.35, 0.2]);
    values[4] = 0.15;
    values[5] = 0.8;
    let x = MaterialParams::new(values)?;

    let clean = render_reference(&x, 128, 0.0, 0)?;
    let noisy = render_reference(&x, 128, 0.05, 1)?;
    println!("mean luminance {:.3} (noisy {:.3})", clean.mean(), noisy.mean());
    std::fs::write(&path, clean.to_ppm())?;
    println!("wrote {path}");
    Ok(())
}
