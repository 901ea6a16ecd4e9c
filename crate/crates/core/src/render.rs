//! Deterministic analytic renderer: a shaded sphere over a gradient
//! backdrop, used to produce unlimited training pairs for the decoder.
//!
//! # Shading model
//!
//! Pixel `(px, py)` of an `res × res` image maps to image-plane coordinates
//! `u = 2(px + ½)/res − 1`, `v = 1 − 2(py + ½)/res`. An orthographic camera
//! looks down `−z` at a sphere of radius `R = 0.8`; the view vector is
//! `V = (0, 0, 1)`.
//!
//! Background (outside the sphere, and what transmission sees through it):
//!
//! ```text
//! bg(u, v) = (0.30 + 0.15(u+1), 0.35 + 0.15(v+1), 0.55 − 0.05(u+1))
//! ```
//!
//! Inside the sphere, with `N = (u/R, v/R, √(1 − (u²+v²)/R²))`, the fixed
//! light `L = normalize(−0.5, 0.6, 0.62)`, `H = normalize(L + V)`,
//! `nl = max(N·L, 0)`, `nh = max(N·H, 0)`, `nv = N·V` and the parameter
//! slots of [`crate::material`] (albedo `a`, metallic `μ`, specular weight
//! `s`, roughness `ρ`, IOR blend `ι`, transmission `t` with tint `c_t`,
//! translucency `τ_l` with scatter tint `c_s`, emission `e` with color
//! `c_e`):
//!
//! ```text
//! diffuse  = (1 − μ)(1 − t) · a · (0.15 + nl)
//! lobe     = nh^(4 + 60(1 − ρ)²) · nl · (0.25 + 0.75(1 − ρ))
//! specular = s · lerp(1, a, μ) · lobe · 1.5
//! f0       = 0.02 + 0.1ι,   F = f0 + (1 − f0)(1 − nv)^5
//! rim      = s · F · (0.55, 0.6, 0.7)
//! refract  = t · c_t · bg(u − (0.1 + 0.3ι)N_x, v − (0.1 + 0.3ι)N_y)
//! scatter  = τ_l · c_s · (0.2 + 0.5 · max(0.5 − N·L, 0))
//! emit     = e · c_e
//! pixel    = clamp(0.03 + diffuse + specular + rim + refract + scatter + emit, 0, 1)
//! ```
//!
//! Every term is smooth in the parameters. With all parameters zero each
//! sphere pixel equals the ambient floor 0.03.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmsError, Result};
use crate::material::{sample_uniform_with, slot, MaterialParams, DEFAULT_DIM};
use crate::seed;

pub const DEFAULT_RES: usize = 32;
pub const SPHERE_RADIUS: f64 = 0.8;
pub const AMBIENT_FLOOR: f64 = 0.03;

/// Row-major RGB image with channel values in `[0, 1]`; pixel `(x, y)`
/// channel `c` lives at `(y·width + x)·3 + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        check_dim(width * height * 3, pixels.len())?;
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GmsError::OutOfRange("pixel values must be in [0, 1]".into()));
        }
        Ok(Self { width, height, pixels })
    }

    /// Clamps raw values (e.g. decoder output) into an image.
    pub fn from_raw(width: usize, height: usize, raw: &[f32]) -> Result<Self> {
        check_dim(width * height * 3, raw.len())?;
        Ok(Self {
            width,
            height,
            pixels: raw.iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }).collect(),
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Binary PPM (P6, maxval 255), each channel rounded half-up.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|v| to_byte(*v)));
        out
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| GmsError::Parse(format!("ppm: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("only P6 with maxval 255 is supported"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let data = bytes.get(pos..pos + width * height * 3).ok_or_else(|| bad("truncated data"))?;
        Ok(Self {
            width,
            height,
            pixels: data.iter().map(|b| *b as f32 / 255.0).collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|v| *v as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

pub(crate) fn background(u: f64, v: f64) -> [f64; 3] {
    [0.30 + 0.15 * (u + 1.0), 0.35 + 0.15 * (v + 1.0), 0.55 - 0.05 * (u + 1.0)]
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Image-plane coordinates of a pixel center.
pub fn pixel_coords(px: usize, py: usize, res: usize) -> (f64, f64) {
    let u = 2.0 * (px as f64 + 0.5) / res as f64 - 1.0;
    let v = 1.0 - 2.0 * (py as f64 + 0.5) / res as f64;
    (u, v)
}

struct Shader {
    light: [f64; 3],
    half: [f64; 3],
}

impl Shader {
    fn new() -> Self {
        let light = normalize3([-0.5, 0.6, 0.62]);
        let half = normalize3([light[0], light[1], light[2] + 1.0]);
        Self { light, half }
    }

    /// Noise-free color at image-plane point `(u, v)`.
    fn shade(&self, p: &[f64], u: f64, v: f64) -> [f64; 3] {
        let r2 = (u * u + v * v) / (SPHERE_RADIUS * SPHERE_RADIUS);
        if r2 >= 1.0 {
            return background(u, v);
        }
        let n = [u / SPHERE_RADIUS, v / SPHERE_RADIUS, (1.0 - r2).sqrt()];
        let nl_signed = dot3(n, self.light);
        let nl = nl_signed.max(0.0);
        let nh = dot3(n, self.half).max(0.0);
        let nv = n[2];

        let albedo = &p[slot::ALBEDO..slot::ALBEDO + 3];
        let metallic = p[slot::METALLIC];
        let spec = p[slot::SPECULAR];
        let smooth = 1.0 - p[slot::ROUGHNESS];
        let ior = p[slot::IOR];
        let trans = p[slot::TRANSMISSION];
        let tint = &p[slot::TRANSMISSION_TINT..slot::TRANSMISSION_TINT + 3];
        let transl = p[slot::TRANSLUCENCY];
        let scatter = &p[slot::SCATTER_TINT..slot::SCATTER_TINT + 3];
        let emission = p[slot::EMISSION];
        let emission_color = &p[slot::EMISSION_COLOR..slot::EMISSION_COLOR + 3];

        let exponent = 4.0 + 60.0 * smooth * smooth;
        let lobe = nh.powf(exponent) * nl * (0.25 + 0.75 * smooth);
        let f0 = 0.02 + 0.1 * ior;
        let fresnel = f0 + (1.0 - f0) * (1.0 - nv).powi(5);
        let rim_env = [0.55, 0.6, 0.7];
        let shift = 0.1 + 0.3 * ior;
        let seen = background(u - shift * n[0], v - shift * n[1]);
        let backlight = 0.2 + 0.5 * (0.5 - nl_signed).max(0.0);

        let mut out = [0.0; 3];
        for c in 0..3 {
            let diffuse = (1.0 - metallic) * (1.0 - trans) * albedo[c] * (0.15 + nl);
            let spec_color = 1.0 + (albedo[c] - 1.0) * metallic;
            let specular = spec * spec_color * lobe * 1.5;
            let rim = spec * fresnel * rim_env[c];
            let refract = trans * tint[c] * seen[c];
            let sss = transl * scatter[c] * backlight;
            let emit = emission * emission_color[c];
            out[c] = AMBIENT_FLOOR + diffuse + specular + rim + refract + sss + emit;
        }
        out
    }
}

/// Renders `x` (m = 19) at `res × res`. With `noise_sigma > 0`, adds
/// Gaussian noise per channel before clamping; pixel `i` draws from stream
/// `i` of `seed`, so the result does not depend on evaluation order.
pub fn render_reference(x: &MaterialParams, res: usize, noise_sigma: f64, seed: u64) -> Result<ImageBuffer> {
    check_dim(DEFAULT_DIM, x.dim())?;
    if res < 8 {
        return Err(GmsError::InvalidDimension(format!("resolution {res} is below 8")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(GmsError::OutOfRange("noise sigma must be >= 0".into()));
    }
    let shader = Shader::new();
    let p = x.as_slice();
    let normal = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("sigma checked"));
    let mut pixels = Vec::with_capacity(res * res * 3);
    for py in 0..res {
        for px in 0..res {
            let (u, v) = pixel_coords(px, py, res);
            let mut rgb = shader.shade(p, u, v);
            if let Some(normal) = &normal {
                let mut rng = seed::rng(seed);
                rng.set_stream((py * res + px) as u64);
                for c in &mut rgb {
                    *c += normal.sample(&mut rng);
                }
            }
            pixels.extend(rgb.iter().map(|c| c.clamp(0.0, 1.0) as f32));
        }
    }
    Ok(ImageBuffer {
        width: res,
        height: res,
        pixels,
    })
}

/// Lazily generated (material, render) pairs.
pub struct DatasetStream {
    rng: seed::Rng,
    noise_root: u64,
    index: usize,
    count: usize,
    res: usize,
    noise_sigma: f64,
}

impl Iterator for DatasetStream {
    type Item = (MaterialParams, ImageBuffer);

    fn next(&mut self) -> Option<Self::Item> {
        if self.index >= self.count {
            return None;
        }
        let x = sample_uniform_with(&mut self.rng, DEFAULT_DIM);
        let noise_seed = seed::derive(self.noise_root, &self.index.to_string());
        self.index += 1;
        let img = render_reference(&x, self.res, self.noise_sigma, noise_seed).expect("validated in generate_dataset");
        Some((x, img))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.index;
        (left, Some(left))
    }
}

impl ExactSizeIterator for DatasetStream {}

/// Streams `count` uniform materials paired with their renders.
pub fn generate_dataset(count: usize, res: usize, noise_sigma: f64, seed: u64) -> Result<DatasetStream> {
    if count == 0 {
        return Err(GmsError::OutOfRange("dataset count must be positive".into()));
    }
    // Validate the render settings once up front.
    render_reference(&MaterialParams::zeros(DEFAULT_DIM), res, noise_sigma, 0)?;
    Ok(DatasetStream {
        rng: seed::rng(seed::derive(seed, "dataset/params")),
        noise_root: seed::derive(seed, "dataset/noise"),
        index: 0,
        count,
        res,
        noise_sigma,
    })
}
