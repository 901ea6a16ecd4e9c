use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{image_row, real, DecoderNetwork, Gradients, Real, Reduction};
use crate::error::{check_dim, GmsError, Result};
use crate::material::MaterialParams;
use crate::render::ImageBuffer;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<Option<[(Array2<T>, Array1<T>); 2]>>,
}

impl<T: Real> Adam<T> {
    pub fn new(net: &DecoderNetwork<T>, config: AdamConfig) -> Self {
        let moments = net
            .layers()
            .iter()
            .map(|l| {
                l.params().map(|(w, b)| {
                    let z = || (Array2::zeros(w.dim()), Array1::zeros(b.len()));
                    [z(), z()]
                })
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    /// Applies one bias-corrected Adam update.
    pub fn update(&mut self, net: &mut DecoderNetwork<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let step = real::<T>(c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let (b1, b2, eps) = (real::<T>(c.beta1), real::<T>(c.beta2), real::<T>(c.epsilon));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for ((layer, grad), moments) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.moments) {
            let (Some((w, b)), Some((gw, gb)), Some([(mw, mb), (vw, vb)])) = (layer.params_mut(), grad, moments)
            else {
                continue;
            };
            let apply = |p: &mut T, g: T, m: &mut T, v: &mut T| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - step * *m / (v.sqrt() + eps);
            };
            update_tensor(w, gw, mw, vw, apply);
            update_tensor(b, gb, mb, vb, apply);
        }
    }
}

/// Runs `apply` elementwise. Contiguous tensors take a plain slice loop,
/// which the compiler vectorizes; a four-way `Zip` is several times slower.
fn update_tensor<T: Real, D: ndarray::Dimension>(
    p: &mut ndarray::Array<T, D>,
    g: &ndarray::Array<T, D>,
    m: &mut ndarray::Array<T, D>,
    v: &mut ndarray::Array<T, D>,
    apply: impl Fn(&mut T, T, &mut T, &mut T),
) {
    match (p.as_slice_mut(), g.as_slice(), m.as_slice_mut(), v.as_slice_mut()) {
        (Some(p), Some(g), Some(m), Some(v)) => {
            for i in 0..p.len() {
                apply(&mut p[i], g[i], &mut m[i], &mut v[i]);
            }
        }
        _ => ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| apply(p, g, m, v)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Fraction of the pairs held out for validation.
    pub validation_fraction: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            adam: AdamConfig::default(),
            validation_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared error of every minibatch, in order.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub train_pairs: usize,
    pub validation_pairs: usize,
}

impl TrainReport {
    /// `epoch,train_loss,validation_loss` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.validation_loss));
        }
        out
    }
}

fn to_rows<T: Real>(pairs: &[(MaterialParams, ImageBuffer)], m: usize, out: usize) -> Result<(Array2<T>, Array2<T>)> {
    let mut x = Array2::zeros((pairs.len(), m));
    let mut y = Array2::zeros((pairs.len(), out));
    for (i, (p, img)) in pairs.iter().enumerate() {
        check_dim(m, p.dim())?;
        check_dim(out, img.pixels.len())?;
        x.row_mut(i).iter_mut().zip(p.as_slice()).for_each(|(d, s)| *d = real(*s));
        y.row_mut(i).assign(&Array1::from(image_row::<T>(img)));
    }
    Ok((x, y))
}

fn mean_loss<T: Real>(net: &DecoderNetwork<T>, x: &Array2<T>, y: &Array2<T>, batch: usize) -> Result<f64> {
    if x.nrows() == 0 {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for start in (0..x.nrows()).step_by(batch) {
        let end = (start + batch).min(x.nrows());
        let out = net.forward_batch(x.slice(ndarray::s![start..end, ..]))?;
        let diff = out - y.slice(ndarray::s![start..end, ..]);
        sum += diff.iter().map(|d| d.to_f64().unwrap().powi(2)).sum::<f64>();
    }
    Ok(sum / (x.nrows() * y.ncols()) as f64)
}

/// Trains with Adam on minibatch mean squared error. The last
/// `validation_fraction` of the pairs is held out and never trained on.
/// Batches are drawn in a seeded shuffle order, so a run is reproducible.
pub fn train<T: Real, I>(net: &mut DecoderNetwork<T>, pairs: I, config: &TrainConfig) -> Result<TrainReport>
where
    I: IntoIterator<Item = (MaterialParams, ImageBuffer)>,
{
    if config.batch_size == 0 {
        return Err(GmsError::OutOfRange("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(GmsError::OutOfRange("validation fraction must be in [0, 1)".into()));
    }
    let pairs: Vec<_> = pairs.into_iter().collect();
    let n_val = (pairs.len() as f64 * config.validation_fraction).round() as usize;
    let n_train = pairs.len() - n_val;
    if n_train == 0 {
        return Err(GmsError::InsufficientSamples {
            context: "decoder training".into(),
            required: 1,
            actual: 0,
        });
    }
    let (x, y) = to_rows::<T>(&pairs, net.input_len(), net.output_len())?;
    drop(pairs);
    let (x_train, x_val) = x.view().split_at(Axis(0), n_train);
    let (y_train, y_val) = y.view().split_at(Axis(0), n_train);
    let (x_val, y_val) = (x_val.to_owned(), y_val.to_owned());

    let mut adam = Adam::new(net, config.adam);
    let mut rng = seed::rng(seed::derive(config.seed, "decoder/shuffle"));
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut report = TrainReport {
        step_losses: Vec::new(),
        epochs: Vec::new(),
        train_pairs: n_train,
        validation_pairs: n_val,
    };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb = y_train.select(Axis(0), chunk);
            let (loss, grads) = net.loss_and_gradients(xb.view(), yb.view(), Reduction::Mean)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(GmsError::NonFiniteLoss {
                    step: report.step_losses.len(),
                    loss,
                });
            }
            adam.update(net, &grads);
            report.step_losses.push(loss);
            epoch_sum += loss;
            batches += 1;
        }
        let validation_loss = mean_loss(net, &x_val, &y_val, config.batch_size)?;
        log::info!(
            "epoch {epoch}: train mse {:.3e}, validation mse {validation_loss:.3e}",
            epoch_sum / batches as f64
        );
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_sum / batches as f64,
            validation_loss,
        });
    }
    Ok(report)
}

/// Peak signal-to-noise ratio with peak 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Psnr {
    /// The images are equal.
    Identical,
    Decibels(f64),
}

impl Psnr {
    /// Decibels, with `Identical` as +∞.
    pub fn value(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Decibels(d) => d,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => write!(f, "identical"),
            Psnr::Decibels(d) => write!(f, "{d:.2} dB"),
        }
    }
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<Psnr> {
    if a.width != b.width || a.height != b.height {
        return Err(GmsError::DimensionMismatch {
            expected: a.pixels.len(),
            actual: b.pixels.len(),
        });
    }
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
        .sum::<f64>()
        / a.pixels.len() as f64;
    Ok(if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Decibels(-10.0 * mse.log10())
    })
}
