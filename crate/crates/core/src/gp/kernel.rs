use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmsError, Result};
use crate::material::MaterialParams;

/// Hyperparameters of the ARD squared-exponential kernel
///
/// ```text
/// k(a, b) = σ_f² · exp(−½ Σ_d (a_d − b_d)² / l_d²) + β⁻¹ · [a is b]
/// ```
///
/// stored as natural logarithms so every value is positive by construction.
/// The optimizer's parameter vector is `[ln σ_f², ln l_1 … ln l_m, ln β⁻¹]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    log_signal_variance: f64,
    log_length_scales: Vec<f64>,
    log_noise: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>, noise: f64) -> Result<Self> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(signal_variance) || !positive(noise) || !length_scales.iter().all(|l| positive(*l)) {
            return Err(GmsError::OutOfRange("kernel hyperparameters must be positive and finite".into()));
        }
        if length_scales.is_empty() {
            return Err(GmsError::InvalidDimension("kernel needs at least one length scale".into()));
        }
        Ok(Self {
            log_signal_variance: signal_variance.ln(),
            log_length_scales: length_scales.iter().map(|l| l.ln()).collect(),
            log_noise: noise.ln(),
        })
    }

    /// σ_f² = 1, every l_d = 1, β⁻¹ = 0.05.
    pub fn wide_prior(m: usize) -> Self {
        Self::new(1.0, vec![1.0; m.max(1)], 0.05).expect("valid constants")
    }

    /// Rebuilds from the optimizer's log-parameter vector.
    pub fn from_log(theta: &[f64]) -> Result<Self> {
        if theta.len() < 3 {
            return Err(GmsError::InvalidDimension("log-parameter vector too short".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(GmsError::OutOfRange("non-finite log hyperparameter".into()));
        }
        Ok(Self {
            log_signal_variance: theta[0],
            log_length_scales: theta[1..theta.len() - 1].to_vec(),
            log_noise: theta[theta.len() - 1],
        })
    }

    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.log_length_scales.len() + 2);
        v.push(self.log_signal_variance);
        v.extend_from_slice(&self.log_length_scales);
        v.push(self.log_noise);
        v
    }

    pub fn dim(&self) -> usize {
        self.log_length_scales.len()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn length_scales(&self) -> Vec<f64> {
        self.log_length_scales.iter().map(|l| l.exp()).collect()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn log_signal_variance(&self) -> f64 {
        self.log_signal_variance
    }

    pub fn log_length_scales(&self) -> &[f64] {
        &self.log_length_scales
    }

    pub fn log_noise(&self) -> f64 {
        self.log_noise
    }

    pub fn with_noise(mut self, noise: f64) -> Result<Self> {
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(GmsError::OutOfRange("noise must be positive".into()));
        }
        self.log_noise = noise.ln();
        Ok(self)
    }

    /// `1 / l_d` per dimension; inputs are pre-scaled by this so the kernel
    /// only needs plain squared distances.
    pub(crate) fn inverse_length_scales(&self) -> Vec<f64> {
        self.log_length_scales.iter().map(|l| (-l).exp()).collect()
    }
}

/// Evaluates the kernel between two materials. `add_noise` adds β⁻¹ and is
/// meant only for diagonal entries of a training covariance.
pub fn kernel_eval(a: &MaterialParams, b: &MaterialParams, k: &KernelParams, add_noise: bool) -> Result<f64> {
    check_dim(k.dim(), a.dim())?;
    check_dim(k.dim(), b.dim())?;
    let inv = k.inverse_length_scales();
    let d2: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(&inv)
        .map(|((x, y), il)| {
            let d = (x - y) * il;
            d * d
        })
        .sum();
    let mut v = k.signal_variance() * (-0.5 * d2).exp();
    if add_noise {
        v += k.noise();
    }
    Ok(v)
}

/// Training covariance: noise-free off-diagonals, `σ_f² + β⁻¹` on the
/// diagonal.
pub fn build_covariance(inputs: &[MaterialParams], k: &KernelParams) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(GmsError::InsufficientSamples {
            context: "covariance".into(),
            required: 1,
            actual: 0,
        });
    }
    for x in inputs {
        check_dim(k.dim(), x.dim())?;
    }
    let scaled = scale_inputs(inputs, &k.inverse_length_scales());
    let mut kmat = noise_free_covariance(&scaled, inputs.len(), k.dim(), k.signal_variance());
    let noise = k.noise();
    for i in 0..inputs.len() {
        kmat[(i, i)] += noise;
    }
    Ok(kmat)
}

/// Row-major `n × m` matrix of inputs divided by their length scales.
pub(crate) fn scale_inputs(inputs: &[MaterialParams], inv_ls: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(inputs.len() * inv_ls.len());
    for x in inputs {
        out.extend(x.as_slice().iter().zip(inv_ls).map(|(v, s)| v * s));
    }
    out
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub(crate) fn noise_free_covariance(scaled: &[f64], n: usize, m: usize, signal: f64) -> DMatrix<f64> {
    let mut kmat = DMatrix::zeros(n, n);
    for i in 0..n {
        let a = &scaled[i * m..(i + 1) * m];
        kmat[(i, i)] = signal;
        for j in 0..i {
            let b = &scaled[j * m..(j + 1) * m];
            let v = signal * (-0.5 * sq_dist(a, b)).exp();
            kmat[(i, j)] = v;
            kmat[(j, i)] = v;
        }
    }
    kmat
}
