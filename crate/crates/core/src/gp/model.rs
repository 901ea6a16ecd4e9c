use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{build_covariance, noise_free_covariance, scale_inputs, sq_dist, KernelParams};
use crate::error::{check_dim, GmsError, Result};
use crate::linalg::Factor;
use crate::material::MaterialParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Predictive mean and variance at one query point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// A Gaussian process over material scores, with its covariance factor and
/// `α = K⁻¹U` cached. Immutable once built; refitting produces a new model.
#[derive(Clone, Debug)]
pub struct PreferenceModel {
    inputs: Vec<MaterialParams>,
    scores: Vec<f64>,
    kernel: KernelParams,
    scaled: Vec<f64>,
    factor: Factor,
    alpha: DVector<f64>,
}

impl PreferenceModel {
    /// Conditions the GP on `inputs`/`scores` under fixed hyperparameters.
    pub fn new(inputs: Vec<MaterialParams>, scores: Vec<f64>, kernel: KernelParams) -> Result<Self> {
        if inputs.is_empty() {
            return Err(GmsError::InsufficientSamples {
                context: "preference model".into(),
                required: 1,
                actual: 0,
            });
        }
        check_dim(inputs.len(), scores.len())?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(GmsError::OutOfRange("scores must be finite".into()));
        }
        let kmat = build_covariance(&inputs, &kernel)?;
        let factor = Factor::new(&kmat)?;
        let alpha = factor.solve(&DVector::from_column_slice(&scores));
        let scaled = scale_inputs(&inputs, &kernel.inverse_length_scales());
        Ok(Self {
            inputs,
            scores,
            kernel,
            scaled,
            factor,
            alpha,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn inputs(&self) -> &[MaterialParams] {
        &self.inputs
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Diagonal jitter the factorization needed (0 in the normal case).
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn lower_factor(&self) -> DMatrix<f64> {
        self.factor.lower()
    }

    /// The covariance matrix actually factorized (including any jitter).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut k = noise_free_covariance(&self.scaled, self.n(), self.dim(), self.kernel.signal_variance());
        for i in 0..self.n() {
            k[(i, i)] += self.kernel.noise() + self.factor.jitter();
        }
        k
    }

    /// `−½UᵀK⁻¹U − ½ log|K| − (n/2) log 2π`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let u = DVector::from_column_slice(&self.scores);
        let fit = u.dot(&self.alpha);
        -0.5 * fit - 0.5 * self.factor.log_det() - 0.5 * self.n() as f64 * LN_2PI
    }

    /// Gradient of the log marginal likelihood with respect to the log
    /// hyperparameters `[ln σ_f², ln l_1 … ln l_m, ln β⁻¹]`, computed as
    /// `½ tr((ααᵀ − K⁻¹) ∂K/∂θ_j)`.
    pub fn likelihood_gradient(&self) -> Vec<f64> {
        let n = self.n();
        let m = self.dim();
        let signal = self.kernel.signal_variance();
        let kinv = self.factor.inverse();
        let kf = noise_free_covariance(&self.scaled, n, m, signal);

        // M = (ααᵀ − K⁻¹) ⊙ K_f
        let mut w = DMatrix::zeros(n, n);
        let mut trace_w = 0.0;
        for j in 0..n {
            for i in 0..n {
                let wij = self.alpha[i] * self.alpha[j] - kinv[(i, j)];
                if i == j {
                    trace_w += wij;
                }
                w[(i, j)] = wij * kf[(i, j)];
            }
        }
        let mut grad = Vec::with_capacity(m + 2);
        grad.push(0.5 * w.iter().sum::<f64>());

        // ½ Σ_ij M_ij (s_id − s_jd)² = Σ_i s_id² r_i − Σ_i s_id (MS)_id
        let s = DMatrix::from_row_slice(n, m, &self.scaled);
        let ms = &w * &s;
        let r: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
        for d in 0..m {
            let mut g = 0.0;
            for i in 0..n {
                let sid = s[(i, d)];
                g += sid * sid * r[i] - sid * ms[(i, d)];
            }
            grad.push(g);
        }
        grad.push(0.5 * self.kernel.noise() * trace_w);
        grad
    }

    fn cross_covariance(&self, x: &MaterialParams) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.dim())?;
        let m = self.dim();
        let inv = self.kernel.inverse_length_scales();
        let q: Vec<f64> = x.as_slice().iter().zip(&inv).map(|(v, s)| v * s).collect();
        let signal = self.kernel.signal_variance();
        Ok(DVector::from_iterator(
            self.n(),
            (0..self.n()).map(|i| signal * (-0.5 * sq_dist(&q, &self.scaled[i * m..(i + 1) * m])).exp()),
        ))
    }

    /// Posterior mean `k*ᵀα` and variance `k** − k*ᵀK⁻¹k*` (clamped at 0),
    /// with noise-free cross-covariances and `k** = σ_f² + β⁻¹`.
    pub fn predict(&self, x: &MaterialParams) -> Result<Prediction> {
        let ks = self.cross_covariance(x)?;
        // Same summation as the mean-only path, so both agree bit for bit.
        let mean = self.mean_unchecked(x.as_slice());
        let v = self.factor.solve_lower(&ks);
        let kss = self.kernel.signal_variance() + self.kernel.noise();
        Ok(Prediction {
            mean,
            variance: (kss - v.dot(&v)).max(0.0),
        })
    }

    /// Posterior mean only; O(n·m).
    pub fn predict_mean(&self, x: &MaterialParams) -> Result<f64> {
        check_dim(self.dim(), x.dim())?;
        Ok(self.mean_unchecked(x.as_slice()))
    }

    /// Posterior mean at an arbitrary real point, which may lie outside
    /// the unit cube (e.g. an unclamped latent back-projection).
    pub fn predict_mean_raw(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.mean_unchecked(x))
    }

    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        let m = self.dim();
        let inv = self.kernel.inverse_length_scales();
        let q: Vec<f64> = x.iter().zip(&inv).map(|(v, s)| v * s).collect();
        let signal = self.kernel.signal_variance();
        let mut sum = 0.0;
        for i in 0..self.n() {
            sum += self.alpha[i] * (-0.5 * sq_dist(&q, &self.scaled[i * m..(i + 1) * m])).exp();
        }
        signal * sum
    }

    pub fn to_document(&self) -> PreferenceDocument {
        PreferenceDocument {
            format: PREFERENCE_FORMAT.to_string(),
            m: self.dim(),
            n: self.n(),
            inputs: self.inputs.iter().map(|x| x.as_slice().to_vec()).collect(),
            scores: self.scores.clone(),
            log_hyperparameters: self.kernel.to_log(),
            noise: self.kernel.noise(),
        }
    }

    /// Rebuilds a model from its document; the factorization is recomputed.
    pub fn from_document(doc: &PreferenceDocument) -> Result<Self> {
        if doc.format != PREFERENCE_FORMAT {
            return Err(GmsError::Parse(format!("unsupported model format '{}'", doc.format)));
        }
        check_dim(doc.n, doc.inputs.len())?;
        check_dim(doc.n, doc.scores.len())?;
        check_dim(doc.m + 2, doc.log_hyperparameters.len())?;
        let kernel = KernelParams::from_log(&doc.log_hyperparameters)?;
        let rel = (kernel.noise() - doc.noise).abs() / doc.noise.abs().max(f64::MIN_POSITIVE);
        if rel > 1e-9 {
            return Err(GmsError::Parse("noise disagrees with log_hyperparameters".into()));
        }
        let inputs = doc
            .inputs
            .iter()
            .map(|x| {
                check_dim(doc.m, x.len())?;
                MaterialParams::new(x.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(inputs, doc.scores.clone(), kernel)
    }
}

pub const PREFERENCE_FORMAT: &str = "gms-preference v1";

/// Serialized form of a [`PreferenceModel`]. `log_hyperparameters` is
/// `[ln σ_f², ln l_1 … ln l_m, ln β⁻¹]`; `noise` repeats β⁻¹ in plain form
/// for readers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDocument {
    pub format: String,
    pub m: usize,
    pub n: usize,
    pub inputs: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub log_hyperparameters: Vec<f64>,
    pub noise: f64,
}
