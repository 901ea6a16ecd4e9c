//! Two-dimensional latent embedding of high-scoring materials.
//!
//! Each of the `m` material coordinates is modelled as an independent
//! zero-mean GP over a shared 2-D latent space with an isotropic
//! squared-exponential kernel. The latent positions and the kernel are
//! fitted jointly by maximizing
//!
//! ```text
//! log p(X | L) = −(m/2)·log|K| − ½·tr(K⁻¹XXᵀ) − (zm/2)·log 2π
//! ```
//!
//! starting from a PCA embedding. A latent point maps back to a material
//! through the GP posterior mean `k*ᵀK⁻¹X`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmsError, Result};
use crate::linalg::Factor;
use crate::material::MaterialParams;
use crate::optim::{maximize_rprop, RpropConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub type LatentPoint = [f64; 2];

/// Isotropic kernel over the latent plane, stored in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentKernel {
    log_signal_variance: f64,
    log_length_scale: f64,
    log_noise: f64,
}

impl LatentKernel {
    pub fn new(signal_variance: f64, length_scale: f64, noise: f64) -> Result<Self> {
        for (name, v) in [("signal variance", signal_variance), ("length scale", length_scale), ("noise", noise)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GmsError::OutOfRange(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            log_signal_variance: signal_variance.ln(),
            log_length_scale: length_scale.ln(),
            log_noise: noise.ln(),
        })
    }

    pub fn from_log(theta: [f64; 3]) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(GmsError::OutOfRange("log hyperparameters must be finite".into()));
        }
        Ok(Self {
            log_signal_variance: theta[0],
            log_length_scale: theta[1],
            log_noise: theta[2],
        })
    }

    pub fn to_log(&self) -> [f64; 3] {
        [self.log_signal_variance, self.log_length_scale, self.log_noise]
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn length_scale(&self) -> f64 {
        self.log_length_scale.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    fn eval(&self, a: &LatentPoint, b: &LatentPoint) -> f64 {
        let l = self.length_scale();
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        self.signal_variance() * (-0.5 * d2 / (l * l)).exp()
    }
}

impl Default for LatentKernel {
    fn default() -> Self {
        Self::new(1.0, 1.0, 0.05).expect("valid constants")
    }
}

fn to_matrix(rows: &[MaterialParams]) -> DMatrix<f64> {
    let m = rows[0].dim();
    DMatrix::from_fn(rows.len(), m, |i, j| rows[i].get(j))
}

fn check_rows(rows: &[MaterialParams]) -> Result<()> {
    if rows.len() < 2 {
        return Err(GmsError::InsufficientSamples {
            context: "latent embedding".into(),
            required: 2,
            actual: rows.len(),
        });
    }
    let m = rows[0].dim();
    for r in rows {
        check_dim(m, r.dim())?;
    }
    Ok(())
}

/// Projects the mean-centered rows onto their top two principal directions.
/// Each direction's sign is fixed so its largest-magnitude entry is positive.
pub fn pca_init(rows: &[MaterialParams]) -> Result<Vec<LatentPoint>> {
    check_rows(rows)?;
    let x = to_matrix(rows);
    let z = x.nrows();
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(z, x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (z - 1) as f64;
    if cov.iter().all(|v| v.abs() <= f64::EPSILON) {
        return Err(GmsError::DegenerateData("all rows are identical".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut out = vec![[0.0; 2]; z];
    for (k, &col) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(col).into_owned();
        let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if lead < 0.0 {
            v.neg_mut();
        }
        let proj = &centered * v;
        for i in 0..z {
            out[i][k] = proj[i];
        }
    }
    Ok(out)
}

/// Fitted latent model with `K⁻¹X` cached.
#[derive(Clone, Debug)]
pub struct LatentModel {
    observed: Vec<MaterialParams>,
    latents: Vec<LatentPoint>,
    kernel: LatentKernel,
    factor: Factor,
    alpha: DMatrix<f64>,
}

/// Back-projection of a latent point.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Posterior mean clamped to `[0, 1]`.
    pub params: MaterialParams,
    pub raw: Vec<f64>,
    /// Posterior variance, shared by every coordinate.
    pub variance: f64,
}

impl LatentModel {
    pub fn new(observed: Vec<MaterialParams>, latents: Vec<LatentPoint>, kernel: LatentKernel) -> Result<Self> {
        check_rows(&observed)?;
        check_dim(observed.len(), latents.len())?;
        if latents.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GmsError::OutOfRange("latent coordinates must be finite".into()));
        }
        let factor = Factor::new(&Self::covariance_of(&latents, &kernel))?;
        let alpha = factor.solve_matrix(&to_matrix(&observed));
        Ok(Self {
            observed,
            latents,
            kernel,
            factor,
            alpha,
        })
    }

    fn covariance_of(latents: &[LatentPoint], kernel: &LatentKernel) -> DMatrix<f64> {
        let z = latents.len();
        let mut k = DMatrix::from_fn(z, z, |i, j| kernel.eval(&latents[i], &latents[j]));
        for i in 0..z {
            k[(i, i)] += kernel.noise();
        }
        k
    }

    pub fn z(&self) -> usize {
        self.observed.len()
    }

    pub fn dim(&self) -> usize {
        self.observed[0].dim()
    }

    pub fn observed(&self) -> &[MaterialParams] {
        &self.observed
    }

    pub fn latents(&self) -> &[LatentPoint] {
        &self.latents
    }

    pub fn kernel(&self) -> &LatentKernel {
        &self.kernel
    }

    pub fn log_likelihood(&self) -> f64 {
        let m = self.dim() as f64;
        let z = self.z() as f64;
        let x = to_matrix(&self.observed);
        let fit = x.component_mul(&self.alpha).sum();
        -0.5 * m * self.factor.log_det() - 0.5 * fit - 0.5 * z * m * LN_2PI
    }

    /// Gradient of [`log_likelihood`](Self::log_likelihood) with respect to
    /// the latent coordinates (row-major, `2z` entries) followed by the log
    /// kernel hyperparameters.
    pub fn gradient(&self) -> Vec<f64> {
        let z = self.z();
        let m = self.dim() as f64;
        // dL/dK = ½W with W = ααᵀ − m·K⁻¹.
        let w = &self.alpha * self.alpha.transpose() - self.factor.inverse() * m;
        let ell2 = self.kernel.length_scale().powi(2);
        let mut grad = vec![0.0; 2 * z + 3];
        let (mut g_sf, mut g_ell) = (0.0, 0.0);
        for i in 0..z {
            for j in 0..z {
                let li = &self.latents[i];
                let lj = &self.latents[j];
                let kf = self.kernel.eval(li, lj);
                let d = [li[0] - lj[0], li[1] - lj[1]];
                let wk = w[(i, j)] * kf;
                g_sf += 0.5 * wk;
                g_ell += 0.5 * wk * (d[0] * d[0] + d[1] * d[1]) / ell2;
                // K_ij and K_ji both move with l_i, which cancels the ½.
                grad[2 * i] -= wk * d[0] / ell2;
                grad[2 * i + 1] -= wk * d[1] / ell2;
            }
        }
        grad[2 * z] = g_sf;
        grad[2 * z + 1] = g_ell;
        grad[2 * z + 2] = 0.5 * w.trace() * self.kernel.noise();
        grad
    }

    /// Maps a latent point to material space.
    pub fn project(&self, point: &LatentPoint) -> Projection {
        let kstar = DVector::from_iterator(self.z(), self.latents.iter().map(|l| self.kernel.eval(l, point)));
        let raw: Vec<f64> = (self.alpha.transpose() * &kstar).iter().copied().collect();
        let v = self.factor.solve_lower(&kstar);
        let variance = (self.kernel.signal_variance() + self.kernel.noise() - v.norm_squared()).max(0.0);
        Projection {
            params: MaterialParams::clamped(&raw),
            raw,
            variance,
        }
    }

    /// Bounding box of the training latents `(min, max)`.
    pub fn bounds(&self) -> (LatentPoint, LatentPoint) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for l in &self.latents {
            for a in 0..2 {
                lo[a] = lo[a].min(l[a]);
                hi[a] = hi[a].max(l[a]);
            }
        }
        (lo, hi)
    }

    pub fn to_document(&self) -> LatentDocument {
        LatentDocument {
            format: LATENT_FORMAT.into(),
            m: self.dim(),
            z: self.z(),
            observed: self.observed.clone(),
            latents: self.latents.clone(),
            log_hyperparameters: self.kernel.to_log(),
            noise: self.kernel.noise(),
        }
    }

    pub fn from_document(doc: &LatentDocument) -> Result<Self> {
        if doc.format != LATENT_FORMAT {
            return Err(GmsError::Parse(format!("unsupported latent model format {:?}", doc.format)));
        }
        check_dim(doc.z, doc.observed.len())?;
        let kernel = LatentKernel::from_log(doc.log_hyperparameters)?;
        if (kernel.noise() - doc.noise).abs() > 1e-12 * doc.noise.abs().max(1e-300) {
            return Err(GmsError::Parse("noise disagrees with the log hyperparameters".into()));
        }
        let model = Self::new(doc.observed.clone(), doc.latents.clone(), kernel)?;
        check_dim(doc.m, model.dim())?;
        Ok(model)
    }
}

pub const LATENT_FORMAT: &str = "gms-latent v1";

/// Serialized latent model; the factorization is rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDocument {
    pub format: String,
    pub m: usize,
    pub z: usize,
    pub observed: Vec<MaterialParams>,
    pub latents: Vec<LatentPoint>,
    pub log_hyperparameters: [f64; 3],
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GplvmConfig {
    pub rprop: RpropConfig,
    pub init: LatentKernel,
    pub freeze_noise: bool,
}

impl Default for GplvmConfig {
    fn default() -> Self {
        Self {
            rprop: RpropConfig::default(),
            init: LatentKernel::default(),
            freeze_noise: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatentFit {
    pub model: LatentModel,
    /// Log-likelihood at the PCA start and after each accepted step.
    pub trajectory: Vec<f64>,
}

impl LatentFit {
    pub fn initial_log_likelihood(&self) -> f64 {
        self.trajectory[0]
    }
}

/// Fits latent positions and kernel jointly, starting from [`pca_init`].
pub fn fit_gplvm(rows: Vec<MaterialParams>, config: &GplvmConfig) -> Result<LatentFit> {
    let init = pca_init(&rows)?;
    let z = rows.len();
    let mut theta: Vec<f64> = init.iter().flatten().copied().collect();
    theta.extend(config.init.to_log());
    let mut mask = vec![true; theta.len()];
    mask[2 * z + 2] = !config.freeze_noise;
    let unpack = |theta: &[f64]| -> Result<(Vec<LatentPoint>, LatentKernel)> {
        let latents = theta[..2 * z].chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let kernel = LatentKernel::from_log([theta[2 * z], theta[2 * z + 1], theta[2 * z + 2]])?;
        Ok((latents, kernel))
    };
    let trace = maximize_rprop(theta, &mask, &config.rprop, |theta| {
        let (latents, kernel) = unpack(theta)?;
        let model = LatentModel::new(rows.clone(), latents, kernel)?;
        Ok((model.log_likelihood(), model.gradient()))
    })?;
    let (latents, kernel) = unpack(&trace.params)?;
    Ok(LatentFit {
        model: LatentModel::new(rows, latents, kernel)?,
        trajectory: trace.trajectory,
    })
}
