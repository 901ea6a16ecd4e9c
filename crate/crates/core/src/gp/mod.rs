//! Gaussian process regression of material preferences.
//!
//! Scores are modelled as a zero-mean GP with an ARD squared-exponential
//! kernel. Hyperparameters are chosen by maximizing the log marginal
//! likelihood in log space, by default with iRprop−.

mod fit;
mod kernel;
mod model;

pub use fit::{
    fit_gradient_ascent, fit_rprop, FitResult, Frozen, GradientAscentFitConfig, Optimizer, RpropFitConfig,
};
pub use kernel::{build_covariance, kernel_eval, KernelParams};
pub use model::{Prediction, PreferenceDocument, PreferenceModel, PREFERENCE_FORMAT};
