use serde::{Deserialize, Serialize};

use super::kernel::KernelParams;
use super::model::PreferenceModel;
use crate::error::{check_dim, GmsError, Result};
use crate::material::MaterialParams;
use crate::optim::{maximize_gradient_ascent, maximize_rprop, GradientAscentConfig, RpropConfig, Trace};

/// Which hyperparameter groups are held at their initial values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frozen {
    pub signal_variance: bool,
    pub length_scales: bool,
    pub noise: bool,
}

impl Frozen {
    fn mask(&self, m: usize) -> Vec<bool> {
        let mut mask = Vec::with_capacity(m + 2);
        mask.push(!self.signal_variance);
        mask.extend(std::iter::repeat_n(!self.length_scales, m));
        mask.push(!self.noise);
        mask
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RpropFitConfig {
    pub rprop: RpropConfig,
    pub frozen: Frozen,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientAscentFitConfig {
    pub ascent: GradientAscentConfig,
    pub frozen: Frozen,
}

/// A fitted model with the log-likelihood trajectory of the run.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: PreferenceModel,
    /// Log marginal likelihood at the initial hyperparameters and after each
    /// step taken.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
}

impl FitResult {
    pub fn initial_log_likelihood(&self) -> f64 {
        self.trajectory[0]
    }
}

fn check_inputs(inputs: &[MaterialParams], scores: &[f64], init: &KernelParams) -> Result<()> {
    if inputs.len() < 2 {
        return Err(GmsError::InsufficientSamples {
            context: "hyperparameter fit".into(),
            required: 2,
            actual: inputs.len(),
        });
    }
    check_dim(inputs.len(), scores.len())?;
    for x in inputs {
        check_dim(init.dim(), x.dim())?;
    }
    Ok(())
}

fn objective<'a>(
    inputs: &'a [MaterialParams],
    scores: &'a [f64],
) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a {
    move |theta| {
        let model = PreferenceModel::new(inputs.to_vec(), scores.to_vec(), KernelParams::from_log(theta)?)?;
        Ok((model.log_marginal_likelihood(), model.likelihood_gradient()))
    }
}

fn finish(inputs: Vec<MaterialParams>, scores: Vec<f64>, trace: Trace) -> Result<FitResult> {
    let model = PreferenceModel::new(inputs, scores, KernelParams::from_log(&trace.params)?)?;
    Ok(FitResult {
        model,
        trajectory: trace.trajectory,
        iterations: trace.iterations,
    })
}

/// Maximizes the log marginal likelihood over the log hyperparameters with
/// iRprop−.
pub fn fit_rprop(
    inputs: Vec<MaterialParams>,
    scores: Vec<f64>,
    init: &KernelParams,
    config: &RpropFitConfig,
) -> Result<FitResult> {
    check_inputs(&inputs, &scores, init)?;
    let mask = config.frozen.mask(init.dim());
    let trace = maximize_rprop(init.to_log(), &mask, &config.rprop, objective(&inputs, &scores))?;
    finish(inputs, scores, trace)
}

/// Fixed-step gradient ascent on the same objective; the comparison
/// baseline for [`fit_rprop`].
pub fn fit_gradient_ascent(
    inputs: Vec<MaterialParams>,
    scores: Vec<f64>,
    init: &KernelParams,
    config: &GradientAscentFitConfig,
) -> Result<FitResult> {
    check_inputs(&inputs, &scores, init)?;
    let mask = config.frozen.mask(init.dim());
    let trace = maximize_gradient_ascent(init.to_log(), &mask, &config.ascent, objective(&inputs, &scores))?;
    finish(inputs, scores, trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Rprop,
    GradientAscent,
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Rprop => "rprop",
            Optimizer::GradientAscent => "gradient-ascent",
        }
    }

    pub fn fit(
        &self,
        inputs: Vec<MaterialParams>,
        scores: Vec<f64>,
        init: &KernelParams,
        frozen: Frozen,
    ) -> Result<FitResult> {
        match self {
            Optimizer::Rprop => fit_rprop(
                inputs,
                scores,
                init,
                &RpropFitConfig {
                    frozen,
                    ..Default::default()
                },
            ),
            Optimizer::GradientAscent => fit_gradient_ascent(
                inputs,
                scores,
                init,
                &GradientAscentFitConfig {
                    frozen,
                    ..Default::default()
                },
            ),
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = GmsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rprop" => Ok(Optimizer::Rprop),
            "gradient-ascent" | "ga" => Ok(Optimizer::GradientAscent),
            other => Err(GmsError::Parse(format!("unknown optimizer '{other}'"))),
        }
    }
}
