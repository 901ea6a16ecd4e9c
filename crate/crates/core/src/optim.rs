//! Sign-based step adaptation (iRprop−) and a fixed-step gradient ascent
//! baseline, both maximizing an objective over an unconstrained parameter
//! vector.
//!
//! The rprop driver only accepts steps that do not lower the objective. A
//! rejected step is undone, the step sizes of the coordinates it moved are
//! shrunk by `eta_minus` and their stored gradients are cleared, exactly as
//! on a sign change. Accepted objective values therefore never decrease.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpropConfig {
    pub max_iters: usize,
    pub delta0: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            delta0: 0.1,
            delta_min: 1e-6,
            delta_max: 50.0,
            eta_plus: 1.2,
            eta_minus: 0.5,
        }
    }
}

/// Per-coordinate iRprop− state.
#[derive(Clone, Debug)]
pub struct Rprop {
    cfg: RpropConfig,
    deltas: Vec<f64>,
    prev_grad: Vec<f64>,
}

impl Rprop {
    pub fn new(dim: usize, cfg: RpropConfig) -> Self {
        Self {
            deltas: vec![cfg.delta0; dim],
            prev_grad: vec![0.0; dim],
            cfg,
        }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Consumes the gradient at the current point and returns the ascent step.
    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        let c = &self.cfg;
        let mut step = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let mut g = grad[i];
            let p = g * self.prev_grad[i];
            if p > 0.0 {
                self.deltas[i] = (self.deltas[i] * c.eta_plus).min(c.delta_max);
            } else if p < 0.0 {
                self.deltas[i] = (self.deltas[i] * c.eta_minus).max(c.delta_min);
                g = 0.0;
            }
            step[i] = sign(g) * self.deltas[i];
            self.prev_grad[i] = g;
        }
        step
    }

    /// Undoes the bookkeeping of a step that lowered the objective.
    pub fn reject(&mut self, step: &[f64]) {
        for (i, s) in step.iter().enumerate() {
            if *s != 0.0 {
                self.deltas[i] = (self.deltas[i] * self.cfg.eta_minus).max(self.cfg.delta_min);
                self.prev_grad[i] = 0.0;
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Result of a maximization run.
#[derive(Clone, Debug)]
pub struct Trace {
    pub params: Vec<f64>,
    pub value: f64,
    /// Objective value at the start and after each accepted step.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub rejected: usize,
}

/// Maximizes `eval` (returning value and gradient) with iRprop−. Coordinates
/// whose `mask` entry is false are held fixed.
pub fn maximize_rprop<F>(theta0: Vec<f64>, mask: &[bool], cfg: &RpropConfig, mut eval: F) -> Result<Trace>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = eval(&theta0)?;
    let mut theta = theta0;
    let mut trajectory = vec![value];
    let mut rprop = Rprop::new(theta.len(), cfg.clone());
    let mut rejected = 0;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        apply_mask(&mut grad, mask);
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        iterations += 1;
        let step = rprop.step(&grad);
        if step.iter().all(|s| *s == 0.0) {
            continue;
        }
        let candidate: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
        match eval(&candidate) {
            Ok((v, g)) if v.is_finite() && v >= value => {
                theta = candidate;
                value = v;
                grad = g;
                trajectory.push(value);
            }
            _ => {
                rprop.reject(&step);
                rejected += 1;
                if rprop.deltas().iter().zip(mask).all(|(d, m)| !m || *d <= cfg.delta_min) {
                    break;
                }
            }
        }
    }
    Ok(Trace {
        params: theta,
        value,
        trajectory,
        iterations,
        rejected,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientAscentConfig {
    pub max_iters: usize,
    pub step: f64,
}

impl Default for GradientAscentConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step: 1e-2,
        }
    }
}

/// Plain fixed-step gradient ascent. Every step is taken; the best point
/// visited is returned. A step landing on a point that cannot be evaluated
/// ends the run.
pub fn maximize_gradient_ascent<F>(
    theta0: Vec<f64>,
    mask: &[bool],
    cfg: &GradientAscentConfig,
    mut eval: F,
) -> Result<Trace>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = eval(&theta0)?;
    let mut theta = theta0;
    let mut best = (theta.clone(), value);
    let mut trajectory = vec![value];
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        apply_mask(&mut grad, mask);
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        iterations += 1;
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += cfg.step * g;
        }
        match eval(&theta) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
                value = v;
                grad = g;
                trajectory.push(value);
                if value > best.1 {
                    best = (theta.clone(), value);
                }
            }
            _ => break,
        }
    }
    Ok(Trace {
        params: best.0,
        value: best.1,
        trajectory,
        iterations,
        rejected: 0,
    })
}

fn apply_mask(grad: &mut [f64], mask: &[bool]) {
    for (g, m) in grad.iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
}
