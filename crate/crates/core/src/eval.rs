//! Jensen–Shannon evaluation of learned preference functions and the
//! optimizer-comparison experiment.
//!
//! The learned and ground-truth preference functions are compared on a
//! finite held-out set: both are clamped at zero, normalized into discrete
//! distributions over that set, and their JSD (natural log, so in
//! `[0, ln 2]`) is reported.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, GmsError, Result};
use crate::gp::{FitResult, Frozen, KernelParams, Optimizer, PreferenceModel};
use crate::material::{preset_user, sample_uniform_with, MaterialParams, SyntheticUser};
use crate::seed;

/// Weights over a finite support; nonnegative and summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
    support: Option<[u8; 32]>,
}

impl DiscreteDistribution {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Normalizes scores (negative values clamped to 0) into a distribution.
pub fn normalize(scores: &[f64]) -> Result<DiscreteDistribution> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(GmsError::UndefinedDistribution("non-finite score".into()));
    }
    let clamped: Vec<f64> = scores.iter().map(|s| s.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(GmsError::UndefinedDistribution(
            "all scores are zero; nothing to normalize".into(),
        ));
    }
    Ok(DiscreteDistribution {
        weights: clamped.iter().map(|s| s / total).collect(),
        support: None,
    })
}

/// Like [`normalize`], but remembers which samples the scores belong to so
/// that [`jsd`] can refuse to compare distributions over different sets.
pub fn normalize_over(support: &[MaterialParams], scores: &[f64]) -> Result<DiscreteDistribution> {
    check_dim(support.len(), scores.len())?;
    let mut d = normalize(scores)?;
    let mut h = Sha256::new();
    for x in support {
        for v in x.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(b";");
    }
    d.support = Some(h.finalize().into());
    Ok(d)
}

/// Jensen–Shannon divergence in nats.
pub fn jsd(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(GmsError::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    if let (Some(a), Some(b)) = (&p.support, &q.support) {
        if a != b {
            return Err(GmsError::UndefinedDistribution(
                "distributions are over different sample sets".into(),
            ));
        }
    }
    let term = |w: f64, mid: f64| if w > 0.0 { w * (w / mid).ln() } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in p.weights.iter().zip(&q.weights) {
        let mid = 0.5 * (a + b);
        // Paired so that swapping the arguments gives the same bits.
        total += 0.5 * (term(a, mid) + term(b, mid));
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

/// JSD between a model's clamped predictions and the oracle's scores on a
/// held-out set.
///
/// A model that predicts nothing positive anywhere on the set has no
/// distribution to compare; it is scored `ln 2`, the worst possible value.
/// An all-zero `truth` is still an error.
pub fn model_jsd(model: &PreferenceModel, held_out: &[MaterialParams], truth: &[f64]) -> Result<f64> {
    let predicted = held_out
        .iter()
        .map(|x| model.predict_mean(x))
        .collect::<Result<Vec<_>>>()?;
    let truth = normalize_over(held_out, truth)?;
    if predicted.iter().all(|v| *v <= 0.0) {
        return Ok(std::f64::consts::LN_2);
    }
    jsd(&normalize_over(held_out, &predicted)?, &truth)
}

/// Oracle-scored training pool and held-out set.
#[derive(Clone, Debug)]
pub struct ScoredSplit {
    pub train: Vec<MaterialParams>,
    pub train_scores: Vec<f64>,
    pub held_out: Vec<MaterialParams>,
    pub held_out_scores: Vec<f64>,
}

impl ScoredSplit {
    /// Draws `train + held_out` uniform samples in one stream and scores
    /// them with `user`; the first `train` form the training pool.
    pub fn generate(user: &SyntheticUser, train: usize, held_out: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let m = user.dim();
        let all: Vec<MaterialParams> = (0..train + held_out).map(|_| sample_uniform_with(&mut rng, m)).collect();
        let scores = all.iter().map(|x| user.score(x)).collect::<Result<Vec<_>>>()?;
        let (tr, ho) = all.split_at(train);
        let (trs, hos) = scores.split_at(train);
        Ok(Self {
            train: tr.to_vec(),
            train_scores: trs.to_vec(),
            held_out: ho.to_vec(),
            held_out_scores: hos.to_vec(),
        })
    }

    pub fn fit_first(&self, n: usize, optimizer: Optimizer, init: &KernelParams, frozen: Frozen) -> Result<FitResult> {
        if n > self.train.len() {
            return Err(GmsError::InsufficientSamples {
                context: "training pool".into(),
                required: n,
                actual: self.train.len(),
            });
        }
        optimizer.fit(self.train[..n].to_vec(), self.train_scores[..n].to_vec(), init, frozen)
    }

    pub fn jsd_of(&self, model: &PreferenceModel) -> Result<f64> {
        model_jsd(model, &self.held_out, &self.held_out_scores)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub oracles: Vec<String>,
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    pub optimizers: Vec<Optimizer>,
    pub held_out: usize,
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            oracles: vec!["glassy".into()],
            ms: vec![19, 38],
            ns: vec![150, 250, 500],
            optimizers: vec![Optimizer::Rprop, Optimizer::GradientAscent],
            held_out: 750,
            seed: 2018,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub oracle: String,
    pub m: usize,
    pub n: usize,
    pub optimizer: Optimizer,
    /// NaN when the fit failed (see `error`).
    pub jsd: f64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn find(&self, oracle: &str, m: usize, n: usize, optimizer: Optimizer) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.oracle == oracle && r.m == m && r.n == n && r.optimizer == optimizer)
    }

    /// Comma-separated text with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("oracle,m,n,optimizer,jsd,wall_time_s,error\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{:.6},{:.3},{}",
                r.oracle,
                r.m,
                r.n,
                r.optimizer.name(),
                r.jsd,
                r.wall_time_s,
                r.error.as_deref().unwrap_or("").replace(',', ";")
            )
            .unwrap();
        }
        s
    }
}

/// For every (oracle, m), draws a training pool of `max(ns)` samples plus a
/// fixed held-out set, then for every (n, optimizer) fits on the first `n`
/// pool samples from the wide prior and reports the held-out JSD. Rows
/// follow the input grid order.
pub fn run_comparison(config: &ComparisonConfig) -> Result<ExperimentReport> {
    let max_n = config.ns.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for oracle in &config.oracles {
        for &m in &config.ms {
            let user = preset_user(oracle, m)?;
            let split = ScoredSplit::generate(
                &user,
                max_n,
                config.held_out,
                seed::derive(config.seed, &format!("table2/{oracle}/{m}")),
            )?;
            for &n in &config.ns {
                for &optimizer in &config.optimizers {
                    let start = Instant::now();
                    let outcome = split
                        .fit_first(n, optimizer, &KernelParams::wide_prior(m), Frozen::default())
                        .and_then(|fit| split.jsd_of(&fit.model));
                    let wall_time_s = start.elapsed().as_secs_f64();
                    let (jsd, error) = match outcome {
                        Ok(j) => (j, None),
                        Err(e) => (f64::NAN, Some(e.to_string())),
                    };
                    log::info!("table2 {oracle} m={m} n={n} {}: jsd={jsd:.4} ({wall_time_s:.1}s)", optimizer.name());
                    rows.push(ReportRow {
                        oracle: oracle.clone(),
                        m,
                        n,
                        optimizer,
                        jsd,
                        wall_time_s,
                        error,
                    });
                }
            }
        }
    }
    Ok(ExperimentReport { rows })
}
