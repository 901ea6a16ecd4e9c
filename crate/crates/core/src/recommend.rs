//! Gallery generation and threshold-controlled recommendations.
//!
//! Recommendations are drawn by rejection sampling the learned preference
//! function against a threshold τ. A proposal that falls short gets a few
//! greedy Gaussian hill-climbing steps before it is rejected.
//!
//! Each proposal owns its own random stream (stream `k` of the run seed), so
//! the k-th proposal follows the same path whatever τ is. That makes the
//! accepted set shrink monotonically as τ grows.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GmsError, Result};
use crate::gp::PreferenceModel;
use crate::material::{sample_uniform_with, MaterialParams, SampleRecord, MAX_SCORE};
use crate::seed;

/// Draws a gallery of `count` uniform materials from one stream seeded with
/// `seed`; the first item equals `sample_uniform(m, seed)`.
pub fn generate_gallery(count: usize, m: usize, seed: u64) -> Result<Vec<MaterialParams>> {
    if m == 0 {
        return Err(GmsError::InvalidDimension("m must be at least 1".into()));
    }
    let mut rng = seed::rng(seed);
    Ok((0..count).map(|_| sample_uniform_with(&mut rng, m)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationConfig {
    pub threshold: f64,
    pub count: usize,
    /// Maximum consecutive rejected proposals before giving up.
    pub budget: usize,
    pub hillclimb_steps: usize,
    pub hillclimb_sigma: f64,
    pub seed: u64,
}

impl Default for RecommendationConfig {
    fn default() -> Self {
        Self {
            threshold: 5.0,
            count: 300,
            budget: 10_000,
            hillclimb_steps: 10,
            hillclimb_sigma: 0.05,
            seed: 0,
        }
    }
}

impl RecommendationConfig {
    fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(GmsError::OutOfRange(format!("threshold {} must be >= 0", self.threshold)));
        }
        if self.count == 0 || self.budget == 0 {
            return Err(GmsError::OutOfRange("count and budget must be positive".into()));
        }
        if !(self.hillclimb_sigma > 0.0) {
            return Err(GmsError::OutOfRange("hill-climb sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub params: MaterialParams,
    /// Predicted score (posterior mean, floored at 0) when accepted.
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub items: Vec<Recommendation>,
    pub acceptance_rate: f64,
    pub proposals: usize,
    /// Proposals that needed hill climbing.
    pub hillclimb_invocations: usize,
}

impl RecommendationSet {
    /// Scored-sample records with the predicted score as the score field
    /// (capped at 10).
    pub fn to_records(&self) -> Vec<SampleRecord> {
        self.items
            .iter()
            .map(|r| SampleRecord {
                params: r.params.clone(),
                score: Some(r.predicted.min(MAX_SCORE)),
            })
            .collect()
    }
}

/// Scores are nonnegative, so a negative posterior mean counts as 0.
pub fn predicted_score(model: &PreferenceModel, x: &MaterialParams) -> Result<f64> {
    Ok(model.predict_mean(x)?.max(0.0))
}

struct Proposal {
    params: MaterialParams,
    score: f64,
    climbed: bool,
}

fn propose(model: &PreferenceModel, cfg: &RecommendationConfig, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> Proposal {
    let m = model.dim();
    let mut x = sample_uniform_with(rng, m);
    let mut score = model.mean_unchecked(x.as_slice()).max(0.0);
    let mut climbed = false;
    if score < cfg.threshold && cfg.hillclimb_steps > 0 {
        climbed = true;
        let mut candidate = vec![0.0; m];
        for _ in 0..cfg.hillclimb_steps {
            for (c, v) in candidate.iter_mut().zip(x.as_slice()) {
                *c = (v + normal.sample(rng)).clamp(0.0, 1.0);
            }
            let s = model.mean_unchecked(&candidate).max(0.0);
            if s > score {
                x = MaterialParams::clamped(&candidate);
                score = s;
                if score >= cfg.threshold {
                    break;
                }
            }
        }
    }
    Proposal { params: x, score, climbed }
}

/// Draws `config.count` materials whose predicted score clears the
/// threshold. Fails with [`GmsError::BudgetExhausted`], carrying the partial
/// result, when `config.budget` consecutive proposals are rejected.
pub fn recommend(model: &PreferenceModel, config: &RecommendationConfig) -> Result<RecommendationSet> {
    config.validate()?;
    let normal = Normal::new(0.0, config.hillclimb_sigma).expect("sigma validated");
    let mut items = Vec::with_capacity(config.count);
    let mut proposals = 0usize;
    let mut since_accept = 0usize;
    let mut climbs = 0usize;
    let base = seed::derive(config.seed, "recommend");
    while items.len() < config.count {
        if since_accept >= config.budget {
            let acceptance_rate = items.len() as f64 / proposals as f64;
            return Err(GmsError::BudgetExhausted {
                partial: Box::new(RecommendationSet {
                    items,
                    acceptance_rate,
                    proposals,
                    hillclimb_invocations: climbs,
                }),
            });
        }
        let mut rng = seed::rng(base);
        rng.set_stream(proposals as u64);
        proposals += 1;
        since_accept += 1;
        let p = propose(model, config, &mut rng, &normal);
        if p.climbed {
            climbs += 1;
        }
        if p.score >= config.threshold {
            items.push(Recommendation {
                params: p.params,
                predicted: p.score,
            });
            since_accept = 0;
        }
    }
    Ok(RecommendationSet {
        acceptance_rate: items.len() as f64 / proposals as f64,
        items,
        proposals,
        hillclimb_invocations: climbs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub acceptance_rate: f64,
    pub mean_predicted: f64,
    pub accepted: usize,
    /// The budget ran out before `count` items were accepted.
    pub exhausted: bool,
}

/// Runs [`recommend`] once per threshold with the same seed and reports the
/// acceptance statistics. Budget exhaustion is reported in the row.
pub fn threshold_sweep(
    model: &PreferenceModel,
    thresholds: &[f64],
    count: usize,
    base: &RecommendationConfig,
) -> Result<Vec<SweepRow>> {
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(GmsError::OutOfRange("thresholds must be sorted ascending".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let cfg = RecommendationConfig {
                threshold: t,
                count,
                ..base.clone()
            };
            let (set, exhausted) = match recommend(model, &cfg) {
                Ok(set) => (set, false),
                Err(GmsError::BudgetExhausted { partial }) => (*partial, true),
                Err(e) => return Err(e),
            };
            let mean_predicted = if set.items.is_empty() {
                f64::NAN
            } else {
                set.items.iter().map(|r| r.predicted).sum::<f64>() / set.items.len() as f64
            };
            Ok(SweepRow {
                threshold: t,
                acceptance_rate: set.acceptance_rate,
                mean_predicted,
                accepted: set.items.len(),
                exhausted,
            })
        })
        .collect()
}
