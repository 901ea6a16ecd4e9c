//! A scoring session: accumulated samples, the models fitted from them and
//! the end-to-end recommendation and latent-map pipeline.

use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::decoder::{read_network, write_network, DecoderNetwork};
use crate::error::{check_dim, GmsError, Result};
use crate::gp::{KernelParams, Optimizer, PreferenceDocument, PreferenceModel};
use crate::gplvm::{fit_gplvm, GplvmConfig, LatentDocument, LatentModel};
use crate::maps::{
    combined_product, preference_map, similarity_map, LatentGrid, DEFAULT_PREFERENCE_RES, DEFAULT_SIMILARITY_RES,
};
use crate::material::{MaterialParams, PreferenceSample, SampleRecord};
use crate::recommend::{recommend, RecommendationConfig, RecommendationSet};
use crate::seed;

pub const SESSION_FORMAT: &str = "gms-session v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub threshold: f64,
    pub recommendation_count: usize,
    pub preference_res: usize,
    pub similarity_res: usize,
    /// Largest number of high-scoring samples embedded in the latent plane.
    pub latent_count: usize,
    pub optimizer: Optimizer,
    pub freeze_noise: bool,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            threshold: 5.0,
            recommendation_count: 300,
            preference_res: DEFAULT_PREFERENCE_RES,
            similarity_res: DEFAULT_SIMILARITY_RES,
            latent_count: 16,
            optimizer: Optimizer::Rprop,
            freeze_noise: false,
            seed: 0,
        }
    }
}

/// Output of one pass of the full pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmsRun {
    pub threshold: f64,
    pub recommendations: RecommendationSet,
    /// The material being fine-tuned: the best-scored embedded sample.
    pub reference: MaterialParams,
    pub latent: LatentDocument,
    pub preference: LatentGrid,
    pub similarity: LatentGrid,
    pub product: LatentGrid,
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    m: usize,
    samples: Vec<PreferenceSample>,
    pub config: SessionConfig,
    preference: Option<Arc<PreferenceModel>>,
    latent: Option<Arc<LatentModel>>,
    decoder: Option<Arc<DecoderNetwork>>,
    /// Bumped whenever the samples change.
    sample_generation: u64,
    /// Bumped on every model (re)fit.
    fit_generation: u64,
    /// Sample generation each model was fitted from.
    preference_source: Option<u64>,
    latent_source: Option<u64>,
}

impl Session {
    pub fn new(id: impl Into<String>, m: usize, config: SessionConfig) -> Result<Self> {
        if m == 0 {
            return Err(GmsError::InvalidDimension("m must be at least 1".into()));
        }
        Ok(Self {
            id: id.into(),
            m,
            samples: Vec::new(),
            config,
            preference: None,
            latent: None,
            decoder: None,
            sample_generation: 0,
            fit_generation: 0,
            preference_source: None,
            latent_source: None,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[PreferenceSample] {
        &self.samples
    }

    pub fn fit_generation(&self) -> u64 {
        self.fit_generation
    }

    pub fn sample_generation(&self) -> u64 {
        self.sample_generation
    }

    pub fn preference(&self) -> Option<&Arc<PreferenceModel>> {
        self.preference.as_ref()
    }

    pub fn latent(&self) -> Option<&Arc<LatentModel>> {
        self.latent.as_ref()
    }

    pub fn decoder(&self) -> Option<&Arc<DecoderNetwork>> {
        self.decoder.as_ref()
    }

    /// Whether the preference model reflects the current samples.
    pub fn preference_is_current(&self) -> bool {
        self.preference_source == Some(self.sample_generation)
    }

    /// Whether the latent model reflects the current samples.
    pub fn latent_is_current(&self) -> bool {
        self.latent_source == Some(self.sample_generation)
    }

    pub fn set_decoder(&mut self, net: Arc<DecoderNetwork>) -> Result<()> {
        check_dim(self.m, net.input_len())?;
        self.decoder = Some(net);
        Ok(())
    }

    /// A gallery for scoring round `round`, drawn from the session seed.
    pub fn gallery(&self, count: usize, round: u64) -> Result<Vec<MaterialParams>> {
        let s = seed::derive_indexed(self.config.seed, "gallery", round);
        crate::recommend::generate_gallery(count, self.m, s)
    }

    /// Adds scored samples. Re-scoring a material already present replaces
    /// its score instead of adding a duplicate.
    pub fn add_scores(&mut self, scored: Vec<PreferenceSample>) -> Result<usize> {
        for s in &scored {
            check_dim(self.m, s.params.dim())?;
        }
        for s in scored {
            match self.samples.iter_mut().find(|old| old.params == s.params) {
                Some(old) => old.score = s.score,
                None => self.samples.push(s),
            }
        }
        self.sample_generation += 1;
        Ok(self.samples.len())
    }

    /// Fits a new preference model from the wide prior on every sample.
    pub fn fit_preference(&mut self) -> Result<Arc<PreferenceModel>> {
        let model = Arc::new(fit_preference_model(&self.samples, self.m, &self.config)?);
        self.install_preference(model.clone(), self.sample_generation);
        Ok(model)
    }

    pub(crate) fn install_preference(&mut self, model: Arc<PreferenceModel>, source: u64) {
        self.preference = Some(model);
        self.preference_source = Some(source);
        self.fit_generation += 1;
    }

    /// Embeds the samples scoring above `threshold` (best first, at most
    /// `latent_count` of them).
    pub fn fit_latent(&mut self, threshold: f64) -> Result<Arc<LatentModel>> {
        let model = Arc::new(fit_latent_model(&self.samples, threshold, self.config.latent_count)?);
        self.install_latent(model.clone(), self.sample_generation);
        Ok(model)
    }

    pub(crate) fn install_latent(&mut self, model: Arc<LatentModel>, source: u64) {
        self.latent = Some(model);
        self.latent_source = Some(source);
        self.fit_generation += 1;
    }

    /// Runs the whole pipeline: fit preferences, recommend above `threshold`,
    /// embed the high scorers, and build the preference, similarity and
    /// product grids around the best one (preference grid at `r`).
    pub fn run_gms(&mut self, threshold: f64, r: usize) -> Result<GmsRun> {
        let decoder = self.decoder.clone().ok_or(GmsError::NotFitted("decoder network"))?;
        let high = high_scorers(&self.samples, threshold, self.config.latent_count);
        if high.len() < 2 {
            return Err(insufficient(threshold, high.len()));
        }
        let pref = self.fit_preference()?;
        let rec_cfg = RecommendationConfig {
            threshold,
            count: self.config.recommendation_count,
            seed: seed::derive(self.config.seed, "recommend"),
            ..Default::default()
        };
        let recommendations = recommend(&pref, &rec_cfg)?;
        let lat = self.fit_latent(threshold)?;
        let reference = high[0].params.clone();
        let preference = preference_map(&pref, &lat, r)?;
        let similarity = similarity_map(&decoder, &lat, &reference, self.config.similarity_res)?;
        let product = combined_product(&preference, &similarity)?;
        Ok(GmsRun {
            threshold,
            recommendations,
            reference,
            latent: lat.to_document(),
            preference,
            similarity,
            product,
        })
    }

    pub fn export(&self) -> SessionDocument {
        let decoder = self.decoder.as_ref().map(|net| {
            let mut buf = Vec::new();
            write_network(net.as_ref(), &mut buf).expect("writing to memory");
            base64::engine::general_purpose::STANDARD.encode(buf)
        });
        SessionDocument {
            format: SESSION_FORMAT.into(),
            id: self.id.clone(),
            m: self.m,
            config: self.config.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| SampleRecord {
                    params: s.params.clone(),
                    score: Some(s.score),
                })
                .collect(),
            preference: self.preference.as_ref().map(|p| p.to_document()),
            preference_current: self.preference_is_current(),
            latent: self.latent.as_ref().map(|l| l.to_document()),
            decoder,
        }
    }

    pub fn import(doc: &SessionDocument) -> Result<Self> {
        if doc.format != SESSION_FORMAT {
            return Err(GmsError::Parse(format!("unsupported session format {:?}", doc.format)));
        }
        let mut s = Session::new(doc.id.clone(), doc.m, doc.config.clone())?;
        let samples = doc
            .samples
            .iter()
            .map(|r| {
                let score = r.score.ok_or_else(|| GmsError::Parse("session sample without a score".into()))?;
                PreferenceSample::new(r.params.clone(), score)
            })
            .collect::<Result<Vec<_>>>()?;
        if !samples.is_empty() {
            s.add_scores(samples)?;
        }
        if let Some(p) = &doc.preference {
            let model = PreferenceModel::from_document(p)?;
            check_dim(doc.m, model.dim())?;
            let source = if doc.preference_current { s.sample_generation } else { u64::MAX };
            s.install_preference(Arc::new(model), source);
        }
        if let Some(l) = &doc.latent {
            let model = LatentModel::from_document(l)?;
            check_dim(doc.m, model.dim())?;
            s.install_latent(Arc::new(model), s.sample_generation);
        }
        if let Some(blob) = &doc.decoder {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(blob)
                .map_err(|e| GmsError::Parse(format!("decoder blob: {e}")))?;
            s.set_decoder(Arc::new(read_network(&bytes[..])?))?;
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub format: String,
    pub id: String,
    pub m: usize,
    pub config: SessionConfig,
    pub samples: Vec<SampleRecord>,
    pub preference: Option<PreferenceDocument>,
    #[serde(default)]
    pub preference_current: bool,
    pub latent: Option<LatentDocument>,
    /// Base64 of the binary network file.
    pub decoder: Option<String>,
}

fn insufficient(threshold: f64, actual: usize) -> GmsError {
    GmsError::InsufficientSamples {
        context: format!("latent embedding (samples scoring above {threshold})"),
        required: 2,
        actual,
    }
}

/// Samples scoring strictly above `threshold`, best first (ties keep
/// insertion order), at most `limit` of them.
pub fn high_scorers(samples: &[PreferenceSample], threshold: f64, limit: usize) -> Vec<PreferenceSample> {
    let mut high: Vec<PreferenceSample> = samples.iter().filter(|s| s.score > threshold).cloned().collect();
    high.sort_by(|a, b| b.score.total_cmp(&a.score));
    high.truncate(limit);
    high
}

pub(crate) fn fit_preference_model(
    samples: &[PreferenceSample],
    m: usize,
    config: &SessionConfig,
) -> Result<PreferenceModel> {
    let inputs = samples.iter().map(|s| s.params.clone()).collect();
    let scores = samples.iter().map(|s| s.score).collect();
    let frozen = crate::gp::Frozen {
        noise: config.freeze_noise,
        ..Default::default()
    };
    Ok(config.optimizer.fit(inputs, scores, &KernelParams::wide_prior(m), frozen)?.model)
}

pub(crate) fn fit_latent_model(samples: &[PreferenceSample], threshold: f64, limit: usize) -> Result<LatentModel> {
    let high = high_scorers(samples, threshold, limit);
    if high.len() < 2 {
        return Err(insufficient(threshold, high.len()));
    }
    let rows = high.into_iter().map(|s| s.params).collect();
    Ok(fit_gplvm(rows, &GplvmConfig::default())?.model)
}
