//! Plain `key = value` configuration files.
//!
//! Blank lines and anything after `#` are ignored. Recognized keys mirror
//! [`SessionConfig`] (`threshold`, `recommendation_count`, `preference_res`,
//! `similarity_res`, `latent_count`, `optimizer`, `freeze_noise`, `seed`)
//! plus `port` and `workers` for the HTTP server. Unknown keys are errors so
//! that typos do not pass silently.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{GmsError, Result};
use crate::seed;
use crate::session::SessionConfig;

const KEYS: &[&str] = &[
    "threshold",
    "recommendation_count",
    "preference_res",
    "similarity_res",
    "latent_count",
    "optimizer",
    "freeze_noise",
    "seed",
    "port",
    "workers",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GmsError::Parse(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(GmsError::Parse(format!("config line {}: unknown key {k:?}", n + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| GmsError::Parse(format!("config key {key}: bad value {v:?}")))
            })
            .transpose()
    }

    /// Session settings with this file's values laid over the defaults.
    /// The seed is left as written; see [`resolve_seed`].
    pub fn session_config(&self) -> Result<SessionConfig> {
        let mut c = SessionConfig::default();
        if let Some(v) = self.get("threshold")? {
            c.threshold = v;
        }
        if let Some(v) = self.get("recommendation_count")? {
            c.recommendation_count = v;
        }
        if let Some(v) = self.get("preference_res")? {
            c.preference_res = v;
        }
        if let Some(v) = self.get("similarity_res")? {
            c.similarity_res = v;
        }
        if let Some(v) = self.get("latent_count")? {
            c.latent_count = v;
        }
        if let Some(v) = self.get("optimizer")? {
            c.optimizer = v;
        }
        if let Some(v) = self.get("freeze_noise")? {
            c.freeze_noise = v;
        }
        if let Some(v) = self.get("seed")? {
            c.seed = v;
        }
        Ok(c)
    }
}

/// Root seed by precedence: explicit flag, then `GMS_SEED`, then the config
/// file, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    flag.or_else(seed::env_override).or(config).unwrap_or(0)
}
