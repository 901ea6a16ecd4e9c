//! The normalized material parameter space, uniform sampling, synthetic
//! users that score materials deterministically, and the scored-sample file
//! format.
//!
//! # Parameter layout (m = 19)
//!
//! | slots | meaning |
//! |-------|---------|
//! | 0–2   | diffuse albedo RGB |
//! | 3     | metallic |
//! | 4     | specular weight |
//! | 5     | roughness |
//! | 6     | index-of-refraction blend |
//! | 7     | transmission weight |
//! | 8–10  | transmission tint RGB |
//! | 11    | translucency weight |
//! | 12–14 | scatter tint RGB |
//! | 15    | emission weight |
//! | 16–18 | emission RGB |
//!
//! Every coordinate lives in `[0, 1]`; physical ranges are mapped inside the
//! renderer. Higher-dimensional spaces (e.g. m = 38) are accepted by the
//! learning layers but only m = 19 is rendered.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmsError, Result};
use crate::seed;

pub const DEFAULT_DIM: usize = 19;
pub const MAX_SCORE: f64 = 10.0;

/// Slot indices of the 19-dimensional shading model.
pub mod slot {
    pub const ALBEDO: usize = 0;
    pub const METALLIC: usize = 3;
    pub const SPECULAR: usize = 4;
    pub const ROUGHNESS: usize = 5;
    pub const IOR: usize = 6;
    pub const TRANSMISSION: usize = 7;
    pub const TRANSMISSION_TINT: usize = 8;
    pub const TRANSLUCENCY: usize = 11;
    pub const SCATTER_TINT: usize = 12;
    pub const EMISSION: usize = 15;
    pub const EMISSION_COLOR: usize = 16;
}

/// A material description: `m` coordinates, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MaterialParams(Vec<f64>);

impl MaterialParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(GmsError::InvalidDimension("material must have m >= 1".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(GmsError::OutOfRange(format!(
                "coordinate {i} = {v} is outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    /// Clamps every coordinate into `[0, 1]`; NaN maps to 0.
    pub fn clamped(values: &[f64]) -> Self {
        Self(
            values
                .iter()
                .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
                .collect(),
        )
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

impl TryFrom<Vec<f64>> for MaterialParams {
    type Error = GmsError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<MaterialParams> for Vec<f64> {
    fn from(p: MaterialParams) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for MaterialParams {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A material together with a score in `[0, 10]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub params: MaterialParams,
    pub score: f64,
}

impl PreferenceSample {
    pub fn new(params: MaterialParams, score: f64) -> Result<Self> {
        if !(0.0..=MAX_SCORE).contains(&score) {
            return Err(GmsError::OutOfRange(format!("score {score} is outside [0, 10]")));
        }
        Ok(Self { params, score })
    }
}

/// Draws one material uniformly from `[0, 1]^m`.
pub fn sample_uniform(m: usize, seed: u64) -> Result<MaterialParams> {
    if m == 0 {
        return Err(GmsError::InvalidDimension("m must be at least 1".into()));
    }
    Ok(sample_uniform_with(&mut seed::rng(seed), m))
}

pub(crate) fn sample_uniform_with(rng: &mut seed::Rng, m: usize) -> MaterialParams {
    MaterialParams((0..m).map(|_| rng.random::<f64>()).collect())
}

/// Ground-truth preference function standing in for a human scorer: a
/// mixture of isotropic Gaussian bumps with a hard zero floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub name: String,
    pub centers: Vec<MaterialParams>,
    pub widths: Vec<f64>,
    pub weights: Vec<f64>,
    pub floor: f64,
    /// Coordinates that enter the bump distance; empty means all of them.
    #[serde(default)]
    pub relevant: Vec<usize>,
}

// Seed used to estimate the floor of the preset users.
const FLOOR_CALIBRATION_SEED: u64 = 0x6a73_6466_6c6f_6f72;
const FLOOR_CALIBRATION_DRAWS: usize = 10_000;

impl SyntheticUser {
    pub fn new(
        name: impl Into<String>,
        centers: Vec<MaterialParams>,
        widths: Vec<f64>,
        weights: Vec<f64>,
        floor: f64,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(GmsError::InvalidDimension("synthetic user needs at least one center".into()));
        }
        let m = centers[0].dim();
        for c in &centers {
            check_dim(m, c.dim())?;
        }
        check_dim(centers.len(), widths.len())?;
        check_dim(centers.len(), weights.len())?;
        if widths.iter().chain(&weights).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(GmsError::OutOfRange("widths and weights must be positive".into()));
        }
        if !(0.0..MAX_SCORE).contains(&floor) {
            return Err(GmsError::OutOfRange(format!("floor {floor} is outside [0, 10)")));
        }
        Ok(Self {
            name: name.into(),
            centers,
            widths,
            weights,
            floor,
            relevant: Vec::new(),
        })
    }

    /// Restricts the bump distance to the given coordinates.
    pub fn with_relevant(mut self, dims: Vec<usize>) -> Result<Self> {
        if let Some(d) = dims.iter().find(|d| **d >= self.dim()) {
            return Err(GmsError::OutOfRange(format!("relevant coordinate {d} >= m = {}", self.dim())));
        }
        self.relevant = dims;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.centers[0].dim()
    }

    /// Score before the floor cutoff, clamped to `[0, 10]`.
    pub fn raw_score(&self, x: &MaterialParams) -> Result<f64> {
        check_dim(self.dim(), x.dim())?;
        Ok(self.raw_unchecked(x.as_slice()))
    }

    fn mixture(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        for ((c, w), a) in self.centers.iter().zip(&self.widths).zip(&self.weights) {
            let c = c.as_slice();
            let d2: f64 = if self.relevant.is_empty() {
                c.iter().zip(x).map(|(c, x)| (x - c) * (x - c)).sum()
            } else {
                self.relevant.iter().map(|&d| (x[d] - c[d]) * (x[d] - c[d])).sum()
            };
            sum += a * (-d2 / (2.0 * w * w)).exp();
        }
        sum
    }

    fn raw_unchecked(&self, x: &[f64]) -> f64 {
        (MAX_SCORE * self.mixture(x)).clamp(0.0, MAX_SCORE)
    }

    pub fn score(&self, x: &MaterialParams) -> Result<f64> {
        let raw = self.raw_score(x)?;
        Ok(if raw < self.floor { 0.0 } else { raw })
    }

    /// Clear and blue-tinted glass: low roughness, high transmission and
    /// specular. Only the reflectance and transmission slots (3–10) matter
    /// to this user. About 81% of uniform samples score zero.
    pub fn glassy(m: usize) -> Result<Self> {
        let clear = [
            0.8, 0.8, 0.8, 0.05, 0.85, 0.1, 0.6, 0.95, 0.9, 0.9, 0.9, 0.1, 0.5, 0.5, 0.5, 0.05, 0.5,
            0.5, 0.5,
        ];
        let tinted = [
            0.3, 0.5, 0.8, 0.1, 0.8, 0.2, 0.5, 0.85, 0.3, 0.5, 0.95, 0.2, 0.4, 0.6, 0.9, 0.05, 0.5,
            0.5, 0.5,
        ];
        Self::preset("glassy", m, &[&clear, &tinted], &[1.0, 0.9], &GLASSY_SLOTS, 0.81)
    }

    /// Subsurface-scattering materials: high translucency, warm scatter
    /// tint. Albedo, roughness, transmission and scattering slots matter.
    /// About 90% of uniform samples score zero.
    pub fn translucent(m: usize) -> Result<Self> {
        let wax = [
            0.9, 0.7, 0.5, 0.05, 0.4, 0.5, 0.4, 0.2, 0.5, 0.5, 0.5, 0.9, 0.9, 0.5, 0.3, 0.05, 0.5,
            0.5, 0.5,
        ];
        let jade = [
            0.3, 0.7, 0.4, 0.05, 0.6, 0.3, 0.5, 0.3, 0.4, 0.8, 0.5, 0.85, 0.3, 0.9, 0.5, 0.05, 0.5,
            0.5, 0.5,
        ];
        Self::preset("translucent", m, &[&wax, &jade], &[1.0, 0.8], &TRANSLUCENT_SLOTS, 0.90)
    }

    /// Builds a preset from 19-slot centers (extra coordinates centered at
    /// 0.5 and irrelevant). Relevant slots beyond `m` are dropped.
    fn preset(
        name: &str,
        m: usize,
        centers19: &[&[f64; 19]],
        weights: &[f64],
        slots: &[usize],
        zero_fraction: f64,
    ) -> Result<Self> {
        if m == 0 {
            return Err(GmsError::InvalidDimension("m must be at least 1".into()));
        }
        let centers = centers19
            .iter()
            .map(|c| {
                MaterialParams::new((0..m).map(|i| if i < 19 { c[i] } else { 0.5 }).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let relevant: Vec<usize> = slots.iter().copied().filter(|&d| d < m).collect();
        let k = if relevant.is_empty() { m } else { relevant.len() };
        // Widths grow with the expected distance between a uniform sample
        // and a center so the score spread is similar for any number of
        // relevant coordinates.
        let width = PRESET_WIDTH * (k as f64 / GLASSY_SLOTS.len() as f64).sqrt();
        Self::new(name, centers, vec![width; weights.len()], weights.to_vec(), 0.0)?
            .with_relevant(relevant)?
            .calibrated(zero_fraction)
    }

    /// Rescales the weights so that 99.5% of uniform samples score at most
    /// [`PRESET_HIGH_SCORE`], then sets the floor to the `zero_fraction`
    /// quantile of raw scores. Both are measured over a fixed batch of
    /// uniform draws, so the result is deterministic.
    pub fn calibrated(mut self, zero_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&zero_fraction) {
            return Err(GmsError::OutOfRange("zero fraction must be in [0, 1)".into()));
        }
        let m = self.dim();
        let mut rng = seed::rng(FLOOR_CALIBRATION_SEED);
        let draws: Vec<MaterialParams> =
            (0..FLOOR_CALIBRATION_DRAWS).map(|_| sample_uniform_with(&mut rng, m)).collect();
        let quantile = |values: &mut Vec<f64>, q: f64| {
            values.sort_by(f64::total_cmp);
            values[((q * values.len() as f64) as usize).min(values.len() - 1)]
        };
        let mut unclamped: Vec<f64> = draws.iter().map(|x| self.mixture(x.as_slice())).collect();
        let scale = PRESET_HIGH_SCORE / (MAX_SCORE * quantile(&mut unclamped, 0.995));
        for w in &mut self.weights {
            *w *= scale;
        }
        self.floor = 0.0;
        let mut raws: Vec<f64> = draws.iter().map(|x| self.raw_unchecked(x.as_slice())).collect();
        self.floor = quantile(&mut raws, zero_fraction).min(MAX_SCORE - 1e-9);
        Ok(self)
    }
}

const GLASSY_SLOTS: [usize; 8] = [3, 4, 5, 6, 7, 8, 9, 10];
const TRANSLUCENT_SLOTS: [usize; 9] = [0, 1, 2, 5, 7, 11, 12, 13, 14];
pub const PRESET_WIDTH: f64 = 0.3;
/// Score reached by the top 0.5% of uniform samples under a preset user.
pub const PRESET_HIGH_SCORE: f64 = 9.0;

pub fn oracle_score(user: &SyntheticUser, x: &MaterialParams) -> Result<f64> {
    user.score(x)
}

/// Looks up a preset synthetic user by name.
pub fn preset_user(name: &str, m: usize) -> Result<SyntheticUser> {
    match name {
        "glassy" => SyntheticUser::glassy(m),
        "translucent" => SyntheticUser::translucent(m),
        other => Err(GmsError::Parse(format!("unknown oracle '{other}'"))),
    }
}

/// One line of a sample file; galleries are written before they are scored,
/// so the score is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub params: MaterialParams,
    pub score: Option<f64>,
}

pub const SAMPLES_HEADER: &str = "gms-samples v1";

/// Writes records as `gms-samples v1 m=<m>` followed by one
/// `c0,c1,...,c(m-1);score` line per record (`;score` omitted when unscored).
pub fn write_samples<W: Write>(mut w: W, m: usize, records: &[SampleRecord]) -> Result<()> {
    writeln!(w, "{SAMPLES_HEADER} m={m}")?;
    let mut line = String::new();
    for r in records {
        check_dim(m, r.params.dim())?;
        line.clear();
        for (i, v) in r.params.as_slice().iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write!(line, "{v}").unwrap();
        }
        if let Some(s) = r.score {
            write!(line, ";{s}").unwrap();
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<(usize, Vec<SampleRecord>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| GmsError::Parse("empty sample file".into()))??;
    let m = header
        .strip_prefix(SAMPLES_HEADER)
        .and_then(|rest| rest.trim().strip_prefix("m="))
        .and_then(|m| m.parse::<usize>().ok())
        .ok_or_else(|| GmsError::Parse(format!("bad sample header '{header}'")))?;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| GmsError::Parse(format!("line {}: {what}", lineno + 2));
        let (coords, score) = match line.split_once(';') {
            Some((c, s)) => (c, Some(s.trim().parse::<f64>().map_err(|_| bad("bad score"))?)),
            None => (line, None),
        };
        let values = coords
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("bad coordinate")))
            .collect::<Result<Vec<_>>>()?;
        check_dim(m, values.len())?;
        if let Some(s) = score {
            if !(0.0..=MAX_SCORE).contains(&s) {
                return Err(bad("score outside [0, 10]"));
            }
        }
        out.push(SampleRecord {
            params: MaterialParams::new(values)?,
            score,
        });
    }
    Ok((m, out))
}
