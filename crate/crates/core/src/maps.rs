//! Color-coded grids over the latent plane and interactive exploration.
//!
//! A grid stores one value per gridpoint on an `r × r` lattice spanning the
//! grid bounds (the training-latent bounding box padded by 10% per side).
//! Gridpoint `(i, j)` sits at `lo + (i, j)·(hi − lo)/(r − 1)` and its value is
//! `values[j·r + i]`.
//!
//! * preference: predicted score of the back-projected material
//! * similarity: `exp(−d/σ)` where `d` is the L2 distance between decoder
//!   previews of the back-projected material and a reference material, and
//!   `σ` is the median `d` over the grid
//! * product: preference times similarity, with the similarity grid first
//!   resampled bilinearly onto the preference lattice

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderNetwork;
use crate::error::{check_dim, GmsError, Result};
use crate::gp::PreferenceModel;
use crate::gplvm::{LatentModel, LatentPoint};
use crate::material::MaterialParams;
use crate::render::ImageBuffer;

pub const DEFAULT_PREFERENCE_RES: usize = 50;
pub const DEFAULT_SIMILARITY_RES: usize = 20;
pub const BOUNDS_PADDING: f64 = 0.1;
pub const GRID_FORMAT: &str = "gms-grid v1";

/// Relative distance to a gridpoint below which a query snaps onto it.
const SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Preference,
    Similarity,
    Product,
}

impl GridKind {
    pub fn name(self) -> &'static str {
        match self {
            GridKind::Preference => "preference",
            GridKind::Similarity => "similarity",
            GridKind::Product => "product",
        }
    }
}

impl std::str::FromStr for GridKind {
    type Err = GmsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preference" => Ok(GridKind::Preference),
            "similarity" => Ok(GridKind::Similarity),
            "product" => Ok(GridKind::Product),
            other => Err(GmsError::Parse(format!("unknown grid kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: LatentPoint,
    pub max: LatentPoint,
}

impl Bounds {
    /// Bounding box of the model's latents, padded by 10% of its extent on
    /// every side (by 0.5 along an axis with zero extent).
    pub fn around(lat: &LatentModel) -> Self {
        let (lo, hi) = lat.bounds();
        let mut min = lo;
        let mut max = hi;
        for a in 0..2 {
            let extent = hi[a] - lo[a];
            let pad = if extent > 0.0 { BOUNDS_PADDING * extent } else { 0.5 };
            min[a] -= pad;
            max[a] += pad;
        }
        Self { min, max }
    }

    fn gridpoint(&self, r: usize, i: usize, j: usize) -> LatentPoint {
        let step = |a: usize, k: usize| self.min[a] + (self.max[a] - self.min[a]) * k as f64 / (r - 1) as f64;
        [step(0, i), step(1, j)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub kind: GridKind,
    pub r: usize,
    pub bounds: Bounds,
    pub values: Vec<f64>,
    /// Raw preview distances behind a similarity grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<f64>>,
}

impl LatentGrid {
    pub fn new(kind: GridKind, r: usize, bounds: Bounds, values: Vec<f64>) -> Result<Self> {
        check_resolution(r)?;
        check_dim(r * r, values.len())?;
        if !(bounds.max[0] > bounds.min[0] && bounds.max[1] > bounds.min[1]) {
            return Err(GmsError::OutOfRange("grid bounds must have positive extent".into()));
        }
        Ok(Self {
            kind,
            r,
            bounds,
            values,
            distances: None,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.r + i]
    }

    pub fn gridpoint(&self, i: usize, j: usize) -> LatentPoint {
        self.bounds.gridpoint(self.r, i, j)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    /// Space-separated matrix text, one lattice row (fixed `j`) per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.r) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    /// Sidecar header for [`to_text`](Self::to_text).
    pub fn header(&self) -> GridHeader {
        GridHeader {
            format: GRID_FORMAT.into(),
            kind: self.kind,
            r: self.r,
            bounds: self.bounds,
        }
    }

    pub fn from_text(header: &GridHeader, text: &str) -> Result<Self> {
        if header.format != GRID_FORMAT {
            return Err(GmsError::Parse(format!("unsupported grid format {:?}", header.format)));
        }
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| GmsError::Parse(format!("bad grid value {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(header.kind, header.r, header.bounds, values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub format: String,
    pub kind: GridKind,
    pub r: usize,
    pub bounds: Bounds,
}

fn check_resolution(r: usize) -> Result<()> {
    if r < 2 {
        return Err(GmsError::InvalidDimension("grid resolution must be at least 2".into()));
    }
    Ok(())
}

fn lattice(bounds: &Bounds, r: usize) -> Vec<LatentPoint> {
    (0..r * r).map(|k| bounds.gridpoint(r, k % r, k / r)).collect()
}

/// Predicted score of the (unclamped) back-projection at every gridpoint.
pub fn preference_map(pref: &PreferenceModel, lat: &LatentModel, r: usize) -> Result<LatentGrid> {
    check_dim(pref.dim(), lat.dim())?;
    check_resolution(r)?;
    let bounds = Bounds::around(lat);
    let values = lattice(&bounds, r)
        .par_iter()
        .map(|l| pref.predict_mean_raw(&lat.project(l).raw))
        .collect::<Result<Vec<_>>>()?;
    LatentGrid::new(GridKind::Preference, r, bounds, values)
}

/// Maps distances to `exp(−d/σ)` with `σ` the median distance. A zero
/// median leaves 1 at zero distance and 0 elsewhere.
pub fn similarity_from_distances(distances: &[f64]) -> Vec<f64> {
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let sigma = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    distances
        .iter()
        .map(|d| {
            if sigma > 0.0 {
                (-d / sigma).exp()
            } else if *d == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn image_distance(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

// Gridpoints per decoder batch; fixed so results do not depend on threads.
const PREVIEW_CHUNK: usize = 32;

fn previews(net: &DecoderNetwork, materials: &[MaterialParams]) -> Result<Vec<ImageBuffer>> {
    let res = net
        .resolution()
        .ok_or_else(|| GmsError::InvalidDimension("decoder output is not a square RGB image".into()))?;
    let chunks = materials
        .par_chunks(PREVIEW_CHUNK)
        .map(|chunk| {
            let m = net.input_len();
            let mut rows = ndarray::Array2::<f32>::zeros((chunk.len(), m));
            for (i, x) in chunk.iter().enumerate() {
                check_dim(m, x.dim())?;
                rows.row_mut(i).iter_mut().zip(x.as_slice()).for_each(|(d, s)| *d = *s as f32);
            }
            let out = net.forward_batch(rows.view())?;
            out.rows()
                .into_iter()
                .map(|row| ImageBuffer::from_raw(res, res, row.as_slice().expect("contiguous rows")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Similarity of every gridpoint's decoded preview to that of `reference`.
pub fn similarity_map(
    net: &DecoderNetwork,
    lat: &LatentModel,
    reference: &MaterialParams,
    r: usize,
) -> Result<LatentGrid> {
    check_dim(lat.dim(), reference.dim())?;
    check_dim(net.input_len(), reference.dim())?;
    check_resolution(r)?;
    let bounds = Bounds::around(lat);
    let target = net.forward(reference)?;
    let materials: Vec<MaterialParams> = lattice(&bounds, r).iter().map(|l| lat.project(l).params).collect();
    let distances: Vec<f64> = previews(net, &materials)?.iter().map(|img| image_distance(&target, img)).collect();
    let mut grid = LatentGrid::new(GridKind::Similarity, r, bounds, similarity_from_distances(&distances))?;
    grid.distances = Some(distances);
    Ok(grid)
}

/// Elementwise product of two grids on the same lattice.
pub fn product_map(preference: &LatentGrid, similarity: &LatentGrid) -> Result<LatentGrid> {
    check_dim(preference.r, similarity.r)?;
    if preference.bounds != similarity.bounds {
        return Err(GmsError::OutOfRange("grids cover different bounds".into()));
    }
    let values = preference.values.iter().zip(&similarity.values).map(|(p, s)| p * s).collect();
    LatentGrid::new(GridKind::Product, preference.r, preference.bounds, values)
}

/// Bilinear resampling of `grid` onto an `r × r` lattice over the same bounds.
pub fn resample(grid: &LatentGrid, r: usize) -> Result<LatentGrid> {
    let values = lattice(&grid.bounds, r).iter().map(|l| query_bilinear(grid, l).value).collect();
    LatentGrid::new(grid.kind, r, grid.bounds, values)
}

/// Product coding at the preference resolution, upsampling the similarity
/// grid first when the resolutions differ.
pub fn combined_product(preference: &LatentGrid, similarity: &LatentGrid) -> Result<LatentGrid> {
    if similarity.r == preference.r {
        product_map(preference, similarity)
    } else {
        product_map(preference, &resample(similarity, preference.r)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub value: f64,
    /// The point lay outside the bounds and was clamped onto them.
    pub clamped: bool,
}

/// Bilinear blend inside cell `(i, j)` (corners `(i, j)` to `(i+1, j+1)`) at
/// fractional offsets `tx`, `ty` in `[0, 1]`.
pub fn interpolate_in_cell(grid: &LatentGrid, i: usize, j: usize, tx: f64, ty: f64) -> f64 {
    let v00 = grid.at(i, j);
    let v10 = grid.at(i + 1, j);
    let v01 = grid.at(i, j + 1);
    let v11 = grid.at(i + 1, j + 1);
    (1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10 + (1.0 - tx) * ty * v01 + tx * ty * v11
}

/// Interpolated grid value at a latent point; points outside the bounds are
/// clamped onto them and flagged.
pub fn query_bilinear(grid: &LatentGrid, l: &LatentPoint) -> Query {
    let r = grid.r;
    let mut clamped = false;
    let mut cell = [0usize; 2];
    let mut t = [0.0; 2];
    for a in 0..2 {
        let span = grid.bounds.max[a] - grid.bounds.min[a];
        let mut f = (l[a] - grid.bounds.min[a]) / span * (r - 1) as f64;
        // Snap first so gridpoints on the border are not reported as clamped.
        let nearest = f.round();
        if (f - nearest).abs() < SNAP * (r - 1) as f64 {
            f = nearest;
        }
        if !(0.0..=(r - 1) as f64).contains(&f) {
            clamped = true;
            f = if f.is_nan() { 0.0 } else { f.clamp(0.0, (r - 1) as f64) };
        }
        let i = (f.floor() as usize).min(r - 2);
        cell[a] = i;
        t[a] = f - i as f64;
    }
    Query {
        value: interpolate_in_cell(grid, cell[0], cell[1], t[0], t[1]),
        clamped,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub point: LatentPoint,
    pub params: MaterialParams,
    pub preview: ImageBuffer,
}

/// Moves `delta` away from `origin` in the latent plane, projects back to
/// material space and decodes a preview.
pub fn explore(lat: &LatentModel, net: &DecoderNetwork, origin: &LatentPoint, delta: &LatentPoint) -> Result<Exploration> {
    let point = [origin[0] + delta[0], origin[1] + delta[1]];
    if point.iter().any(|v| !v.is_finite()) {
        return Err(GmsError::OutOfRange("latent point must be finite".into()));
    }
    let params = lat.project(&point).params;
    let preview = net.forward(&params)?;
    Ok(Exploration { point, params, preview })
}
