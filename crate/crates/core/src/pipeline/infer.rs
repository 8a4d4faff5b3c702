use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream, Model};
use crate::error::{Error, Result};
use crate::geom::{canonical_frame, invert_frame, CanonicalFrame, IndexedCloud, Mat3, PointCloud, SpatialIndex, Vec3};
use crate::net::{EncoderWeights, RegressorWeights};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub iterations: usize,
    pub taubin_k: usize,
    pub lrma_k: usize,
    /// Patch radius as a fraction of the current cloud's bounding-box diagonal.
    pub radius_fraction: f64,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            taubin_k: 100,
            lrma_k: 20,
            radius_fraction: 0.05,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one filtering iteration is required".into()));
        }
        if self.taubin_k == 0 || self.lrma_k == 0 {
            return Err(Error::Config("neighborhood sizes must be positive".into()));
        }
        if !(self.radius_fraction > 0.0) || !self.radius_fraction.is_finite() {
            return Err(Error::Config(format!(
                "patch radius fraction must be positive, got {}",
                self.radius_fraction
            )));
        }
        Ok(())
    }
}

/// Encoder output for one point's patch. `None` when the patch was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPatch {
    pub center: Vec3,
    pub encoding: Option<(CanonicalFrame, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub position: Vec3,
    /// Unit normal in world coordinates.
    pub normal: Vec3,
    /// The patch had no spread; the point was passed through with a +z normal.
    pub degenerate: bool,
}

fn encode_point(
    cloud: &IndexedCloud,
    index: usize,
    encoder: &EncoderWeights,
    radius_fraction: f64,
    rng: &mut impl Rng,
) -> Result<EncodedPatch> {
    let patch = cloud.extract_patch(index, radius_fraction * cloud.diagonal, rng)?;
    let center = patch.center;
    let frame = match canonical_frame(&patch) {
        Ok(f) => f,
        Err(Error::DegenerateCovariance) => return Ok(EncodedPatch { center, encoding: None }),
        Err(e) => return Err(e),
    };
    let feature = encoder.encode(&patch.canonicalize(&frame).points)?;
    Ok(EncodedPatch {
        center,
        encoding: Some((frame, feature)),
    })
}

fn decode(encoded: &EncodedPatch, regressor: &RegressorWeights) -> Result<PointEstimate> {
    let Some((frame, feature)) = &encoded.encoding else {
        return Ok(PointEstimate {
            position: encoded.center,
            normal: Vec3::z(),
            degenerate: true,
        });
    };
    let out = regressor.regress(feature)?;
    Ok(PointEstimate {
        position: frame.to_world(&out.displacement),
        normal: invert_frame(frame, &out.normal),
        degenerate: false,
    })
}

/// Filtered position `p + T⁻¹(d)·r` and world normal `T⁻¹(n)` for one point.
pub fn infer_point(
    cloud: &IndexedCloud,
    index: usize,
    encoder: &EncoderWeights,
    regressor: &RegressorWeights,
    radius_fraction: f64,
    rng: &mut impl Rng,
) -> Result<PointEstimate> {
    decode(&encode_point(cloud, index, encoder, radius_fraction, rng)?, regressor)
}

/// Encodes the patch around every point. Patch sampling for point `i` uses a
/// stream derived from `(seed, iteration, i)`.
pub fn encode_cloud(
    cloud: &IndexedCloud,
    encoder: &EncoderWeights,
    radius_fraction: f64,
    seed: u64,
    iteration: usize,
) -> Result<Vec<EncodedPatch>> {
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed, &[stream::PATCH, iteration as u64, i as u64]);
            encode_point(cloud, i, encoder, radius_fraction, &mut rng)
        })
        .collect()
}

pub fn apply_regressor(encoded: &[EncodedPatch], regressor: &RegressorWeights) -> Result<Vec<PointEstimate>> {
    encoded.par_iter().map(|e| decode(e, regressor)).collect()
}

/// `k` nearest other points of every point, nearest first.
fn neighborhoods(points: &[Vec3], k: usize, stage: &str) -> Result<Vec<Vec<usize>>> {
    let available = points.len() - 1;
    if k > available {
        warn!("{stage}: neighborhood of {k} clamped to {available} for {} points", points.len());
    }
    let k = k.min(available);
    let index = SpatialIndex::build(points);
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let near = index.knn(&points[i], k + 1)?;
            Ok(near.into_iter().filter(|&j| j != i).take(k).collect())
        })
        .collect()
}

fn check_same_len(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "point counts differ: {} filtered, {} original",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Subtracts from each filtered point the mean displacement of its `k`
/// nearest filtered neighbors, which counters shrinkage.
pub fn taubin_inflate(filtered: &PointCloud, original: &PointCloud, k: usize) -> Result<PointCloud> {
    check_same_len(filtered, original)?;
    let (p, q) = (filtered.points(), original.points());
    let hoods = neighborhoods(p, k, "taubin")?;
    let out = hoods
        .iter()
        .enumerate()
        .map(|(i, hood)| {
            if hood.is_empty() {
                return p[i];
            }
            let shift: Vec3 = hood.iter().map(|&j| p[j] - q[j]).sum();
            p[i] - shift / hood.len() as f64
        })
        .collect();
    filtered.with_points(out)
}

/// Moves each point toward the tangent planes of its `k` nearest neighbors:
/// `p + 1/(3k) Σ (p_j − p)ᵀ(n_j n_jᵀ + n n ᵀ)`.
pub fn lrma_update(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let normals = cloud.require_normals()?;
    let p = cloud.points();
    let hoods = neighborhoods(p, k, "lrma")?;
    let out = hoods
        .iter()
        .enumerate()
        .map(|(i, hood)| {
            if hood.is_empty() {
                return p[i];
            }
            let own: Mat3 = normals[i] * normals[i].transpose();
            let step: Vec3 = hood
                .iter()
                .map(|&j| (normals[j] * normals[j].transpose() + own) * (p[j] - p[i]))
                .sum();
            p[i] + step / (3.0 * hood.len() as f64)
        })
        .collect();
    cloud.with_points(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Filtered positions with the last predicted normals.
    pub cloud: PointCloud,
    /// Points passed through unchanged because their patch was degenerate,
    /// summed over iterations.
    pub degenerate_points: usize,
}

/// One pass: network estimate for every point, inflation against the pass
/// input, then the position update with the new normals.
fn filter_pass(cloud: &PointCloud, model: &Model, cfg: &InferenceConfig, iteration: usize) -> Result<(PointCloud, usize)> {
    let input = IndexedCloud::new(cloud.clone().without_normals());
    let encoded = encode_cloud(&input, &model.encoder, cfg.radius_fraction, cfg.seed, iteration)?;
    let estimates = apply_regressor(&encoded, &model.regressor)?;
    let degenerate = estimates.iter().filter(|e| e.degenerate).count();
    let moved = PointCloud::with_normals(
        estimates.iter().map(|e| e.position).collect(),
        estimates.iter().map(|e| e.normal).collect(),
    )?;
    let inflated = taubin_inflate(&moved, &input.cloud, cfg.taubin_k)?;
    Ok((lrma_update(&inflated, cfg.lrma_k)?, degenerate))
}

pub fn filter_cloud(cloud: &PointCloud, model: &Model, cfg: &InferenceConfig) -> Result<FilterOutcome> {
    cfg.validate()?;
    let mut current = cloud.clone();
    let mut degenerate_points = 0;
    for iteration in 0..cfg.iterations {
        let start = Instant::now();
        let (next, degenerate) = filter_pass(&current, model, cfg, iteration)?;
        if degenerate > 0 {
            warn!("iteration {}: {degenerate} degenerate patches passed through", iteration + 1);
        }
        degenerate_points += degenerate;
        info!(
            "filter iteration {}/{} ({:.1}s)",
            iteration + 1,
            cfg.iterations,
            start.elapsed().as_secs_f64()
        );
        current = next;
    }
    Ok(FilterOutcome {
        cloud: current,
        degenerate_points,
    })
}
