//! Filtering and normal-estimation metrics, plus a PCA normal baseline.

mod mesh;

pub use mesh::{closest_point_on_triangle, point_triangle_distance, MeshIndex, TriangleMesh};

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{eigen3_symmetric, Mat3, PointCloud, SpatialIndex, Vec3};

/// Neighborhood sizes for PCA normals at increasing noise levels.
pub const PCA_NEIGHBORHOODS: [usize; 3] = [60, 150, 200];

/// Unoriented angle between two unit vectors, in `[0, π/2]`.
pub fn unoriented_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).abs().clamp(0.0, 1.0).acos()
}

/// Mean squared unoriented angle, in radians².
pub fn msae(gt_normals: &[Vec3], pred_normals: &[Vec3]) -> Result<f64> {
    if gt_normals.len() != pred_normals.len() {
        return Err(Error::InvalidInput(format!(
            "{} reference normals but {} predictions",
            gt_normals.len(),
            pred_normals.len()
        )));
    }
    if gt_normals.is_empty() {
        return Err(Error::InvalidInput("no normals to compare".into()));
    }
    let sum: f64 = gt_normals
        .iter()
        .zip(pred_normals)
        .map(|(a, b)| unoriented_angle(a, b).powi(2))
        .sum();
    Ok(sum / gt_normals.len() as f64)
}

/// Squared distance from each query point to its nearest reference point.
pub fn nearest_squared_distances(reference: &[Vec3], queries: &[Vec3]) -> Result<Vec<f64>> {
    let index = SpatialIndex::build(reference);
    queries
        .par_iter()
        .map(|q| Ok(index.knn_with_distances(q, 1)?[0].1))
        .collect()
}

/// Mean squared nearest-neighbor distance in both directions, summed.
pub fn chamfer(gt: &PointCloud, filtered: &PointCloud) -> Result<f64> {
    let forward = nearest_squared_distances(gt.points(), filtered.points())?;
    let backward = nearest_squared_distances(filtered.points(), gt.points())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&forward) + mean(&backward))
}

/// Distance from every point to the nearest mesh triangle.
pub fn point2surface_distances(points: &[Vec3], mesh: &TriangleMesh) -> Result<Vec<f64>> {
    let index = MeshIndex::build(mesh)?;
    Ok(points.par_iter().map(|p| index.distance(p)).collect())
}

/// Mean point-to-mesh distance.
pub fn point2surface(filtered: &PointCloud, mesh: &TriangleMesh) -> Result<f64> {
    let d = point2surface_distances(filtered.points(), mesh)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// PCA normals and the points where the neighborhood was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaNormals {
    pub normals: Vec<Vec3>,
    /// Set where the neighborhood had no spread and `+z` was used instead.
    pub fallback: Vec<bool>,
}

/// Smallest-eigenvalue eigenvector of the centered covariance of the `k`
/// nearest points (the point itself included), oriented to `z ≥ 0`, or
/// `x ≥ 0` when `z` is zero.
pub fn pca_normals(cloud: &PointCloud, k: usize) -> Result<PcaNormals> {
    if k < 3 {
        return Err(Error::InvalidInput(format!("PCA normals need k ≥ 3, got {k}")));
    }
    let points = cloud.points();
    let k = if k > points.len() {
        warn!("PCA neighborhood of {k} clamped to {} points", points.len());
        points.len()
    } else {
        k
    };
    let index = SpatialIndex::build(points);
    let per_point: Vec<(Vec3, bool)> = points
        .par_iter()
        .map(|p| {
            let hood = index.knn(p, k)?;
            let mean: Vec3 = hood.iter().map(|&j| points[j]).sum::<Vec3>() / hood.len() as f64;
            let mut cov = Mat3::zeros();
            for &j in &hood {
                let d = points[j] - mean;
                cov += d * d.transpose();
            }
            cov /= hood.len() as f64;
            let eigen = eigen3_symmetric(&cov)?;
            if eigen.values[1] <= 1e-14 * eigen.values[0].max(f64::MIN_POSITIVE) {
                return Ok((Vec3::z(), true));
            }
            let mut n = eigen.vector(2);
            if n.z < 0.0 || (n.z == 0.0 && n.x < 0.0) {
                n = -n;
            }
            Ok((n, false))
        })
        .collect::<Result<_>>()?;
    Ok(PcaNormals {
        normals: per_point.iter().map(|(n, _)| *n).collect(),
        fallback: per_point.iter().map(|(_, f)| *f).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub gt_points: usize,
    pub pred_points: usize,
    pub sharp_points: usize,
}

/// Metrics for one prediction. Absent fields could not be computed from the
/// supplied inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msae: Option<f64>,
    pub chamfer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharp_msae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharp_p2s: Option<f64>,
    pub counts: MetricCounts,
}

/// Per-point errors for external plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct PointErrors {
    pub angle: Option<Vec<f64>>,
    pub surface_distance: Option<Vec<f64>>,
    pub nearest_gt_distance: Vec<f64>,
}

impl PointErrors {
    /// CSV with one row per predicted point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,nearest_gt_distance,angle,surface_distance\n");
        let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map_or(String::new(), |v| v[i].to_string());
        for (i, d) in self.nearest_gt_distance.iter().enumerate() {
            let _ = writeln!(out, "{i},{d},{},{}", opt(&self.angle, i), opt(&self.surface_distance, i));
        }
        out
    }
}

fn masked_mean(values: &[f64], mask: &[bool]) -> Option<f64> {
    let picked: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Computes every metric the inputs allow, together with per-point errors.
///
/// MSAE needs normals on both clouds and equal point counts. Sharp-feature
/// metrics use the mask indices on both clouds.
pub fn evaluate_detailed(
    gt: &PointCloud,
    pred: &PointCloud,
    mesh: Option<&TriangleMesh>,
    sharp_mask: Option<&[bool]>,
) -> Result<(MetricsReport, PointErrors)> {
    let angles = match (gt.normals(), pred.normals()) {
        (Some(a), Some(b)) if a.len() == b.len() => Some(a.iter().zip(b).map(|(x, y)| unoriented_angle(x, y)).collect::<Vec<_>>()),
        (Some(_), Some(_)) => {
            warn!("msae skipped: {} reference points, {} predicted", gt.len(), pred.len());
            None
        }
        _ => {
            warn!("msae skipped: normals missing");
            None
        }
    };
    let surface = mesh.map(|m| point2surface_distances(pred.points(), m)).transpose()?;
    let nearest = nearest_squared_distances(gt.points(), pred.points())?;
    let mask = match sharp_mask {
        Some(m) if m.len() == pred.len() && m.len() == gt.len() => Some(m),
        Some(m) => {
            warn!("sharp metrics skipped: mask has {} entries for {} points", m.len(), pred.len());
            None
        }
        None => None,
    };
    let squared: Option<Vec<f64>> = angles.as_ref().map(|a| a.iter().map(|t| t * t).collect());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let report = MetricsReport {
        msae: squared.as_deref().map(mean),
        chamfer: chamfer(gt, pred)?,
        p2s: surface.as_deref().map(mean),
        sharp_msae: mask.zip(squared.as_deref()).and_then(|(m, s)| masked_mean(s, m)),
        sharp_p2s: mask.zip(surface.as_deref()).and_then(|(m, s)| masked_mean(s, m)),
        counts: MetricCounts {
            gt_points: gt.len(),
            pred_points: pred.len(),
            sharp_points: mask.map_or(0, |m| m.iter().filter(|&&x| x).count()),
        },
    };
    let errors = PointErrors {
        angle: angles,
        surface_distance: surface,
        nearest_gt_distance: nearest.iter().map(|d| d.sqrt()).collect(),
    };
    Ok((report, errors))
}

pub fn evaluate(
    gt: &PointCloud,
    pred: &PointCloud,
    mesh: Option<&TriangleMesh>,
    sharp_mask: Option<&[bool]>,
) -> Result<MetricsReport> {
    evaluate_detailed(gt, pred, mesh, sharp_mask).map(|(r, _)| r)
}
