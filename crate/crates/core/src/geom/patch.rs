use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;

use super::{eigen3_symmetric, Mat3, PointCloud, SpatialIndex, Vec3};
use crate::error::{Error, Result};

/// Number of points in every patch.
pub const PATCH_SIZE: usize = 500;

/// Rotation angles used for augmenting the second view of a contrastive pair.
pub const AUGMENTATION_ANGLES: [f64; 11] = [
    0.0,
    PI / 12.0,
    PI / 6.0,
    PI / 4.0,
    PI / 3.0,
    PI / 2.0,
    7.0 * PI / 12.0,
    2.0 * PI / 3.0,
    3.0 * PI / 4.0,
    5.0 * PI / 6.0,
    PI,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn rotation(self, angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        match self {
            Axis::X => Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            Axis::Y => Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            Axis::Z => Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }
}

/// A fixed-size neighborhood, translated so its center is the origin and
/// scaled by the patch radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub points: Vec<Vec3>,
    pub center_index: usize,
    /// World-space position of the center point.
    pub center: Vec3,
    /// World-space patch radius.
    pub radius: f64,
    /// Noise level (fraction of the bounding-box diagonal) of the source cloud.
    pub source_sigma: f64,
}

impl Patch {
    /// Maps every point through the frame rotation.
    pub fn canonicalize(&self, frame: &CanonicalFrame) -> Patch {
        self.transformed(&frame.rotation)
    }

    pub(crate) fn transformed(&self, m: &Mat3) -> Patch {
        Patch {
            points: self.points.iter().map(|p| m * p).collect(),
            ..self.clone()
        }
    }
}

/// Rotation into the eigenbasis of a patch covariance, plus the center and
/// radius needed to return to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalFrame {
    /// Inverse (transpose) of the eigenvector matrix, eigenvectors ordered by
    /// descending eigenvalue. Rows are the eigenvectors.
    pub rotation: Mat3,
    pub center: Vec3,
    pub radius: f64,
}

impl CanonicalFrame {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            center: Vec3::zeros(),
            radius: 1.0,
        }
    }

    /// World position of a point given in normalized canonical coordinates.
    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.center + invert_frame(self, local) * self.radius
    }
}

pub fn apply_frame(frame: &CanonicalFrame, v: &Vec3) -> Vec3 {
    frame.rotation * v
}

pub fn invert_frame(frame: &CanonicalFrame, v: &Vec3) -> Vec3 {
    frame.rotation.transpose() * v
}

/// Canonical frame of a normalized patch, from the covariance of the patch
/// points about the center point (the origin).
pub fn canonical_frame(patch: &Patch) -> Result<CanonicalFrame> {
    if patch.points.iter().all(|p| *p == Vec3::zeros()) {
        return Err(Error::DegenerateCovariance);
    }
    let mut cov = Mat3::zeros();
    for p in &patch.points {
        cov += p * p.transpose();
    }
    cov /= patch.points.len() as f64;
    let eigen = eigen3_symmetric(&cov)?;
    Ok(CanonicalFrame {
        rotation: eigen.vectors.transpose(),
        center: patch.center,
        radius: patch.radius,
    })
}

pub fn rotate_patch(patch: &Patch, axis: Axis, angle: f64) -> Patch {
    patch.transformed(&axis.rotation(angle))
}

/// Chooses `PATCH_SIZE` point indices for the neighborhood `‖p − query‖ < radius`.
///
/// `anchor` is always the first entry. Larger neighborhoods are downsampled
/// uniformly without replacement; smaller ones are padded with uniform draws
/// (with replacement) from the neighborhood itself.
pub(crate) fn sample_neighborhood(
    index: &SpatialIndex,
    query: &Vec3,
    anchor: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut others = index.within_radius(query, radius);
    others.retain(|&i| i != anchor);
    let mut chosen = Vec::with_capacity(PATCH_SIZE);
    chosen.push(anchor);
    if others.len() >= PATCH_SIZE - 1 {
        let mut picks = index::sample(rng, others.len(), PATCH_SIZE - 1).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|k| others[k]));
    } else {
        chosen.extend_from_slice(&others);
        let gathered = chosen.len();
        while chosen.len() < PATCH_SIZE {
            let k = rng.random_range(0..gathered);
            chosen.push(chosen[k]);
        }
    }
    chosen
}

/// A point cloud with its spatial index and bounding-box diagonal.
#[derive(Debug, Clone)]
pub struct IndexedCloud {
    pub cloud: PointCloud,
    pub index: SpatialIndex,
    pub diagonal: f64,
    pub sigma: f64,
}

impl IndexedCloud {
    pub fn new(cloud: PointCloud) -> Self {
        Self::with_sigma(cloud, 0.0)
    }

    pub fn with_sigma(cloud: PointCloud, sigma: f64) -> Self {
        let index = SpatialIndex::build(cloud.points());
        let diagonal = cloud.bbox_diagonal();
        Self {
            cloud,
            index,
            diagonal,
            sigma,
        }
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn extract_patch(&self, center_index: usize, radius: f64, rng: &mut impl Rng) -> Result<Patch> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!("patch radius must be positive, got {radius}")));
        }
        let points = self.cloud.points();
        let center = *points.get(center_index).ok_or_else(|| {
            Error::InvalidInput(format!("center index {center_index} out of range"))
        })?;
        let chosen = sample_neighborhood(&self.index, &center, center_index, radius, rng);
        Ok(Patch {
            points: chosen.iter().map(|&i| (points[i] - center) / radius).collect(),
            center_index,
            center,
            radius,
            source_sigma: self.sigma,
        })
    }
}

/// Convenience wrapper that indexes `cloud` for a single extraction.
pub fn extract_patch(
    cloud: &PointCloud,
    center_index: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> Result<Patch> {
    IndexedCloud::new(cloud.clone()).extract_patch(center_index, radius, rng)
}
