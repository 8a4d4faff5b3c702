//! Point clouds, spatial indexing, patches and canonical frames.

mod eigen;
mod kdtree;
mod patch;

pub use eigen::{eigen3_symmetric, SymmetricEigen3};
pub use kdtree::SpatialIndex;
pub use patch::{
    apply_frame, canonical_frame, extract_patch, invert_frame, rotate_patch, Axis,
    CanonicalFrame, IndexedCloud, Patch, AUGMENTATION_ANGLES, PATCH_SIZE,
};
pub(crate) use patch::sample_neighborhood;

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Tolerance on the length of stored unit normals.
pub const NORMAL_UNIT_TOLERANCE: f64 = 1e-6;

/// Positions with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud has no points".into()));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some((i, n)) = normals
            .iter()
            .enumerate()
            .find(|(_, n)| (n.norm() - 1.0).abs() > NORMAL_UNIT_TOLERANCE)
        {
            return Err(Error::InvalidInput(format!(
                "normal {i} has length {} (expected unit length)",
                n.norm()
            )));
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub(crate) fn require_normals(&self) -> Result<&[Vec3]> {
        self.normals()
            .ok_or_else(|| Error::InvalidInput("point cloud has no normals".into()))
    }

    /// Same normals, new positions. Point counts must agree.
    pub fn with_points(&self, points: Vec<Vec3>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} replacement points for {} points",
                points.len(),
                self.points.len()
            )));
        }
        Ok(Self {
            points,
            normals: self.normals.clone(),
        })
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bounding_box_diagonal(&self.points).expect("point clouds are never empty")
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut out = Self::new(points)?;
        out.normals = self
            .normals
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i]).collect());
        Ok(out)
    }
}

/// Axis-aligned bounding box of a point set.
pub fn bounding_box(points: &[Vec3]) -> Result<(Vec3, Vec3)> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("bounding box of an empty point set".into()))?;
    Ok(points.iter().fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Length of the axis-aligned bounding-box diagonal.
pub fn bounding_box_diagonal(points: &[Vec3]) -> Result<f64> {
    let (lo, hi) = bounding_box(points)?;
    Ok((hi - lo).norm())
}
