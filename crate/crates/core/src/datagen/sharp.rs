use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::Result;
use crate::geom::{PointCloud, SpatialIndex};

pub const SHARP_NEIGHBORS: usize = 10;

/// Open interval of neighbor normal angles that mark a point as sharp.
pub const SHARP_ANGLE_RANGE: (f64, f64) = (PI / 6.0, 5.0 * PI / 6.0);

/// Flags points whose normal differs from any of their nearest neighbors'
/// normals by an angle strictly inside [`SHARP_ANGLE_RANGE`].
pub fn classify_sharp_features(cloud: &PointCloud) -> Result<Vec<bool>> {
    let normals = cloud.require_normals()?;
    let points = cloud.points();
    let index = SpatialIndex::build(points);
    let k = (SHARP_NEIGHBORS + 1).min(points.len());
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let near = index.knn(&points[i], k)?;
            Ok(near
                .into_iter()
                .filter(|&j| j != i)
                .take(SHARP_NEIGHBORS)
                .any(|j| {
                    let theta = normals[i].dot(&normals[j]).clamp(-1.0, 1.0).acos();
                    theta > SHARP_ANGLE_RANGE.0 && theta < SHARP_ANGLE_RANGE.1
                }))
        })
        .collect()
}
