use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{bounding_box, PointCloud};
use crate::seed;

/// Keep-probability profile along the longest bounding-box axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DensityRegime {
    /// Linear ramp from `min_keep` at the low end to 1 at the high end.
    Gradient { min_keep: f64 },
    /// `bands` equal slabs alternating between keep probability 1 and `low_keep`.
    Striped { bands: usize, low_keep: f64 },
}

impl DensityRegime {
    pub fn gradient() -> Self {
        DensityRegime::Gradient { min_keep: 0.2 }
    }

    pub fn striped() -> Self {
        DensityRegime::Striped { bands: 8, low_keep: 0.2 }
    }

    fn validate(&self) -> Result<()> {
        let p = match *self {
            DensityRegime::Gradient { min_keep } => min_keep,
            DensityRegime::Striped { bands, low_keep } => {
                if bands == 0 {
                    return Err(Error::InvalidInput("striped regime needs at least one band".into()));
                }
                low_keep
            }
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("keep probability {p} outside [0, 1]")));
        }
        Ok(())
    }

    /// Keep probability at normalized coordinate `t` in [0, 1].
    pub fn keep_probability(&self, t: f64) -> f64 {
        match *self {
            DensityRegime::Gradient { min_keep } => min_keep + (1.0 - min_keep) * t,
            DensityRegime::Striped { bands, low_keep } => {
                let band = ((t * bands as f64) as usize).min(bands - 1);
                if band % 2 == 0 {
                    1.0
                } else {
                    low_keep
                }
            }
        }
    }
}

/// Indices of the points kept by `regime`, ascending.
pub fn density_keep_indices(cloud: &PointCloud, regime: DensityRegime, seed: u64) -> Result<Vec<usize>> {
    regime.validate()?;
    let (lo, hi) = bounding_box(cloud.points())?;
    let extent = hi - lo;
    let axis = extent.imax();
    let mut rng = seed::rng(seed, &[]);
    Ok(cloud
        .points()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let t = if extent[axis] > 0.0 { (p[axis] - lo[axis]) / extent[axis] } else { 0.0 };
            let u: f64 = rng.random();
            (u < regime.keep_probability(t)).then_some(i)
        })
        .collect())
}

/// Thins `cloud` to a spatially varying density.
pub fn density_resample(cloud: &PointCloud, regime: DensityRegime, seed: u64) -> Result<PointCloud> {
    let kept = density_keep_indices(cloud, regime, seed)?;
    if kept.is_empty() {
        return Err(Error::Data("density resampling removed every point".into()));
    }
    cloud.select(&kept)
}
