//! Synthetic training data: noisy variants, contrastive pairs, regression
//! samples, sharp-feature masks, density resampling and analytic shapes.

mod density;
mod shapes;
mod sharp;

pub use density::{density_keep_indices, density_resample, DensityRegime};
pub use shapes::Shape;
pub use sharp::{classify_sharp_features, SHARP_ANGLE_RANGE, SHARP_NEIGHBORS};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    apply_frame, canonical_frame, rotate_patch, sample_neighborhood, Axis, CanonicalFrame,
    IndexedCloud, Patch, PointCloud, Vec3, AUGMENTATION_ANGLES,
};
use crate::seed;

/// Noise levels as fractions of the bounding-box diagonal.
pub const DEFAULT_SIGMAS: [f64; 5] = [0.0025, 0.005, 0.01, 0.015, 0.025];

/// Patch radius as a fraction of the bounding-box diagonal.
pub const PATCH_RADIUS_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Impulsive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma_fraction: f64,
    /// Share of points perturbed; ignored for Gaussian noise.
    pub affected_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma_fraction: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma_fraction,
            affected_fraction: 1.0,
            seed,
        }
    }

    pub fn impulsive(sigma_fraction: f64, affected_fraction: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Impulsive,
            sigma_fraction,
            affected_fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_fraction >= 0.0) || !self.sigma_fraction.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be a non-negative fraction, got {}",
                self.sigma_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.affected_fraction) {
            return Err(Error::InvalidInput(format!(
                "affected fraction must lie in [0, 1], got {}",
                self.affected_fraction
            )));
        }
        Ok(())
    }
}

/// Perturbs positions with zero-mean Gaussian noise of standard deviation
/// `sigma_fraction` times the bounding-box diagonal. Normals are carried over.
pub fn add_noise(cloud: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    spec.validate()?;
    let sigma = spec.sigma_fraction * cloud.bbox_diagonal();
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = seed::rng(spec.seed, &[]);
    let mut points = cloud.points().to_vec();
    let jitter = |p: &mut Vec3, rng: &mut seed::Rng| {
        *p += Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    };
    match spec.kind {
        NoiseKind::Gaussian => points.iter_mut().for_each(|p| jitter(p, &mut rng)),
        NoiseKind::Impulsive => {
            let count = (spec.affected_fraction * points.len() as f64).round() as usize;
            let mut chosen = index::sample(&mut rng, points.len(), count).into_vec();
            chosen.sort_unstable();
            for i in chosen {
                jitter(&mut points[i], &mut rng);
            }
        }
    }
    cloud.with_points(points)
}

/// A clean cloud and its noisy copies, each with a spatial index.
#[derive(Debug, Clone)]
pub struct VariantSet {
    variants: Vec<IndexedCloud>,
}

impl VariantSet {
    /// Assembles a set from existing clouds, e.g. ones read back from disk.
    pub fn from_parts(clean: PointCloud, noisy: Vec<(f64, PointCloud)>) -> Result<Self> {
        clean.require_normals()?;
        let mut variants = vec![IndexedCloud::new(clean)];
        for (sigma, cloud) in noisy {
            if cloud.len() != variants[0].len() {
                return Err(Error::Data(format!(
                    "variant with sigma {sigma} has {} points, clean cloud {}",
                    cloud.len(),
                    variants[0].len()
                )));
            }
            variants.push(IndexedCloud::with_sigma(cloud, sigma));
        }
        Ok(Self { variants })
    }

    pub fn clean(&self) -> &PointCloud {
        &self.variants[0].cloud
    }

    /// `(sigma_fraction, cloud)` for every noisy copy, in construction order.
    pub fn noisy(&self) -> impl Iterator<Item = (f64, &PointCloud)> {
        self.variants[1..].iter().map(|v| (v.sigma, &v.cloud))
    }

    /// Clean cloud first, then the noisy ones.
    pub fn variants(&self) -> &[IndexedCloud] {
        &self.variants
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point_count(&self) -> usize {
        self.variants[0].len()
    }
}

/// Clean cloud plus one independently seeded Gaussian copy per sigma.
pub fn make_variant_set(cloud: &PointCloud, sigmas: &[f64], seed: u64) -> Result<VariantSet> {
    cloud.require_normals()?;
    let mut variants = vec![IndexedCloud::new(cloud.clone())];
    for (k, &sigma) in sigmas.iter().enumerate() {
        let spec = NoiseSpec::gaussian(sigma, seed::derive(seed, &[k as u64]));
        variants.push(IndexedCloud::with_sigma(add_noise(cloud, &spec)?, sigma));
    }
    Ok(VariantSet { variants })
}

/// Two views of the same neighborhood, both in the first view's canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastivePair {
    pub first: Patch,
    /// Canonicalized by the first view's frame, then rotated.
    pub second: Patch,
    pub center_index: usize,
    pub axis: Axis,
    pub angle: f64,
}

pub fn sample_contrastive_pair(vs: &VariantSet, center_index: usize, rng: &mut impl Rng) -> Result<ContrastivePair> {
    if center_index >= vs.point_count() {
        return Err(Error::InvalidInput(format!(
            "center index {center_index} out of range for {} points",
            vs.point_count()
        )));
    }
    let a = &vs.variants[rng.random_range(0..vs.len())];
    let b = &vs.variants[rng.random_range(0..vs.len())];
    let p = a.extract_patch(center_index, PATCH_RADIUS_FRACTION * a.diagonal, rng)?;
    let q = b.extract_patch(center_index, PATCH_RADIUS_FRACTION * b.diagonal, rng)?;
    let frame = canonical_frame(&p)?;
    let axis = Axis::ALL[rng.random_range(0..3)];
    let angle = AUGMENTATION_ANGLES[rng.random_range(0..AUGMENTATION_ANGLES.len())];
    Ok(ContrastivePair {
        first: p.canonicalize(&frame),
        second: rotate_patch(&q.canonicalize(&frame), axis, angle),
        center_index,
        axis,
        angle,
    })
}

/// Regressor input and targets, all in the noisy patch's canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub noisy_patch: Patch,
    pub frame: CanonicalFrame,
    pub gt_patch: Vec<Vec3>,
    pub gt_normals: Vec<Vec3>,
    /// Clean counterpart of the center point.
    pub gt_center: Vec3,
    pub gt_center_normal: Vec3,
}

/// Builds a sample around `center_index`. The clean neighborhood is gathered
/// within the noisy patch radius of the noisy center and always contains the
/// clean counterpart of the center.
pub fn build_training_sample(
    clean: &IndexedCloud,
    noisy: &IndexedCloud,
    center_index: usize,
    rng: &mut impl Rng,
) -> Result<TrainingSample> {
    let normals = clean.cloud.require_normals()?;
    if clean.len() != noisy.len() {
        return Err(Error::InvalidInput(format!(
            "clean cloud has {} points, noisy cloud {}",
            clean.len(),
            noisy.len()
        )));
    }
    let radius = PATCH_RADIUS_FRACTION * noisy.diagonal;
    let patch = noisy.extract_patch(center_index, radius, rng)?;
    let frame = canonical_frame(&patch)?;
    let center = patch.center;
    let local = |p: &Vec3| apply_frame(&frame, &((p - center) / radius));
    let gt = sample_neighborhood(&clean.index, &center, center_index, radius, rng);
    let clean_points = clean.cloud.points();
    Ok(TrainingSample {
        gt_patch: gt.iter().map(|&j| local(&clean_points[j])).collect(),
        gt_normals: gt.iter().map(|&j| apply_frame(&frame, &normals[j])).collect(),
        gt_center: local(&clean_points[center_index]),
        gt_center_normal: apply_frame(&frame, &normals[center_index]),
        noisy_patch: patch.canonicalize(&frame),
        frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PATCH_SIZE;

    fn sphere(n: usize) -> PointCloud {
        Shape::Sphere.sample(n, 7)
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = sphere(500);
        assert_eq!(add_noise(&c, &NoiseSpec::gaussian(0.0, 1)).unwrap(), c);
    }

    #[test]
    fn gaussian_std_matches_sigma() {
        let c = sphere(100_000);
        let spec = NoiseSpec::gaussian(0.01, 3);
        let noisy = add_noise(&c, &spec).unwrap();
        let sigma = 0.01 * c.bbox_diagonal();
        for axis in 0..3 {
            let d: Vec<f64> = noisy.points().iter().zip(c.points()).map(|(a, b)| a[axis] - b[axis]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            assert!((var.sqrt() / sigma - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn impulsive_touches_exact_count() {
        let c = sphere(10_000);
        let noisy = add_noise(&c, &NoiseSpec::impulsive(0.01, 0.3, 5)).unwrap();
        let moved = noisy.points().iter().zip(c.points()).filter(|(a, b)| a != b).count();
        assert_eq!(moved, 3000);
    }

    #[test]
    fn noise_rejects_bad_specs() {
        let c = sphere(10);
        assert!(add_noise(&c, &NoiseSpec::gaussian(-0.1, 0)).is_err());
        assert!(add_noise(&c, &NoiseSpec::impulsive(0.1, 1.5, 0)).is_err());
    }

    #[test]
    fn variant_set_shapes() {
        let c = sphere(2000);
        let vs = make_variant_set(&c, &DEFAULT_SIGMAS, 1).unwrap();
        assert_eq!(vs.len(), 6);
        assert!(vs.noisy().all(|(_, n)| n.len() == 2000));
        assert_eq!(make_variant_set(&c, &[], 1).unwrap().len(), 1);
        assert!(make_variant_set(&c.clone().without_normals(), &[0.01], 1).is_err());
        let again = make_variant_set(&c, &DEFAULT_SIGMAS, 1).unwrap();
        assert!(vs.noisy().zip(again.noisy()).all(|(a, b)| a == b));
        let parts: Vec<(f64, PointCloud)> = vs.noisy().map(|(s, n)| (s, n.clone())).collect();
        let rebuilt = VariantSet::from_parts(c.clone(), parts).unwrap();
        assert!(rebuilt.noisy().zip(vs.noisy()).all(|(a, b)| a == b));
        let short = sphere(10).without_normals();
        assert!(VariantSet::from_parts(c.clone(), vec![(0.01, short)]).is_err());
    }

    #[test]
    fn contrastive_pair_shares_center_and_frame() {
        let vs = make_variant_set(&sphere(5000), &[0.0, 0.025], 2).unwrap();
        let mut rng = seed::rng(9, &[]);
        let mut radii_differ = false;
        for i in 0..40 {
            let pair = sample_contrastive_pair(&vs, i * 7, &mut rng).unwrap();
            assert_eq!(pair.first.center_index, pair.second.center_index);
            assert_eq!(pair.first.points.len(), PATCH_SIZE);
            assert_eq!(pair.first.points[0], Vec3::zeros());
            assert!(pair.second.points[0].norm() < 1e-12);
            radii_differ |= pair.first.radius != pair.second.radius;
        }
        assert!(radii_differ);
        assert!(sample_contrastive_pair(&vs, 5000, &mut rng).is_err());
    }

    #[test]
    fn clean_pair_without_rotation_matches() {
        let vs = make_variant_set(&sphere(3000), &[], 2).unwrap();
        let mut rng = seed::rng(10, &[]);
        let pair = (0..200)
            .map(|_| sample_contrastive_pair(&vs, 11, &mut rng).unwrap())
            .find(|p| p.angle == 0.0)
            .unwrap();
        let mut a = pair.first.points.clone();
        let mut b = pair.second.points.clone();
        let key = |p: &Vec3| (p.x, p.y, p.z);
        a.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        b.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        a.dedup();
        b.dedup();
        assert_eq!(a, b);
    }

    #[test]
    fn training_sample_targets() {
        let clean = sphere(5000);
        let vs = make_variant_set(&clean, &[0.01], 4).unwrap();
        let mut rng = seed::rng(12, &[]);
        let (c, n) = (&vs.variants()[0], &vs.variants()[1]);
        let s = build_training_sample(c, n, 17, &mut rng).unwrap();
        assert_eq!(s.gt_patch.len(), PATCH_SIZE);
        assert!(s.gt_normals.iter().all(|v| (v.norm() - 1.0).abs() < 1e-9));
        assert_eq!(s.gt_patch[0], s.gt_center);
        let radius = PATCH_RADIUS_FRACTION * n.diagonal;
        let bound = clean
            .points()
            .iter()
            .map(|p| (p - n.cloud.points()[17]).norm())
            .fold(0.0, f64::max)
            / radius;
        assert!(s.gt_patch.iter().all(|p| p.norm() <= bound + 1e-12));
        assert!(s.gt_patch[1..].iter().all(|p| p.norm() < 1.0 + 1e-12));
        let world = s.frame.to_world(&s.gt_center);
        assert!((world - clean.points()[17]).norm() < 1e-12);
    }

    #[test]
    fn zero_noise_sample_uses_same_geometry() {
        let clean = sphere(3000);
        let c = IndexedCloud::new(clean);
        let mut rng = seed::rng(13, &[]);
        let s = build_training_sample(&c, &c, 5, &mut rng).unwrap();
        assert_eq!(s.gt_center, Vec3::zeros());
        for p in &s.noisy_patch.points {
            assert!(s.gt_patch.iter().any(|q| (p - q).norm() < 1e-12) || p.norm() >= 1.0);
        }
    }
}
