//! Contrastive and regression losses.
//!
//! Each loss has a plain `f64` form and a `*_var` form that records onto a
//! [`Tape`] for training. Both compute the same quantity.

use serde::{Deserialize, Serialize};

use crate::datagen::TrainingSample;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::tensor::{Tape, Tensor, Var};

/// Allowed deviation from unit length for embeddings.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveLossConfig {
    pub tau: f64,
    pub batch_size: usize,
}

impl Default for ContrastiveLossConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            batch_size: 512,
        }
    }
}

impl ContrastiveLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "contrastive batches need at least 2 pairs, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Distance to the clean patch plus a centering term.
    Joint,
    /// Direct regression onto the clean center point.
    Alternative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointLossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: u32,
    pub variant: LossVariant,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.01,
            delta: 0.3,
            gamma: 12,
            variant: LossVariant::Joint,
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.gamma == 0 || self.gamma % 2 == 1 {
            return Err(Error::Config(format!(
                "gamma must be a positive even integer, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

fn check_unit_rows(name: &str, z: &Tensor) -> Result<(usize, usize)> {
    let (n, d) = match z.shape() {
        [n, d] if *n > 0 && *d > 0 => (*n, *d),
        s => return Err(Error::InvalidShape(format!("{name}: expected a non-empty matrix, got {s:?}"))),
    };
    for (r, row) in z.data().chunks(d).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput(format!("{name} row {r} has norm {norm}")));
        }
    }
    Ok((n, d))
}

fn check_views(zp: &Tensor, zq: &Tensor, tau: f64) -> Result<usize> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
    }
    let a = check_unit_rows("first view", zp)?;
    let b = check_unit_rows("second view", zq)?;
    if a != b {
        return Err(Error::InvalidShape(format!("view shapes {a:?} and {b:?} differ")));
    }
    Ok(a.0)
}

/// Index of the positive partner of row `a` among the `2n` stacked embeddings.
fn partner(a: usize, n: usize) -> usize {
    (a + n) % (2 * n)
}

/// NT-Xent over `n` positive pairs given as the rows of `zp` and `zq`.
///
/// Every embedding is an anchor once. Its denominator runs over the other
/// `2n − 1` embeddings and the result is the mean over all `2n` anchors.
pub fn nt_xent_batch(zp: &Tensor, zq: &Tensor, tau: f64) -> Result<f64> {
    let n = check_views(zp, zq, tau)?;
    let d = zp.shape()[1];
    let rows: Vec<&[f64]> = zp.data().chunks(d).chain(zq.data().chunks(d)).collect();
    let sim = |a: usize, b: usize| rows[a].iter().zip(rows[b]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut total = 0.0;
    for a in 0..2 * n {
        let others: Vec<f64> = (0..2 * n).filter(|&b| b != a).map(|b| sim(a, b)).collect();
        let hi = others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = hi + others.iter().map(|s| (s - hi).exp()).sum::<f64>().ln();
        total += lse - sim(a, partner(a, n));
    }
    Ok(total / (2 * n) as f64)
}

pub fn nt_xent_var(tape: &mut Tape<'_>, zp: Var, zq: Var, tau: f64) -> Result<Var> {
    let n = check_views(tape.value(zp), tape.value(zq), tau)?;
    let z = tape.concat_rows(&[zp, zq])?;
    let gram = tape.matmul_t(z, z)?;
    let logits = tape.scale(gram, 1.0 / tau);
    let m = 2 * n;
    let mask: Vec<bool> = (0..m * m).map(|k| k / m != k % m).collect();
    let lse = tape.logsumexp_rows(logits, &mask)?;
    let positives: Vec<usize> = (0..m).map(|a| a * m + partner(a, n)).collect();
    let pos = tape.gather(logits, &positives)?;
    let per_anchor = tape.sub(lse, pos)?;
    Ok(tape.mean(per_anchor))
}

fn squared_distances(p: &Vec3, gt: &[Vec3]) -> Result<Vec<f64>> {
    if gt.is_empty() {
        return Err(Error::InvalidInput("ground-truth patch is empty".into()));
    }
    Ok(gt.iter().map(|q| (p - q).norm_squared()).collect())
}

/// First index of the smallest value.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// `(1 − β)·min_j ‖p − p_j‖² + β·max_j ‖p − p_j‖²`.
pub fn position_loss(p: &Vec3, gt: &[Vec3], beta: f64) -> Result<f64> {
    let d = squared_distances(p, gt)?;
    let lo = d[argmin(&d)];
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((1.0 - beta) * lo + beta * hi)
}

/// `1 − [δ cos²θ + (1 − δ) cos^γ θ]` for unit vectors at angle θ.
pub fn angular_term(n: &Vec3, target: &Vec3, delta: f64, gamma: u32) -> f64 {
    let c = n.dot(target);
    1.0 - (delta * c * c + (1.0 - delta) * c.powi(gamma as i32))
}

/// Angular term against the normal of the clean point nearest to `p`
/// (lowest index on ties).
pub fn normal_loss(n: &Vec3, p: &Vec3, gt: &[Vec3], gt_normals: &[Vec3], delta: f64, gamma: u32) -> Result<f64> {
    if gt.len() != gt_normals.len() {
        return Err(Error::InvalidInput(format!(
            "{} ground-truth points but {} normals",
            gt.len(),
            gt_normals.len()
        )));
    }
    let j = argmin(&squared_distances(p, gt)?);
    Ok(angular_term(n, &gt_normals[j], delta, gamma))
}

pub fn joint_loss(p: &Vec3, n: &Vec3, sample: &TrainingSample, cfg: &JointLossConfig) -> Result<f64> {
    let pos = position_loss(p, &sample.gt_patch, cfg.beta)?;
    let nrm = normal_loss(n, p, &sample.gt_patch, &sample.gt_normals, cfg.delta, cfg.gamma)?;
    Ok(cfg.alpha * pos + (1.0 - cfg.alpha) * nrm)
}

pub fn alt_joint_loss(p: &Vec3, n: &Vec3, gt_center: &Vec3, gt_center_normal: &Vec3, cfg: &JointLossConfig) -> f64 {
    cfg.alpha * (p - gt_center).norm_squared()
        + (1.0 - cfg.alpha) * angular_term(n, gt_center_normal, cfg.delta, cfg.gamma)
}

/// Loss selected by `cfg.variant`.
pub fn regression_loss(p: &Vec3, n: &Vec3, sample: &TrainingSample, cfg: &JointLossConfig) -> Result<f64> {
    match cfg.variant {
        LossVariant::Joint => joint_loss(p, n, sample, cfg),
        LossVariant::Alternative => Ok(alt_joint_loss(p, n, &sample.gt_center, &sample.gt_center_normal, cfg)),
    }
}

/// Position term on the tape, with the index of the nearest ground-truth point.
#[derive(Debug, Clone, Copy)]
pub struct PositionTerm {
    pub loss: Var,
    pub nearest: usize,
}

fn points_const(tape: &mut Tape<'_>, pts: &[Vec3]) -> Result<Var> {
    let data = pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    Ok(tape.constant(Tensor::matrix(pts.len(), 3, data)?))
}

fn vec3_const(tape: &mut Tape<'_>, v: &Vec3) -> Var {
    tape.constant(Tensor::vector(vec![v.x, v.y, v.z]))
}

pub fn position_loss_var(tape: &mut Tape<'_>, p: Var, gt: &[Vec3], beta: f64) -> Result<PositionTerm> {
    if gt.is_empty() {
        return Err(Error::InvalidInput("ground-truth patch is empty".into()));
    }
    let gt = points_const(tape, gt)?;
    let neg = tape.scale(p, -1.0);
    let diff = tape.add_row(gt, neg)?;
    let sq = tape.mul(diff, diff)?;
    let dist = tape.sum_cols(sq)?;
    let lo = tape.min_all(dist)?;
    let hi = tape.max_all(dist)?;
    let nearest = tape.extremum_index(lo).expect("min_all records its index");
    let lo = tape.scale(lo, 1.0 - beta);
    let hi = tape.scale(hi, beta);
    Ok(PositionTerm {
        loss: tape.add(lo, hi)?,
        nearest,
    })
}

/// Angular term against a fixed target normal; no gradient reaches the target.
pub fn angular_term_var(tape: &mut Tape<'_>, n: Var, target: &Vec3, delta: f64, gamma: u32) -> Result<Var> {
    let t = vec3_const(tape, target);
    let c = tape.dot(n, t)?;
    let c2 = tape.powi(c, 2);
    let cg = tape.powi(c, gamma as i32);
    let a = tape.scale(c2, delta);
    let b = tape.scale(cg, 1.0 - delta);
    let bracket = tape.add(a, b)?;
    let neg = tape.scale(bracket, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Normal term; the nearest point is selected from the current value of `p`
/// and the selection itself carries no gradient.
pub fn normal_loss_var(
    tape: &mut Tape<'_>,
    n: Var,
    p: &Vec3,
    gt: &[Vec3],
    gt_normals: &[Vec3],
    delta: f64,
    gamma: u32,
) -> Result<Var> {
    if gt.len() != gt_normals.len() {
        return Err(Error::InvalidInput(format!(
            "{} ground-truth points but {} normals",
            gt.len(),
            gt_normals.len()
        )));
    }
    let j = argmin(&squared_distances(p, gt)?);
    angular_term_var(tape, n, &gt_normals[j], delta, gamma)
}

fn weighted(tape: &mut Tape<'_>, alpha: f64, pos: Var, nrm: Var) -> Result<Var> {
    let a = tape.scale(pos, alpha);
    let b = tape.scale(nrm, 1.0 - alpha);
    tape.add(a, b)
}

fn vec3_value(tape: &Tape<'_>, v: Var) -> Result<Vec3> {
    let t = tape.value(v);
    if t.shape() != [3] {
        return Err(Error::InvalidShape(format!("expected a 3-vector, got {:?}", t.shape())));
    }
    Ok(Vec3::from_column_slice(t.data()))
}

pub fn joint_loss_var(tape: &mut Tape<'_>, p: Var, n: Var, sample: &TrainingSample, cfg: &JointLossConfig) -> Result<Var> {
    let pos = position_loss_var(tape, p, &sample.gt_patch, cfg.beta)?;
    if sample.gt_normals.len() != sample.gt_patch.len() {
        return Err(Error::InvalidInput("ground-truth points and normals differ in length".into()));
    }
    let nrm = angular_term_var(tape, n, &sample.gt_normals[pos.nearest], cfg.delta, cfg.gamma)?;
    weighted(tape, cfg.alpha, pos.loss, nrm)
}

pub fn alt_joint_loss_var(
    tape: &mut Tape<'_>,
    p: Var,
    n: Var,
    gt_center: &Vec3,
    gt_center_normal: &Vec3,
    cfg: &JointLossConfig,
) -> Result<Var> {
    vec3_value(tape, p)?;
    let c = vec3_const(tape, gt_center);
    let d = tape.sub(p, c)?;
    let pos = tape.dot(d, d)?;
    let nrm = angular_term_var(tape, n, gt_center_normal, cfg.delta, cfg.gamma)?;
    weighted(tape, cfg.alpha, pos, nrm)
}

pub fn regression_loss_var(
    tape: &mut Tape<'_>,
    p: Var,
    n: Var,
    sample: &TrainingSample,
    cfg: &JointLossConfig,
) -> Result<Var> {
    match cfg.variant {
        LossVariant::Joint => joint_loss_var(tape, p, n, sample, cfg),
        LossVariant::Alternative => {
            alt_joint_loss_var(tape, p, n, &sample.gt_center, &sample.gt_center_normal, cfg)
        }
    }
}
