use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stream;
use crate::datagen::{sample_contrastive_pair, VariantSet};
use crate::error::{Error, Result};
use crate::geom::Patch;
use crate::loss::{nt_xent_var, ContrastiveLossConfig};
use crate::net::{points_tensor, EncoderWeights, ProjectionWeights};
use crate::seed;
use crate::tensor::{Adam, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Adam learning rate.
    pub lr: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub seed: u64,
    /// Caps the number of contrastive pairs drawn per epoch. `None` visits
    /// every point of every shape once.
    pub pairs_per_epoch: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            lr: 3e-4,
            batch_size: 512,
            tau: 0.01,
            seed: 0,
            pairs_per_epoch: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("pretraining needs at least one epoch".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        ContrastiveLossConfig {
            tau: self.tau,
            batch_size: self.batch_size,
        }
        .validate()?;
        if self.pairs_per_epoch.is_some_and(|p| p < 2) {
            return Err(Error::Config("pairs_per_epoch must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: EncoderWeights,
    /// Only needed to evaluate the contrastive objective; filtering discards it.
    pub projection: ProjectionWeights,
    /// Mean NT-Xent loss per epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

fn project(enc: &EncoderWeights, proj: &ProjectionWeights, patch: &Patch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ev = enc.bind_frozen(&mut tape);
    let pv = proj.bind_frozen(&mut tape);
    let x = tape.constant(points_tensor(&patch.points));
    let f = enc.forward(&mut tape, &ev, x)?;
    let z = proj.forward(&mut tape, &pv, f)?;
    Ok(tape.value(z).clone())
}

/// Parameter gradients of `z(patch) · g` for a fixed `g`.
fn pullback(
    enc: &EncoderWeights,
    proj: &ProjectionWeights,
    patch: &Patch,
    g: Tensor,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let ev = enc.bind(&mut tape);
    let pv = proj.bind(&mut tape);
    let x = tape.constant(points_tensor(&patch.points));
    let f = enc.forward(&mut tape, &ev, x)?;
    let z = proj.forward(&mut tape, &pv, f)?;
    let g = tape.constant(g);
    let s = tape.dot(z, g)?;
    let grads = tape.backward(s)?;
    Ok((enc.params().collect_grads(&ev, &grads), proj.params().collect_grads(&pv, &grads)))
}

fn stack(rows: &[Tensor]) -> Result<Tensor> {
    let d = rows.first().map_or(0, |r| r.len());
    Tensor::matrix(rows.len(), d, rows.iter().flat_map(|r| r.data().to_vec()).collect())
}

fn row(t: &Tensor, r: usize) -> Tensor {
    let d = t.shape()[1];
    Tensor::vector(t.data()[r * d..(r + 1) * d].to_vec())
}

/// One optimizer step on a batch of pairs; returns the batch loss.
///
/// Embeddings are computed first without recording, the loss gradient with
/// respect to them is taken on a small tape, and each patch is then replayed
/// to pull that gradient back into the weights. Memory stays at one patch
/// graph per worker.
fn train_batch(
    enc: &mut EncoderWeights,
    proj: &mut ProjectionWeights,
    adam_enc: &mut Adam,
    adam_proj: &mut Adam,
    batch: &[(Patch, Patch)],
    tau: f64,
) -> Result<f64> {
    let patches: Vec<&Patch> = batch.iter().map(|(p, _)| p).chain(batch.iter().map(|(_, q)| q)).collect();
    let (e, p) = (&*enc, &*proj);
    let z: Vec<Tensor> = patches.par_iter().map(|patch| project(e, p, patch)).collect::<Result<_>>()?;
    let n = batch.len();
    let (zp, zq) = (stack(&z[..n])?, stack(&z[n..])?);
    let mut tape = Tape::new();
    let (a, b) = (tape.variable(zp), tape.variable(zq));
    let loss = nt_xent_var(&mut tape, a, b, tau)?;
    let value = tape.scalar_value(loss)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("contrastive loss became {value}")));
    }
    let grads = tape.backward(loss)?;
    let (ga, gb) = (grads.get(a).expect("views require grad"), grads.get(b).expect("views require grad"));
    let dz: Vec<Tensor> = (0..n).map(|r| row(ga, r)).chain((0..n).map(|r| row(gb, r))).collect();

    enc.params_mut().clear_grads();
    proj.params_mut().clear_grads();
    let chunk = 2 * rayon::current_num_threads().max(1);
    for (patch_chunk, dz_chunk) in patches.chunks(chunk).zip(dz.chunks(chunk)) {
        let (e, p) = (&*enc, &*proj);
        let parts: Vec<_> = patch_chunk
            .par_iter()
            .zip(dz_chunk.par_iter())
            .map(|(patch, g)| pullback(e, p, patch, g.clone()))
            .collect::<Result<_>>()?;
        for (ge, gp) in parts {
            enc.params_mut().accumulate_grads(&ge)?;
            proj.params_mut().accumulate_grads(&gp)?;
        }
    }
    adam_enc.step(enc.params_mut())?;
    adam_proj.step(proj.params_mut())?;
    Ok(value)
}

/// Contrastive pretraining of the encoder and projection head with Adam.
pub fn pretrain_encoder(dataset: &[VariantSet], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("pretraining needs at least one shape".into()));
    }
    let mut enc = EncoderWeights::init(seed::derive(cfg.seed, &[stream::INIT, 0]));
    let mut proj = ProjectionWeights::init(seed::derive(cfg.seed, &[stream::INIT, 1]));
    let mut adam_enc = Adam::new(cfg.lr);
    let mut adam_proj = Adam::new(cfg.lr);
    let centers: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(s, vs)| (0..vs.point_count()).map(move |i| (s, i)))
        .collect();
    let per_epoch = cfg.pairs_per_epoch.map_or(centers.len(), |p| p.min(centers.len()));
    if per_epoch < 2 {
        return Err(Error::Data("pretraining needs at least 2 points".into()));
    }

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order = centers.clone();
        order.shuffle(&mut seed::rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        order.truncate(per_epoch);
        let mut total = 0.0;
        let mut count = 0;
        let mut degenerate = 0;
        for ids in order.chunks(cfg.batch_size) {
            let drawn: Vec<Option<(Patch, Patch)>> = ids
                .par_iter()
                .map(|&(s, i)| {
                    let mut rng = seed::rng(cfg.seed, &[stream::PAIR, epoch as u64, s as u64, i as u64]);
                    match sample_contrastive_pair(&dataset[s], i, &mut rng) {
                        Ok(pair) => Ok(Some((pair.first, pair.second))),
                        Err(Error::DegenerateCovariance) => Ok(None),
                        Err(e) => Err(Error::Data(format!("shape {s}, point {i}: {e}"))),
                    }
                })
                .collect::<Result<_>>()?;
            degenerate += drawn.iter().filter(|d| d.is_none()).count();
            let batch: Vec<(Patch, Patch)> = drawn.into_iter().flatten().collect();
            if batch.len() < 2 {
                continue;
            }
            let loss = train_batch(&mut enc, &mut proj, &mut adam_enc, &mut adam_proj, &batch, cfg.tau)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        if degenerate > 0 {
            warn!("pretrain epoch {}: skipped {degenerate} pairs with degenerate patches", epoch + 1);
        }
        if count == 0 {
            return Err(Error::Data(format!("pretrain epoch {}: no batch had 2 usable pairs", epoch + 1)));
        }
        let mean = total / count as f64;
        info!(
            "pretrain epoch {}/{}: loss {mean:.6} ({:.1}s)",
            epoch + 1,
            cfg.epochs,
            start.elapsed().as_secs_f64()
        );
        epoch_losses.push(mean);
    }
    enc.params_mut().clear_grads();
    proj.params_mut().clear_grads();
    Ok(PretrainOutcome {
        encoder: enc,
        projection: proj,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_variant_set, Shape};
    use crate::geom::PATCH_SIZE;
    use crate::loss::nt_xent_batch;
    use crate::tensor::gradcheck;

    #[test]
    fn config_validation() {
        assert!(PretrainConfig::default().validate().is_ok());
        assert!(PretrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(PretrainConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        assert!(pretrain_encoder(&[], &PretrainConfig { epochs: 1, ..Default::default() }).is_err());
    }

    fn toy_patch(seed: u64) -> Patch {
        use rand::Rng;
        let mut rng = seed::rng(seed, &[]);
        Patch {
            points: (0..PATCH_SIZE)
                .map(|_| crate::geom::Vec3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.2))
                .collect(),
            center_index: 0,
            center: Default::default(),
            radius: 1.0,
            source_sigma: 0.0,
        }
    }

    /// The two-phase gradient equals the gradient of the batch loss taken on
    /// one tape, checked on a few projection coordinates by finite differences.
    #[test]
    fn replayed_gradient_matches_finite_differences() {
        let enc = EncoderWeights::init(1);
        let proj = ProjectionWeights::init(2);
        let batch: Vec<(Patch, Patch)> = (0..3).map(|k| (toy_patch(k), toy_patch(k + 10))).collect();
        let loss_of = |proj: &ProjectionWeights| {
            let z: Vec<Tensor> = batch
                .iter()
                .map(|(p, _)| project(&enc, proj, p).unwrap())
                .chain(batch.iter().map(|(_, q)| project(&enc, proj, q).unwrap()))
                .collect();
            nt_xent_batch(&stack(&z[..3]).unwrap(), &stack(&z[3..]).unwrap(), 0.5).unwrap()
        };
        let (mut e2, mut p2) = (enc.clone(), proj.clone());
        let mut adam_e = Adam::new(0.0);
        let mut adam_p = Adam::new(0.0);
        let value = train_batch(&mut e2, &mut p2, &mut adam_e, &mut adam_p, &batch, 0.5).unwrap();
        assert!((value - loss_of(&proj)).abs() < 1e-12);
        let layer = p2.params().by_index(4);
        let analytic = layer.grad().unwrap().data().to_vec();
        for k in [0, 7, 300, 1000] {
            let h = 1e-5;
            let mut plus = proj.clone();
            plus.params_mut().by_index_mut(4).value_mut().data_mut()[k] += h;
            let mut minus = proj.clone();
            minus.params_mut().by_index_mut(4).value_mut().data_mut()[k] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            assert!(gradcheck::relative_error(analytic[k], numeric) < 1e-4, "{k}: {} vs {numeric}", analytic[k]);
        }
    }

    #[test]
    fn tiny_run_is_deterministic() {
        let vs = vec![make_variant_set(&Shape::Sphere.sample(800, 1), &[0.01], 2).unwrap()];
        let cfg = PretrainConfig {
            epochs: 2,
            batch_size: 4,
            pairs_per_epoch: Some(8),
            seed: 5,
            ..Default::default()
        };
        let a = pretrain_encoder(&vs, &cfg).unwrap();
        let b = pretrain_encoder(&vs, &cfg).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.epoch_losses.len(), 2);
        assert_ne!(a.encoder, EncoderWeights::init(seed::derive(5, &[stream::INIT, 0])));
    }
}
