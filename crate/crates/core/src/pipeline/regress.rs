use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stream;
use crate::datagen::{build_training_sample, TrainingSample, VariantSet};
use crate::error::{Error, Result};
use crate::loss::{regression_loss_var, JointLossConfig};
use crate::net::{EncoderWeights, RegressorWeights};
use crate::seed;
use crate::tensor::{Sgd, Tape, Tensor};

/// Above this many samples per epoch, features are recomputed per batch
/// instead of being kept in memory.
const FEATURE_CACHE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressTrainConfig {
    pub epochs: usize,
    /// SGD learning rate.
    pub lr: f64,
    pub batch_size: usize,
    pub loss: JointLossConfig,
    pub seed: u64,
    /// Trains on a fixed seeded subset of this many samples. `None` uses
    /// every point of every noisy variant.
    pub samples_per_epoch: Option<usize>,
}

impl Default for RegressTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-2,
            batch_size: 32,
            loss: JointLossConfig::default(),
            seed: 0,
            samples_per_epoch: None,
        }
    }
}

impl RegressTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::Config("samples_per_epoch must be positive".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RegressOutcome {
    pub regressor: RegressorWeights,
    /// Mean regression loss per epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

/// Enumerates `(shape, variant, point)` regression samples. Every noisy
/// variant contributes all of its points; a shape without noisy variants
/// contributes its clean cloud.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    dataset: &'a [VariantSet],
    ids: Vec<(usize, usize, usize)>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(dataset: &'a [VariantSet]) -> Self {
        let mut ids = Vec::new();
        for (s, vs) in dataset.iter().enumerate() {
            let variants: Vec<usize> = if vs.len() > 1 { (1..vs.len()).collect() } else { vec![0] };
            for v in variants {
                ids.extend((0..vs.point_count()).map(|i| (s, v, i)));
            }
        }
        Self { dataset, ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sample `k`, a pure function of `seed` and its identity.
    pub fn sample(&self, k: usize, seed: u64) -> Result<TrainingSample> {
        let (s, v, i) = self.ids[k];
        let vs = &self.dataset[s];
        let mut rng = seed::rng(seed, &[stream::SAMPLE, s as u64, v as u64, i as u64]);
        build_training_sample(&vs.variants()[0], &vs.variants()[v], i, &mut rng).map_err(|e| match e {
            Error::DegenerateCovariance => e,
            e => Error::Data(format!("shape {s}, variant {v}, point {i}: {e}")),
        })
    }
}

struct Prepared {
    feature: Tensor,
    sample: TrainingSample,
}

/// Samples and their features. Samples whose noisy patch is degenerate are
/// dropped; the second value counts them.
fn prepare(set: &TrainingSet<'_>, encoder: &EncoderWeights, ids: &[usize], seed: u64) -> Result<(Vec<Prepared>, usize)> {
    let all: Vec<Option<Prepared>> = ids
        .par_iter()
        .map(|&k| {
            let sample = match set.sample(k, seed) {
                Ok(sample) => sample,
                Err(Error::DegenerateCovariance) => return Ok(None),
                Err(e) => return Err(e),
            };
            let feature = Tensor::vector(encoder.encode(&sample.noisy_patch.points)?);
            Ok(Some(Prepared { feature, sample }))
        })
        .collect::<Result<_>>()?;
    let total = all.len();
    let kept: Vec<Prepared> = all.into_iter().flatten().collect();
    let dropped = total - kept.len();
    Ok((kept, dropped))
}

fn sample_grads(reg: &RegressorWeights, item: &Prepared, cfg: &JointLossConfig, weight: f64) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = reg.bind(&mut tape);
    let x = tape.constant_ref(&item.feature);
    let out = reg.forward(&mut tape, &vars, x)?;
    let loss = regression_loss_var(&mut tape, out.displacement, out.normal, &item.sample, cfg)?;
    let value = tape.scalar_value(loss)?;
    let scaled = tape.scale(loss, weight);
    let grads = tape.backward(scaled)?;
    Ok((value, reg.params().collect_grads(&vars, &grads)))
}

/// Trains a fresh regressor with SGD on features from the frozen `encoder`.
pub fn train_regressor(
    dataset: &[VariantSet],
    encoder: &EncoderWeights,
    cfg: &RegressTrainConfig,
) -> Result<RegressOutcome> {
    cfg.validate()?;
    let set = TrainingSet::new(dataset);
    if set.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let mut subset: Vec<usize> = (0..set.len()).collect();
    if let Some(cap) = cfg.samples_per_epoch {
        if cap < set.len() {
            subset.shuffle(&mut seed::rng(cfg.seed, &[stream::SUBSET]));
            subset.truncate(cap);
        }
    }
    let cached = if subset.len() <= FEATURE_CACHE_LIMIT {
        let start = Instant::now();
        let (prepared, dropped) = prepare(&set, encoder, &subset, cfg.seed)?;
        if dropped > 0 {
            warn!("skipped {dropped} training samples with degenerate patches");
        }
        if prepared.is_empty() {
            return Err(Error::Data("every training patch was degenerate".into()));
        }
        info!("encoded {} training patches ({:.1}s)", prepared.len(), start.elapsed().as_secs_f64());
        Some(prepared)
    } else {
        None
    };
    let epoch_size = cached.as_ref().map_or(subset.len(), Vec::len);

    let mut reg = RegressorWeights::init(seed::derive(cfg.seed, &[stream::INIT, 2]));
    let mut sgd = Sgd::new(cfg.lr);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let chunk = 2 * rayon::current_num_threads().max(1);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..epoch_size).collect();
        order.shuffle(&mut seed::rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        let mut count = 0;
        let mut dropped = 0;
        for positions in order.chunks(cfg.batch_size) {
            let fresh;
            let items: Vec<&Prepared> = match &cached {
                Some(all) => positions.iter().map(|&p| &all[p]).collect(),
                None => {
                    let ids: Vec<usize> = positions.iter().map(|&p| subset[p]).collect();
                    let skipped;
                    (fresh, skipped) = prepare(&set, encoder, &ids, cfg.seed)?;
                    dropped += skipped;
                    fresh.iter().collect()
                }
            };
            if items.is_empty() {
                continue;
            }
            count += items.len();
            let weight = 1.0 / items.len() as f64;
            reg.params_mut().clear_grads();
            for part in items.chunks(chunk) {
                let r = &reg;
                let results: Vec<_> = part
                    .par_iter()
                    .map(|item| sample_grads(r, item, &cfg.loss, weight))
                    .collect::<Result<_>>()?;
                for (value, grads) in results {
                    total += value;
                    reg.params_mut().accumulate_grads(&grads)?;
                }
            }
            sgd.step(reg.params_mut())?;
        }
        if dropped > 0 {
            warn!("train epoch {}: skipped {dropped} samples with degenerate patches", epoch + 1);
        }
        if count == 0 {
            return Err(Error::Data("every training patch was degenerate".into()));
        }
        let mean = total / count as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("regression loss became {mean} in epoch {}", epoch + 1)));
        }
        info!(
            "train epoch {}/{}: loss {mean:.6} ({:.1}s)",
            epoch + 1,
            cfg.epochs,
            start.elapsed().as_secs_f64()
        );
        epoch_losses.push(mean);
    }
    reg.params_mut().clear_grads();
    Ok(RegressOutcome {
        regressor: reg,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_variant_set, Shape};
    use crate::loss::{regression_loss, LossVariant};

    fn toy() -> Vec<VariantSet> {
        vec![make_variant_set(&Shape::Sphere.sample(1500, 1), &[0.01], 2).unwrap()]
    }

    #[test]
    fn sample_ids_cover_noisy_variants() {
        let data = toy();
        let set = TrainingSet::new(&data);
        assert_eq!(set.len(), 1500);
        let clean_only = vec![make_variant_set(&Shape::Sphere.sample(100, 1), &[], 2).unwrap()];
        assert_eq!(TrainingSet::new(&clean_only).len(), 100);
        assert_eq!(set.sample(17, 3).unwrap(), set.sample(17, 3).unwrap());
    }

    #[test]
    fn encoder_is_untouched_and_loss_trace_matches_direct_evaluation() {
        let data = toy();
        let encoder = EncoderWeights::init(4);
        let digest = encoder.digest();
        let loss = JointLossConfig {
            variant: LossVariant::Alternative,
            ..Default::default()
        };
        let cfg = RegressTrainConfig {
            epochs: 1,
            batch_size: 64,
            samples_per_epoch: Some(16),
            loss,
            ..Default::default()
        };
        let out = train_regressor(&data, &encoder, &cfg).unwrap();
        assert_eq!(encoder.digest(), digest);

        let set = TrainingSet::new(&data);
        let mut subset: Vec<usize> = (0..set.len()).collect();
        subset.shuffle(&mut seed::rng(cfg.seed, &[stream::SUBSET]));
        subset.truncate(16);
        let init = RegressorWeights::init(seed::derive(cfg.seed, &[stream::INIT, 2]));
        let direct: f64 = subset
            .iter()
            .map(|&k| {
                let s = set.sample(k, cfg.seed).unwrap();
                let r = init.regress(&encoder.encode(&s.noisy_patch.points).unwrap()).unwrap();
                regression_loss(&r.displacement, &r.normal, &s, &loss).unwrap()
            })
            .sum::<f64>()
            / 16.0;
        assert!((out.epoch_losses[0] - direct).abs() < 1e-10);
    }

    #[test]
    fn validation() {
        let encoder = EncoderWeights::zeros();
        let bad = RegressTrainConfig { epochs: 0, ..Default::default() };
        assert!(train_regressor(&toy(), &encoder, &bad).is_err());
        let bad_gamma = RegressTrainConfig {
            loss: JointLossConfig { gamma: 3, ..Default::default() },
            ..Default::default()
        };
        assert!(bad_gamma.validate().is_err());
    }
}
