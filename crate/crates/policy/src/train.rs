use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use viewplan_core::dataset::{iterate_samples, sample_at, DatasetStats, Demonstration};

use crate::checkpoint::Checkpoint;
use crate::error::{PolicyError, Result};
use crate::loss::{batch_gradients, LossParts, Reconstruction, Sample};
use crate::model::{ModelConfig, PolicyInput};
use crate::tape::Tensor;

pub const LAST_DIR: &str = "last";
pub const BEST_DIR: &str = "best";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta: f64,
    pub reconstruction: Reconstruction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            beta: 10.0,
            reconstruction: Reconstruction::L1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PolicyError::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(PolicyError::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.beta >= 0.0) {
            return Err(PolicyError::InvalidArgument(format!(
                "beta {} must be non-negative",
                self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub beta: f64,
    pub step: u64,
    pub seconds: f64,
}

/// Every `(demo, timestep)` sample converted to the model's input format once.
pub fn prepare_samples(
    demos: &[Demonstration],
    stats: &DatasetStats,
    cfg: &ModelConfig,
) -> Result<Vec<Vec<Sample<f32>>>> {
    demos
        .iter()
        .enumerate()
        .map(|(d, demo)| {
            (0..demo.steps.len())
                .map(|t| {
                    let s = sample_at(demos, d, t, cfg.chunk_size, stats);
                    let target = s.action_chunk.iter().flatten().map(|v| *v as f32).collect();
                    Ok(Sample {
                        input: PolicyInput::from_observation(s.observation, stats, cfg)?,
                        target: Tensor::from_vec(cfg.chunk_size, 6, target),
                        mask: s.chunk_mask,
                    })
                })
                .collect()
        })
        .collect()
}

pub fn train(
    demos: &[Demonstration],
    stats: &DatasetStats,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out: Option<&Path>,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Checkpoint> {
    let epochs = cfg.epochs;
    let ckpt = Checkpoint::fresh(model_cfg, stats.clone(), cfg)?;
    continue_training(ckpt, demos, epochs, out, on_epoch)
}

/// Runs `epochs` more epochs. With `out`, writes `out/last` every epoch and
/// `out/best` whenever the epoch reconstruction loss improves.
pub fn continue_training(
    mut ckpt: Checkpoint,
    demos: &[Demonstration],
    epochs: usize,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Checkpoint> {
    if demos.is_empty() {
        return Err(PolicyError::InvalidArgument(
            "training needs at least one demonstration".into(),
        ));
    }
    ckpt.train.validate()?;
    let samples = prepare_samples(demos, &ckpt.stats, &ckpt.model.cfg)?;
    let k = ckpt.model.cfg.chunk_size;
    let latent = ckpt.model.cfg.latent_dim;
    let cfg = ckpt.train.clone();
    let mut best = ckpt
        .history
        .iter()
        .map(|m| m.reconstruction)
        .fold(f64::INFINITY, f64::min);
    for _ in 0..epochs {
        let started = Instant::now();
        let epoch = ckpt.epoch + 1;
        let order_seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ epoch as u64;
        let order: Vec<(usize, usize)> = iterate_samples(demos, k, &ckpt.stats, order_seed)?
            .map(|s| (s.demo_index, s.timestep))
            .collect();
        let (mut recon_sum, mut n_entries, mut kl_sum) = (0.0, 0usize, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample<f32>> = chunk.iter().map(|(d, t)| &samples[*d][*t]).collect();
            let eps: Vec<Vec<f32>> = (0..batch.len())
                .map(|_| {
                    (0..latent)
                        .map(|_| StandardNormal.sample(&mut ckpt.rng))
                        .collect()
                })
                .collect();
            let mut grads = ckpt.model.params.zeros_like();
            let parts = batch_gradients(
                &ckpt.model,
                &batch,
                &eps,
                cfg.beta,
                cfg.reconstruction,
                Some(&mut ckpt.rng),
                Some(&mut grads),
            )?;
            let grads_finite = grads.iter().all(|g| g.data.iter().all(|v| v.is_finite()));
            if !parts.total.is_finite() || !grads_finite {
                return Err(PolicyError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    param_norm: ckpt.model.params.norm(),
                });
            }
            ckpt.optimizer
                .update(&mut ckpt.model.params, &grads, cfg.lr);
            let n: usize = batch
                .iter()
                .map(|s| s.mask.iter().filter(|m| **m).count() * 6)
                .sum();
            recon_sum += parts.reconstruction * n as f64;
            n_entries += n;
            kl_sum += parts.kl * batch.len() as f64;
        }
        let parts = LossParts::from_sums(recon_sum, n_entries, kl_sum, order.len(), cfg.beta)?;
        ckpt.epoch = epoch;
        let metrics = EpochMetrics {
            epoch,
            total: parts.total,
            reconstruction: parts.reconstruction,
            kl: parts.kl,
            beta: cfg.beta,
            step: ckpt.optimizer.step,
            seconds: started.elapsed().as_secs_f64(),
        };
        ckpt.history.push(metrics.clone());
        if let Some(dir) = out {
            ckpt.save(&dir.join(LAST_DIR))?;
            if metrics.reconstruction < best {
                best = metrics.reconstruction;
                ckpt.save(&dir.join(BEST_DIR))?;
            }
        }
        log::info!(
            "epoch {epoch}: total {:.5} recon {:.5} kl {:.5} ({:.1}s)",
            metrics.total,
            metrics.reconstruction,
            metrics.kl,
            metrics.seconds
        );
        on_epoch(&metrics);
    }
    Ok(ckpt)
}
