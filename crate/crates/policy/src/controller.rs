//! Closed-loop rollout with temporal ensembling of overlapping action chunks.

use std::collections::VecDeque;

use viewplan_core::dataset::DatasetStats;
use viewplan_core::episode::{
    run_loop, EpisodeParams, EpisodeResult, EvaluationReport, MAX_ROTATION_STEP,
    MAX_TRANSLATION_STEP,
};
use viewplan_core::se3::compose;
use viewplan_core::sim::{observe, CameraIntrinsics, Scene};
use viewplan_core::{Pose, PoseDelta};

use crate::checkpoint::Checkpoint;
use crate::error::{PolicyError, Result};

pub const DEFAULT_DECAY: f64 = 0.01;
pub const PLANNER_NAME: &str = "act";

/// `exp(−m·i) / Σ_j exp(−m·j)` for `i = 0..n`, index 0 being the newest prediction.
pub fn ensemble_weights(n: usize, m: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|i| (-m * i as f64).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|w| w / sum).collect()
}

/// The last `k` chunks (normalized action space), each stamped with its issue step.
#[derive(Clone, Debug)]
pub struct EnsembleBuffer {
    k: usize,
    decay: f64,
    chunks: VecDeque<(usize, Vec<[f64; 6]>)>,
}

impl EnsembleBuffer {
    pub fn new(k: usize, decay: f64) -> Result<Self> {
        if k == 0 || !(decay >= 0.0) {
            return Err(PolicyError::InvalidArgument(format!(
                "ensemble needs k >= 1 and m >= 0, got {k}, {decay}"
            )));
        }
        Ok(Self {
            k,
            decay,
            chunks: VecDeque::with_capacity(k),
        })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn push(&mut self, issued_at: usize, chunk: Vec<[f64; 6]>) -> Result<()> {
        if chunk.len() != self.k {
            return Err(PolicyError::InvalidArgument(format!(
                "chunk of {} actions, buffer expects {}",
                chunk.len(),
                self.k
            )));
        }
        if self.chunks.len() == self.k {
            self.chunks.pop_front();
        }
        self.chunks.push_back((issued_at, chunk));
        Ok(())
    }

    /// Predictions for step `t` paired with their age `i` (0 = newest chunk).
    pub fn predictions(&self, t: usize) -> Vec<(usize, [f64; 6])> {
        self.chunks
            .iter()
            .rev()
            .filter(|(s, _)| *s <= t && t < *s + self.k)
            .map(|(s, c)| (t - s, c[t - s]))
            .collect()
    }

    /// Weighted combination for step `t`, renormalized over the predictions present.
    pub fn ensemble(&self, t: usize) -> Result<[f64; 6]> {
        let preds = self.predictions(t);
        if preds.is_empty() {
            return Err(PolicyError::EnsembleEmpty(t));
        }
        let raw: Vec<f64> = preds
            .iter()
            .map(|(i, _)| (-self.decay * *i as f64).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        let mut out = [0.0; 6];
        for ((_, a), w) in preds.iter().zip(&raw) {
            for c in 0..6 {
                out[c] += w / sum * a[c];
            }
        }
        Ok(out)
    }
}

/// Ensembled action for step `t`, denormalized once.
pub fn ensemble_action(
    buffer: &EnsembleBuffer,
    t: usize,
    stats: &DatasetStats,
) -> Result<PoseDelta> {
    Ok(PoseDelta::from_array(
        stats.denormalize_action(&buffer.ensemble(t)?),
    ))
}

/// Per-axis clip to the controller bounds; reports whether any axis was clipped.
pub fn clip_action(d: &PoseDelta) -> (PoseDelta, bool) {
    let a = d.to_array();
    let c: [f64; 6] = std::array::from_fn(|i| {
        let b = if i < 3 {
            MAX_TRANSLATION_STEP
        } else {
            MAX_ROTATION_STEP
        };
        a[i].clamp(-b, b)
    });
    (PoseDelta::from_array(c), c != a)
}

pub fn run_episode(
    scene: &Scene,
    start: &Pose,
    ckpt: &Checkpoint,
    params: EpisodeParams,
    k: &CameraIntrinsics,
    decay: f64,
) -> Result<EpisodeResult> {
    let mut buffer = EnsembleBuffer::new(ckpt.model.cfg.chunk_size, decay)?;
    let mut prev = *start;
    let mut clipped = 0usize;
    let result = run_loop(scene, start, k, params, |pose, t| {
        let obs = observe(scene, pose, &prev, k)?;
        buffer.push(t, ckpt.infer_normalized(&obs)?)?;
        let (action, was_clipped) = clip_action(&ensemble_action(&buffer, t, &ckpt.stats)?);
        clipped += was_clipped as usize;
        prev = *pose;
        Ok::<_, PolicyError>(compose(pose, &action)?)
    })?;
    if clipped > 0 {
        log::debug!(
            "{}: action clip active on {clipped} of {} steps",
            scene.scene_id,
            result.steps_used
        );
    }
    Ok(result)
}

pub fn evaluate(
    episodes: &[(Scene, Pose)],
    ckpt: &Checkpoint,
    params: EpisodeParams,
    k: &CameraIntrinsics,
) -> Result<EvaluationReport> {
    let rows = episodes
        .iter()
        .map(|(scene, start)| run_episode(scene, start, ckpt, params, k, DEFAULT_DECAY))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::new(PLANNER_NAME, params, rows)?)
}
