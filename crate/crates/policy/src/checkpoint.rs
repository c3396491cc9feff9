//! Checkpoint directory: `model.bin` (f32 LE parameters in registration order),
//! `optimizer.bin` (Adam first then second moments), `checkpoint.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use viewplan_core::dataset::DatasetStats;
use viewplan_core::sim::Observation;
use viewplan_core::PoseDelta;

use crate::error::{IoContext, PolicyError, Result};
use crate::model::{Act, ModelConfig, PolicyInput};
use crate::params::{Adam, AdamConfig, ParamShape, Params};
use crate::tape::Tensor;
use crate::train::{EpochMetrics, TrainConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const SIDECAR_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "model.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Act<f32>,
    pub stats: DatasetStats,
    pub train: TrainConfig,
    pub optimizer: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format_version: u32,
    model_config: ModelConfig,
    stats: DatasetStats,
    train_config: TrainConfig,
    adam: AdamConfig,
    step: u64,
    epoch: usize,
    history: Vec<EpochMetrics>,
    rng: RngState,
    params: Vec<ParamShape>,
}

fn tensors_to_bytes(ts: &[Tensor<f32>]) -> Vec<u8> {
    ts.iter()
        .flat_map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

fn tensors_from_bytes(
    path: &Path,
    bytes: &[u8],
    shapes: &[ParamShape],
    copies: usize,
) -> Result<Vec<Vec<Tensor<f32>>>> {
    let n: usize = shapes.iter().map(|s| s.rows * s.cols).sum();
    if bytes.len() != 4 * n * copies {
        return Err(PolicyError::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("expected {} bytes, found {}", 4 * n * copies, bytes.len()),
        });
    }
    let mut vals = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    Ok((0..copies)
        .map(|_| {
            shapes
                .iter()
                .map(|s| {
                    Tensor::from_vec(
                        s.rows,
                        s.cols,
                        vals.by_ref().take(s.rows * s.cols).collect(),
                    )
                })
                .collect()
        })
        .collect())
}

impl Checkpoint {
    pub fn fresh(model_cfg: ModelConfig, stats: DatasetStats, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let model = Act::new(model_cfg, train.seed)?;
        let optimizer = Adam::new(&model.params, AdamConfig::default());
        let rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x7a11_c0de);
        Ok(Self {
            model,
            stats,
            train,
            optimizer,
            rng,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn param_bytes(&self) -> Vec<u8> {
        tensors_to_bytes(&self.model.params.tensors)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).at(dir)?;
        let p = dir.join(PARAMS_FILE);
        fs::write(&p, self.param_bytes()).at(&p)?;
        let o = dir.join(OPTIMIZER_FILE);
        let mut ob = tensors_to_bytes(&self.optimizer.m);
        ob.extend(tensors_to_bytes(&self.optimizer.v));
        fs::write(&o, ob).at(&o)?;
        let sidecar = Sidecar {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config: self.model.cfg.clone(),
            stats: self.stats.clone(),
            train_config: self.train.clone(),
            adam: self.optimizer.cfg,
            step: self.optimizer.step,
            epoch: self.epoch,
            history: self.history.clone(),
            rng: RngState {
                seed: self.rng.get_seed().to_vec(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            params: self.model.params.shapes(),
        };
        let s = dir.join(SIDECAR_FILE);
        fs::write(&s, serde_json::to_string_pretty(&sidecar)?).at(&s)?;
        Ok(dir.to_path_buf())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let s = dir.join(SIDECAR_FILE);
        let bad = |detail: String| PolicyError::Checkpoint {
            path: dir.to_path_buf(),
            detail,
        };
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&s).at(&s)?)?;
        if sidecar.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format_version {}",
                sidecar.format_version
            )));
        }
        let p = dir.join(PARAMS_FILE);
        let tensors = tensors_from_bytes(&p, &fs::read(&p).at(&p)?, &sidecar.params, 1)?.remove(0);
        let names = sidecar.params.iter().map(|s| s.name.clone()).collect();
        let model = Act::with_params(sidecar.model_config, Params { tensors, names })?;
        let o = dir.join(OPTIMIZER_FILE);
        let mut moments = tensors_from_bytes(&o, &fs::read(&o).at(&o)?, &sidecar.params, 2)?;
        let v = moments.pop().expect("two copies");
        let m = moments.pop().expect("two copies");
        let optimizer = Adam {
            cfg: sidecar.adam,
            step: sidecar.step,
            m,
            v,
        };
        let seed: [u8; 32] = sidecar
            .rng
            .seed
            .try_into()
            .map_err(|_| bad("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(sidecar.rng.stream);
        rng.set_word_pos(
            sidecar
                .rng
                .word_pos
                .parse()
                .map_err(|_| bad("bad rng word position".into()))?,
        );
        Ok(Self {
            model,
            stats: sidecar.stats,
            train: sidecar.train_config,
            optimizer,
            rng,
            epoch: sidecar.epoch,
            history: sidecar.history,
        })
    }

    /// Predicted chunk in normalized action space (`z = 0`, dropout off).
    pub fn infer_normalized(&self, obs: &Observation) -> Result<Vec<[f64; 6]>> {
        let input = PolicyInput::<f32>::from_observation(obs, &self.stats, &self.model.cfg)?;
        let out = self.model.predict(&input);
        let rows: Vec<[f64; 6]> = (0..out.rows)
            .map(|r| std::array::from_fn(|c| out.at(r, c) as f64))
            .collect();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteInput);
        }
        Ok(rows)
    }

    /// Predicted chunk in physical units (meters, radians).
    pub fn infer_chunk(&self, obs: &Observation) -> Result<Vec<PoseDelta>> {
        Ok(self
            .infer_normalized(obs)?
            .iter()
            .map(|a| PoseDelta::from_array(self.stats.denormalize_action(a)))
            .collect())
    }
}

pub fn infer_chunk(checkpoint: &Checkpoint, obs: &Observation) -> Result<Vec<PoseDelta>> {
    checkpoint.infer_chunk(obs)
}
