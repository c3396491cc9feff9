use std::path::Path;

use serde::{Deserialize, Serialize};

use viewplan_core::episode::EpisodeParams;
use viewplan_core::expert::ExpertConfig;
use viewplan_core::sim::{CameraIntrinsics, Difficulty, Shell};
use viewplan_policy::loss::Reconstruction;
use viewplan_policy::{ModelConfig, TrainConfig};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBlock {
    pub n_scenes: usize,
    pub difficulty: Difficulty,
    pub seed: u64,
    #[serde(default)]
    pub shell: Shell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub reconstruction: Reconstruction,
}

fn default_beta() -> f64 {
    TrainConfig::default().beta
}

impl TrainingBlock {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            beta: self.beta,
            reconstruction: self.reconstruction,
        }
    }
}

impl Default for TrainingBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            beta: t.beta,
            reconstruction: t.reconstruction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    pub n_eval_scenes: usize,
    pub n_starts: usize,
    pub max_steps: usize,
    pub tau_v: f64,
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        let p = EpisodeParams::default();
        Self {
            n_eval_scenes: 15,
            n_starts: 1,
            max_steps: p.max_steps,
            tau_v: p.tau_v,
        }
    }
}

impl EvaluationBlock {
    pub fn params(&self) -> EpisodeParams {
        EpisodeParams {
            max_steps: self.max_steps,
            tau_v: self.tau_v,
            ..Default::default()
        }
    }
}

/// One JSON document describing a whole experiment. Seeds have no defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenes: SceneBlock,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub expert: ExpertConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub training: TrainingBlock,
    #[serde(default)]
    pub evaluation: EvaluationBlock,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: String| CliError::Config(e);
        self.camera.validate().map_err(|e| bad(e.to_string()))?;
        self.scenes
            .shell
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        self.expert.validate().map_err(|e| bad(e.to_string()))?;
        self.model.validate().map_err(|e| bad(e.to_string()))?;
        self.training
            .to_train_config()
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        if self.model.image_size != [self.camera.height, self.camera.width] {
            return Err(bad(format!(
                "model.image_size {:?} differs from the camera's {}x{}",
                self.model.image_size, self.camera.height, self.camera.width
            )));
        }
        if self.evaluation.n_starts == 0 || self.evaluation.max_steps == 0 {
            return Err(bad(
                "evaluation needs n_starts and max_steps of at least 1".into()
            ));
        }
        Ok(())
    }
}
