use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use viewplan_core::dataset::{compute_stats, load_dataset, save_demo, DatasetStats, Demonstration};
use viewplan_core::episode::{EpisodeParams, EvaluationReport};
use viewplan_core::expert::{
    demonstrate_with_goals, sample_occluded_starts, sample_occluded_starts_from, ExpertConfig,
    GoalSet,
};
use viewplan_core::sim::scene::generate_scene_with;
use viewplan_core::sim::{certify, CameraIntrinsics, Difficulty, Scene};
use viewplan_core::Pose;
use viewplan_nbv::{evaluate_baseline, NbvConfig};
use viewplan_policy::train::{continue_training, EpochMetrics};
use viewplan_policy::{evaluate, Checkpoint, ModelConfig, TrainConfig};

use crate::error::{CliError, Result};

/// Evaluation starts come from a denser lattice than training starts, with a
/// different seed.
pub const EVAL_POOL: usize = 96;
const EVAL_SALT: u64 = 0xe7a1_5eed;
pub const TRAIN_LOG: &str = "train.log";

#[derive(Clone, Debug, Serialize)]
pub struct SceneSummary {
    pub path: PathBuf,
    pub scene_id: String,
    pub n_candidates: usize,
    pub n_success: usize,
}

pub fn generate_scenes(
    n: usize,
    difficulty: Difficulty,
    seed: u64,
    k: &CameraIntrinsics,
) -> Result<Vec<Scene>> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    (0..n as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            generate_scene_with(s, difficulty, k)
                .map_err(|e| CliError::Usage(format!("scene seed {s}: {e}")))
        })
        .collect()
}

pub fn write_scenes(
    scenes: &[Scene],
    out: &Path,
    k: &CameraIntrinsics,
) -> Result<Vec<SceneSummary>> {
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.into(),
        source,
    })?;
    scenes
        .iter()
        .map(|s| {
            let path = out.join(format!("{}.json", s.scene_id));
            fs::write(&path, s.to_json()?).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let c = certify(s, k);
            Ok(SceneSummary {
                path,
                scene_id: s.scene_id.clone(),
                n_candidates: c.n_candidates,
                n_success: c.n_success,
            })
        })
        .collect()
}

/// Every `*.json` scene in `dir`, sorted by file name.
pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::input(dir, "no scene files"));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::input(p, e))?;
            Scene::from_json(&text).map_err(|e| CliError::input(p, e))
        })
        .collect()
}

pub fn training_starts(scene: &Scene, n: usize, k: &CameraIntrinsics) -> Result<Vec<Pose>> {
    Ok(sample_occluded_starts(
        scene,
        n,
        scene.id_seed(),
        scene.shell,
        k,
    )?)
}

pub fn eval_starts(scene: &Scene, n: usize, k: &CameraIntrinsics) -> Result<Vec<Pose>> {
    Ok(sample_occluded_starts_from(
        scene,
        n,
        EVAL_POOL.max(4 * n),
        scene.id_seed() ^ EVAL_SALT,
        scene.shell,
        k,
    )?)
}

pub fn eval_pairs(
    scenes: &[Scene],
    n_starts: usize,
    k: &CameraIntrinsics,
) -> Result<Vec<(Scene, Pose)>> {
    let mut out = Vec::new();
    for s in scenes {
        out.extend(
            eval_starts(s, n_starts, k)?
                .into_iter()
                .map(|p| (s.clone(), p)),
        );
    }
    Ok(out)
}

/// Scripted demonstrations, `starts_per_scene` per scene, in scene order.
pub fn scripted_demos(
    scenes: &[Scene],
    starts_per_scene: usize,
    cfg: &ExpertConfig,
    k: &CameraIntrinsics,
) -> Result<Vec<(usize, Demonstration)>> {
    if starts_per_scene == 0 {
        return Err(CliError::Usage(
            "--starts-per-scene must be at least 1".into(),
        ));
    }
    let mut out = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        let goals = GoalSet::new(scene, cfg, k)?;
        for (i, start) in training_starts(scene, starts_per_scene, k)?
            .iter()
            .enumerate()
        {
            out.push((
                si,
                demonstrate_with_goals(scene, &goals, start, cfg, k, i as u64)?,
            ));
        }
    }
    Ok(out)
}

/// Writes demos plus `stats.json`; every demo passes the save gate or the
/// whole collection stops naming it.
pub fn collect(
    scenes: &[Scene],
    starts_per_scene: usize,
    cfg: &ExpertConfig,
    k: &CameraIntrinsics,
    out: &Path,
    mut report: impl FnMut(&Demonstration, &Path),
) -> Result<DatasetStats> {
    let demos = scripted_demos(scenes, starts_per_scene, cfg, k)?;
    for (si, d) in &demos {
        let path = save_demo(d, &scenes[*si], out)
            .map_err(|e| CliError::Usage(format!("demo {} rejected: {e}", d.demo_id)))?;
        report(d, &path);
    }
    // Statistics of the demos as written (8-bit RGB, f32 numerics), in the
    // order `load_dataset` returns them so the sums agree bit for bit.
    let mut list: Vec<Demonstration> = demos.iter().map(|(_, d)| d.quantized()).collect();
    list.sort_by(|a, b| a.demo_id.cmp(&b.demo_id));
    let stats = compute_stats(&list)?;
    stats.save(out)?;
    Ok(stats)
}

/// Loads the demos under `dir` with their `stats.json`, computing the
/// statistics when the file is absent.
pub fn load_training_set(dir: &Path) -> Result<(Vec<Demonstration>, DatasetStats)> {
    let demos = load_dataset(dir).map_err(|e| CliError::input(dir, e))?;
    if demos.is_empty() {
        return Err(CliError::input(dir, "no demonstrations"));
    }
    let stats = if dir.join(viewplan_core::dataset::STATS_FILE).exists() {
        DatasetStats::load(dir)?
    } else {
        compute_stats(&demos)?
    };
    Ok((demos, stats))
}

/// Trains (or resumes) and streams one JSON line per epoch to `sink` and to
/// `out/train.log`.
pub fn train_to(
    demos: &[Demonstration],
    stats: &DatasetStats,
    model: ModelConfig,
    train: TrainConfig,
    resume: Option<&Path>,
    out: &Path,
    mut sink: impl Write,
) -> Result<Checkpoint> {
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.into(),
        source,
    })?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|source| CliError::Io {
            path: log_path.clone(),
            source,
        })?;
    let epochs = train.epochs;
    let ckpt = match resume {
        Some(dir) => Checkpoint::load(dir).map_err(|e| CliError::input(dir, e))?,
        None => Checkpoint::fresh(model, stats.clone(), train)?,
    };
    let mut write_err = None;
    let ckpt = continue_training(ckpt, demos, epochs, Some(out), |m: &EpochMetrics| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(sink, "{line}").and_then(|_| writeln!(log, "{line}")) {
            write_err.get_or_insert(e);
        }
    })?;
    match write_err {
        Some(source) => Err(CliError::Io {
            path: log_path,
            source,
        }),
        None => Ok(ckpt),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Planner {
    Act,
    Baseline,
}

pub fn run_eval(
    planner: Planner,
    ckpt: Option<&Path>,
    pairs: &[(Scene, Pose)],
    params: EpisodeParams,
    k: &CameraIntrinsics,
) -> Result<EvaluationReport> {
    match planner {
        Planner::Act => {
            let dir = ckpt.ok_or_else(|| CliError::Usage("--planner act needs --ckpt".into()))?;
            let ckpt = Checkpoint::load(dir).map_err(|e| CliError::input(dir, e))?;
            if ckpt.model.cfg.image_size != [k.height, k.width] {
                return Err(CliError::Usage(format!(
                    "checkpoint expects {:?} images, camera renders {}x{}",
                    ckpt.model.cfg.image_size, k.height, k.width
                )));
            }
            Ok(evaluate(pairs, &ckpt, params, k)?)
        }
        Planner::Baseline => Ok(evaluate_baseline(pairs, params, k, NbvConfig::default())?),
    }
}
