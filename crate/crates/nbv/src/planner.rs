//! Sample, score, jump: the search-based next-best-view loop.

use serde::{Deserialize, Serialize};

use viewplan_core::episode::{run_loop, EpisodeParams, EpisodeResult, EvaluationReport};
use viewplan_core::se3::pose_distance;
use viewplan_core::sim::{render, shell_lattice_around, CameraIntrinsics, Scene, Shell};
use viewplan_core::Pose;

use crate::map::VoxelMap;
use crate::{NbvError, Result};

pub const PLANNER_NAME: &str = "nbv_baseline";
pub const DEFAULT_SAMPLES: usize = 32;
/// Rotation weight of the tie-breaking pose distance.
pub const TIE_W_ROT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NbvConfig {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for NbvConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateView {
    pub pose: Pose,
    pub utility: usize,
    /// Position in the sampled lattice.
    pub index: usize,
}

/// Scores `n_samples` shell poses around the map's ROI and returns the best;
/// equal utilities go to the pose closest to `current`, then the lower index.
pub fn plan_next_view(
    map: &VoxelMap,
    current: &Pose,
    n_samples: usize,
    seed: u64,
    shell: Shell,
    k: &CameraIntrinsics,
) -> Result<CandidateView> {
    if n_samples == 0 {
        return Err(NbvError::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    let mut best: Option<(CandidateView, f64)> = None;
    for (index, pose) in shell_lattice_around(map.roi_center(), n_samples, seed, shell)
        .into_iter()
        .enumerate()
    {
        let utility = map.score_candidate(&pose, k);
        let dist = pose_distance(current, &pose, TIE_W_ROT);
        let better = match &best {
            None => true,
            Some((b, bd)) => utility > b.utility || (utility == b.utility && dist < *bd),
        };
        if better {
            best = Some((
                CandidateView {
                    pose,
                    utility,
                    index,
                },
                dist,
            ));
        }
    }
    Ok(best.expect("at least one candidate").0)
}

/// Stateful planner for one episode: the map plus the chosen-view log.
pub struct BaselinePlanner {
    pub map: VoxelMap,
    pub cfg: NbvConfig,
    pub shell: Shell,
    pub chosen: Vec<CandidateView>,
}

impl BaselinePlanner {
    /// The ROI is seeded from the scene's true target center.
    pub fn new(scene: &Scene, cfg: NbvConfig) -> Result<Self> {
        let map = VoxelMap::new(
            scene.workspace_bounds,
            scene.target_center(),
            scene.target_radius(),
        )?;
        Ok(Self {
            map,
            cfg,
            shell: scene.shell,
            chosen: Vec::new(),
        })
    }

    /// Lattice seed for decision `step`.
    pub fn step_seed(&self, step: usize) -> u64 {
        self.cfg
            .seed
            .wrapping_add((step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Observe from `pose`, fuse the depth, and pick the next view.
    pub fn decide(
        &mut self,
        scene: &Scene,
        pose: &Pose,
        step: usize,
        k: &CameraIntrinsics,
    ) -> Result<CandidateView> {
        let frame = render(scene, pose, k, true);
        self.map.integrate_depth(pose, &frame.depth, k)?;
        let view = plan_next_view(
            &self.map,
            pose,
            self.cfg.n_samples,
            self.step_seed(step),
            self.shell,
            k,
        )?;
        self.chosen.push(view);
        Ok(view)
    }
}

pub fn run_baseline_episode(
    scene: &Scene,
    start: &Pose,
    params: EpisodeParams,
    k: &CameraIntrinsics,
    cfg: NbvConfig,
) -> Result<EpisodeResult> {
    let mut planner = BaselinePlanner::new(scene, cfg)?;
    run_loop(scene, start, k, params, |pose, step| {
        Ok::<_, NbvError>(planner.decide(scene, pose, step, k)?.pose)
    })
}

pub fn evaluate_baseline(
    episodes: &[(Scene, Pose)],
    params: EpisodeParams,
    k: &CameraIntrinsics,
    cfg: NbvConfig,
) -> Result<EvaluationReport> {
    let rows = episodes
        .iter()
        .map(|(scene, start)| run_baseline_episode(scene, start, params, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::new(PLANNER_NAME, params, rows)?)
}
