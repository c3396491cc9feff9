//! Scripted expert: nearest succeeding shell viewpoint, reached along an
//! eased straight-line SE(3) path.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    demonstration_from_trajectory, smooth_commands, DemoSource, Demonstration, MAX_EPISODE_STEPS,
};
use crate::error::{Error, Result};
use crate::se3::{compose, interpolate, pose_distance};
use crate::sim::scene::fnv1a;
use crate::sim::{
    is_success, shell_lattice, visibility, CameraIntrinsics, Scene, Shell, DEFAULT_TAU_V,
};
use crate::{Pose, PoseDelta, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub n_goal_candidates: usize,
    pub steps: usize,
    pub w_rot: f64,
    pub noise_std: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            n_goal_candidates: 256,
            steps: 30,
            w_rot: 0.3,
            noise_std: 0.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_EPISODE_STEPS).contains(&self.steps) {
            return Err(Error::InvalidArgument(format!(
                "expert steps {} outside [2, 50]",
                self.steps
            )));
        }
        if self.n_goal_candidates < 16 {
            return Err(Error::InvalidArgument(
                "n_goal_candidates must be at least 16".into(),
            ));
        }
        if !(self.w_rot >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(
                "w_rot and noise_std must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The succeeding goal candidates of a scene, computed once and reused
/// across starts.
#[derive(Clone, Debug)]
pub struct GoalSet {
    /// `(lattice index, pose)` in lattice order.
    pub candidates: Vec<(usize, Pose)>,
}

impl GoalSet {
    pub fn new(scene: &Scene, cfg: &ExpertConfig, k: &CameraIntrinsics) -> Result<Self> {
        cfg.validate()?;
        let candidates: Vec<(usize, Pose)> =
            shell_lattice(scene, cfg.n_goal_candidates, scene.id_seed(), scene.shell)
                .into_iter()
                .enumerate()
                .filter(|(_, p)| is_success(scene, p, k, DEFAULT_TAU_V))
                .collect();
        if candidates.is_empty() {
            return Err(Error::Certification(format!(
                "scene certification violated: no goal candidate succeeds in {}",
                scene.scene_id
            )));
        }
        Ok(Self { candidates })
    }

    /// Nearest candidate by `pose_distance`; the first index wins ties.
    pub fn nearest(&self, start: &Pose, w_rot: f64) -> Pose {
        let mut best = self.candidates[0].1;
        let mut best_d = pose_distance(start, &best, w_rot);
        for (_, p) in &self.candidates[1..] {
            let d = pose_distance(start, p, w_rot);
            if d < best_d {
                best = *p;
                best_d = d;
            }
        }
        best
    }
}

pub fn select_goal(
    scene: &Scene,
    start: &Pose,
    cfg: &ExpertConfig,
    k: &CameraIntrinsics,
) -> Result<Pose> {
    Ok(GoalSet::new(scene, cfg, k)?.nearest(start, cfg.w_rot))
}

/// Cosine ease-in/ease-out progress at `n` evenly spaced steps.
pub fn cosine_profile(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == 0 {
                0.0
            } else if i == n - 1 {
                1.0
            } else {
                (1.0 - (std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()) / 2.0
            }
        })
        .collect()
}

pub fn demonstrate(
    scene: &Scene,
    start: &Pose,
    cfg: &ExpertConfig,
    k: &CameraIntrinsics,
    seed: u64,
) -> Result<Demonstration> {
    let goals = GoalSet::new(scene, cfg, k)?;
    demonstrate_with_goals(scene, &goals, start, cfg, k, seed)
}

pub fn demonstrate_with_goals(
    scene: &Scene,
    goals: &GoalSet,
    start: &Pose,
    cfg: &ExpertConfig,
    k: &CameraIntrinsics,
    seed: u64,
) -> Result<Demonstration> {
    cfg.validate()?;
    let start = start.quantize_f32();
    let goal = goals.nearest(&start, cfg.w_rot);
    let mut poses = if start == goal {
        vec![start, goal]
    } else {
        cosine_profile(cfg.steps)
            .into_iter()
            .map(|s| interpolate(&start, &goal, s))
            .collect::<Result<Vec<_>>>()?
    };
    let n = poses.len();
    if cfg.noise_std > 0.0 && n > 2 {
        let normal =
            Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut poses[1..n - 1] {
            let jitter = PoseDelta::from_array(std::array::from_fn(|_| normal.sample(&mut rng)));
            *p = compose(p, &jitter)?;
        }
    }
    let (smoothed, _) = smooth_commands(&Trajectory::from_steps(poses)?)?;
    let quantized: Vec<Pose> = smoothed.poses().iter().map(|p| p.quantize_f32()).collect();
    let mut id_bytes = start.to_le_bytes().to_vec();
    id_bytes.extend_from_slice(&seed.to_le_bytes());
    let demo_id = format!("{}-{:016x}", scene.scene_id, fnv1a(&id_bytes));
    let demo = demonstration_from_trajectory(
        demo_id,
        scene,
        DemoSource::Scripted,
        Trajectory::from_steps(quantized)?,
        k,
    )?;
    demo.validate(scene, DEFAULT_TAU_V)?;
    Ok(demo)
}

/// `n` shell poses from which the target is not successfully visible,
/// drawn without replacement from a denser lattice.
pub fn sample_occluded_starts(
    scene: &Scene,
    n: usize,
    seed: u64,
    shell: Shell,
    k: &CameraIntrinsics,
) -> Result<Vec<Pose>> {
    sample_occluded_starts_from(scene, n, (4 * n).max(64), seed, shell, k)
}

/// As [`sample_occluded_starts`], drawing from a lattice of `pool` poses.
pub fn sample_occluded_starts_from(
    scene: &Scene,
    n: usize,
    pool: usize,
    seed: u64,
    shell: Shell,
    k: &CameraIntrinsics,
) -> Result<Vec<Pose>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one start".into()));
    }
    shell.validate()?;
    let mut failing: Vec<Pose> = shell_lattice(scene, pool, seed, shell)
        .into_iter()
        .filter(|p| !visibility(scene, p, k).is_success(DEFAULT_TAU_V))
        .collect();
    if failing.len() < n {
        return Err(Error::InvalidArgument(format!(
            "{} has only {} occluded starts among {pool} lattice poses, {n} requested",
            scene.scene_id,
            failing.len()
        )));
    }
    failing.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    failing.truncate(n);
    Ok(failing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Vec3;
    use crate::sim::{generate_scene, Difficulty};

    fn setup() -> (Scene, CameraIntrinsics, ExpertConfig) {
        (
            generate_scene(3, Difficulty::Medium).unwrap(),
            CameraIntrinsics::default(),
            ExpertConfig::default(),
        )
    }

    #[test]
    fn goal_is_the_nearest_success_by_exhaustive_scan() {
        let (scene, k, cfg) = setup();
        let start = sample_occluded_starts(&scene, 3, 9, scene.shell, &k).unwrap()[0];
        let goal = select_goal(&scene, &start, &cfg, &k).unwrap();
        assert!(is_success(&scene, &goal, &k, DEFAULT_TAU_V));
        let all = shell_lattice(&scene, cfg.n_goal_candidates, scene.id_seed(), scene.shell);
        let gd = pose_distance(&start, &goal, cfg.w_rot);
        for p in &all {
            if is_success(&scene, p, &k, DEFAULT_TAU_V) {
                assert!(pose_distance(&start, p, cfg.w_rot) >= gd);
            }
        }
    }

    #[test]
    fn succeeding_lattice_start_is_its_own_goal() {
        let (scene, k, cfg) = setup();
        let goals = GoalSet::new(&scene, &cfg, &k).unwrap();
        let start = goals.candidates[0].1;
        assert_eq!(select_goal(&scene, &start, &cfg, &k).unwrap(), start);
        let demo = demonstrate(&scene, &start, &cfg, &k, 0).unwrap();
        assert_eq!(demo.len(), 2);
        assert!(demo.steps.iter().all(|s| s.action.is_zero()));
    }

    #[test]
    fn uncertifiable_scene_is_an_error() {
        let mut scene = Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04);
        scene.target = None;
        let err = select_goal(
            &scene,
            &Pose::identity(),
            &ExpertConfig::default(),
            &CameraIntrinsics::default(),
        );
        assert!(
            matches!(err, Err(Error::Certification(m)) if m.contains("scene certification violated"))
        );
    }

    #[test]
    fn config_bounds() {
        let bad = [
            ExpertConfig {
                steps: 1,
                ..Default::default()
            },
            ExpertConfig {
                steps: 51,
                ..Default::default()
            },
            ExpertConfig {
                n_goal_candidates: 15,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn step_sizes_follow_the_smoothed_cosine_profile() {
        let (scene, k, cfg) = setup();
        let start = sample_occluded_starts(&scene, 1, 2, scene.shell, &k).unwrap()[0];
        let goal = select_goal(&scene, &start, &cfg, &k).unwrap();
        let demo = demonstrate(&scene, &start, &cfg, &k, 0).unwrap();
        assert_eq!(demo.len(), cfg.steps);
        let dist = (goal.position - start.position).norm();
        // positions are affine in s, so the smoothed path is affine in the smoothed profile
        let s = cosine_profile(cfg.steps);
        let n = s.len();
        let mut sm = s.clone();
        for i in 1..n - 1 {
            sm[i] = (s[i - 1] + s[i] + s[i + 1]) / 3.0;
        }
        let steps: Vec<f64> = demo.steps[..n - 1]
            .iter()
            .map(|st| st.action.translation.norm())
            .collect();
        for (i, m) in steps.iter().enumerate() {
            let want = (sm[i + 1] - sm[i]) * dist;
            assert!((m - want).abs() < 1e-5, "step {i}: {m} vs {want}");
            assert!(*m <= 2.0 * dist / cfg.steps as f64 + 1e-9);
        }
        let peak = steps.iter().cloned().fold(0.0, f64::max);
        let mid = steps.iter().position(|m| *m == peak).unwrap();
        assert!((mid as i64 - (n as i64 - 1) / 2).abs() <= 1);
        for w in steps[..=mid].windows(2) {
            assert!(w[1] >= w[0] - 1e-7);
        }
        for w in steps[mid..].windows(2) {
            assert!(w[1] <= w[0] + 1e-7);
        }
        let geodesic = start.orientation.angle_to(goal.orientation);
        for st in &demo.steps {
            assert!(st.action.rotation_angle() <= 2.0 * geodesic / cfg.steps as f64 + 1e-6);
        }
    }

    #[test]
    fn demos_are_deterministic_and_pass_the_gate() {
        let (scene, k, cfg) = setup();
        let goals = GoalSet::new(&scene, &cfg, &k).unwrap();
        let starts = sample_occluded_starts(&scene, 8, 5, scene.shell, &k).unwrap();
        for s in &starts {
            assert!(!is_success(&scene, s, &k, DEFAULT_TAU_V));
            let d = demonstrate_with_goals(&scene, &goals, s, &cfg, &k, 1).unwrap();
            d.validate(&scene, DEFAULT_TAU_V).unwrap();
            assert_eq!(
                d,
                demonstrate_with_goals(&scene, &goals, s, &cfg, &k, 1).unwrap()
            );
        }
        let noisy = ExpertConfig {
            noise_std: 0.002,
            ..cfg
        };
        let a = demonstrate_with_goals(&scene, &goals, &starts[0], &noisy, &k, 7).unwrap();
        assert_eq!(
            a,
            demonstrate_with_goals(&scene, &goals, &starts[0], &noisy, &k, 7).unwrap()
        );
        assert_ne!(
            a,
            demonstrate_with_goals(&scene, &goals, &starts[0], &noisy, &k, 8).unwrap()
        );
        a.validate(&scene, DEFAULT_TAU_V).unwrap();
    }
}
