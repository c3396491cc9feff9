//! Episode bookkeeping and evaluation reports shared by every planner.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{visibility, CameraIntrinsics, Scene, DEFAULT_TAU_V};
use crate::Pose;

pub const MAX_TRANSLATION_STEP: f64 = 0.05;
pub const MAX_ROTATION_STEP: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeParams {
    pub max_steps: usize,
    pub tau_v: f64,
    pub rate_hz: f64,
    /// Pace decisions to `rate_hz`; otherwise only latencies are measured.
    pub realtime: bool,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self {
            max_steps: 50,
            tau_v: DEFAULT_TAU_V,
            rate_hz: 10.0,
            realtime: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: String,
    pub initial_pose: [f64; 7],
    pub success: bool,
    pub steps_used: usize,
    pub wall_clock_s: f64,
    pub decision_latencies_s: Vec<f64>,
    pub final_visibility: f64,
    pub path_length_m: f64,
    pub rotation_total_rad: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<[f64; 7]>,
}

impl EpisodeResult {
    pub fn mean_latency_s(&self) -> Option<f64> {
        if self.decision_latencies_s.is_empty() {
            None
        } else {
            Some(
                self.decision_latencies_s.iter().sum::<f64>()
                    / self.decision_latencies_s.len() as f64,
            )
        }
    }
}

/// Tracks one rollout: camera pose, motion totals, per-decision latencies.
pub struct EpisodeRecorder<'a> {
    scene: &'a Scene,
    k: &'a CameraIntrinsics,
    params: EpisodeParams,
    initial: Pose,
    pose: Pose,
    started: Instant,
    decision_started: Option<Instant>,
    last_tick: Instant,
    latencies: Vec<f64>,
    path: f64,
    rotation: f64,
    trajectory: Vec<[f64; 7]>,
}

impl<'a> EpisodeRecorder<'a> {
    pub fn new(
        scene: &'a Scene,
        start: &Pose,
        k: &'a CameraIntrinsics,
        params: EpisodeParams,
    ) -> Result<Self> {
        if !(params.tau_v > 0.0 && params.tau_v <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_v {} outside (0, 1]",
                params.tau_v
            )));
        }
        if params.realtime && !(params.rate_hz > 0.0) {
            return Err(Error::InvalidArgument(
                "rate_hz must be positive in real-time mode".into(),
            ));
        }
        let now = Instant::now();
        Ok(Self {
            scene,
            k,
            params,
            initial: *start,
            pose: *start,
            started: now,
            decision_started: None,
            last_tick: now,
            latencies: Vec::new(),
            path: 0.0,
            rotation: 0.0,
            trajectory: vec![start.to_array()],
        })
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn steps_used(&self) -> usize {
        self.latencies.len()
    }

    pub fn budget_left(&self) -> bool {
        self.steps_used() < self.params.max_steps
    }

    /// Ground-truth success check at the current pose.
    pub fn check(&self) -> (bool, f64) {
        let v = visibility(self.scene, &self.pose, self.k);
        (v.is_success(self.params.tau_v), v.visibility_fraction)
    }

    pub fn begin_decision(&mut self) {
        self.decision_started = Some(Instant::now());
    }

    /// Closes the decision timer and moves the camera. Returns `false` when the
    /// new pose leaves the workspace.
    pub fn apply(&mut self, next: Pose) -> bool {
        let t0 = self.decision_started.take().unwrap_or_else(Instant::now);
        self.latencies.push(t0.elapsed().as_secs_f64());
        if self.params.realtime {
            let period = Duration::from_secs_f64(1.0 / self.params.rate_hz);
            let due = self.last_tick + period;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
            self.last_tick = Instant::now();
        }
        self.path += (next.position - self.pose.position).norm();
        self.rotation += self.pose.orientation.angle_to(next.orientation);
        self.pose = next;
        self.trajectory.push(next.to_array());
        self.scene.workspace_bounds.contains(next.position)
    }

    pub fn finish(
        self,
        success: bool,
        final_visibility: f64,
        failure_reason: Option<&str>,
    ) -> EpisodeResult {
        EpisodeResult {
            scene_id: self.scene.scene_id.clone(),
            initial_pose: self.initial.to_array(),
            success,
            steps_used: self.latencies.len(),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            decision_latencies_s: self.latencies,
            final_visibility,
            path_length_m: self.path,
            rotation_total_rad: self.rotation,
            failure_reason: failure_reason.map(str::to_string),
            trajectory: self.trajectory,
        }
    }
}

/// Drives the shared observe/decide/move loop. `decide` maps the current pose
/// to the next one.
pub fn run_loop<E: From<Error>>(
    scene: &Scene,
    start: &Pose,
    k: &CameraIntrinsics,
    params: EpisodeParams,
    mut decide: impl FnMut(&Pose, usize) -> Result<Pose, E>,
) -> Result<EpisodeResult, E> {
    let mut rec = EpisodeRecorder::new(scene, start, k, params)?;
    loop {
        let (ok, vis) = rec.check();
        if ok {
            return Ok(rec.finish(true, vis, None));
        }
        if !rec.budget_left() {
            return Ok(rec.finish(false, vis, Some("max_steps")));
        }
        rec.begin_decision();
        let step = rec.steps_used();
        let next = decide(rec.pose(), step)?;
        if !rec.apply(next) {
            let (_, vis) = rec.check();
            return Ok(rec.finish(false, vis, Some("out_of_bounds")));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_episodes: usize,
    pub n_success: usize,
    /// Percent, rounded to one decimal.
    pub success_rate: f64,
    pub mean_steps: Option<f64>,
    pub median_steps: Option<f64>,
    pub mean_latency_s: Option<f64>,
    pub mean_path_m: f64,
}

impl Aggregate {
    pub fn from_episodes(rows: &[EpisodeResult]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("evaluation needs at least one episode"));
        }
        let n = rows.len();
        let mut steps: Vec<usize> = rows
            .iter()
            .filter(|r| r.success)
            .map(|r| r.steps_used)
            .collect();
        steps.sort_unstable();
        let n_success = steps.len();
        let mean_steps =
            (!steps.is_empty()).then(|| steps.iter().sum::<usize>() as f64 / n_success as f64);
        let median_steps = (!steps.is_empty()).then(|| {
            let m = n_success / 2;
            if n_success % 2 == 1 {
                steps[m] as f64
            } else {
                (steps[m - 1] + steps[m]) as f64 / 2.0
            }
        });
        let decisions: usize = rows.iter().map(|r| r.decision_latencies_s.len()).sum();
        let total_latency: f64 = rows.iter().flat_map(|r| &r.decision_latencies_s).sum();
        Ok(Self {
            n_episodes: n,
            n_success,
            success_rate: (1000.0 * n_success as f64 / n as f64).round() / 10.0,
            mean_steps,
            median_steps,
            mean_latency_s: (decisions > 0).then(|| total_latency / decisions as f64),
            mean_path_m: rows.iter().map(|r| r.path_length_m).sum::<f64>() / n as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub planner: String,
    pub params: EpisodeParams,
    pub per_episode: Vec<EpisodeResult>,
    pub aggregate: Aggregate,
}

impl EvaluationReport {
    pub fn new(
        planner: &str,
        params: EpisodeParams,
        per_episode: Vec<EpisodeResult>,
    ) -> Result<Self> {
        let aggregate = Aggregate::from_episodes(&per_episode)?;
        Ok(Self {
            planner: planner.to_string(),
            params,
            per_episode,
            aggregate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Vec3;
    use crate::sim::viewpoints::WORLD_UP;

    fn row(success: bool, steps: usize, lat: &[f64], path: f64) -> EpisodeResult {
        EpisodeResult {
            scene_id: "s".into(),
            initial_pose: Pose::identity().to_array(),
            success,
            steps_used: steps,
            wall_clock_s: 0.0,
            decision_latencies_s: lat.to_vec(),
            final_visibility: if success { 1.0 } else { 0.0 },
            path_length_m: path,
            rotation_total_rad: 0.0,
            failure_reason: None,
            trajectory: vec![],
        }
    }

    #[test]
    fn thirteen_of_fifteen() {
        let rows: Vec<_> = (0..15).map(|i| row(i < 13, 3, &[0.1; 3], 0.2)).collect();
        let a = Aggregate::from_episodes(&rows).unwrap();
        assert_eq!(a.success_rate, 86.7);
        assert_eq!(a.mean_steps, Some(3.0));
    }

    #[test]
    fn all_failures_leave_steps_undefined() {
        let a = Aggregate::from_episodes(&[row(false, 50, &[0.1], 0.0)]).unwrap();
        assert_eq!(a.success_rate, 0.0);
        assert_eq!(a.mean_steps, None);
        assert_eq!(a.median_steps, None);
        let json = serde_json::to_value(&a).unwrap();
        assert!(json["mean_steps"].is_null());
        assert!(Aggregate::from_episodes(&[]).is_err());
    }

    #[test]
    fn latency_is_step_weighted() {
        let rows = vec![
            row(true, 1, &[1.0], 0.0),
            row(true, 3, &[2.0, 2.0, 2.0], 0.0),
        ];
        let a = Aggregate::from_episodes(&rows).unwrap();
        let per_ep: Vec<f64> = rows.iter().map(|r| r.mean_latency_s().unwrap()).collect();
        let weighted = (per_ep[0] * 1.0 + per_ep[1] * 3.0) / 4.0;
        assert!((a.mean_latency_s.unwrap() - weighted).abs() < 1e-12);
        assert_eq!(a.median_steps, Some(2.0));
    }

    #[test]
    fn loop_stops_at_success_cap_and_bounds() {
        let scene = Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04);
        let k = CameraIntrinsics::default();
        let good = Pose::look_at(
            Vec3::new(0.0, -0.4, 0.4),
            Vec3::new(0.0, 0.0, 0.4),
            WORLD_UP,
        );
        let r = run_loop::<Error>(
            &scene,
            &good,
            &k,
            EpisodeParams::default(),
            |_, _| unreachable!(),
        )
        .unwrap();
        assert!(r.success && r.steps_used == 0 && r.path_length_m == 0.0);

        let away = Pose::look_at(
            Vec3::new(0.0, -0.4, 0.4),
            Vec3::new(0.0, -1.0, 0.4),
            WORLD_UP,
        );
        let params = EpisodeParams {
            max_steps: 1,
            ..Default::default()
        };
        let r = run_loop::<Error>(&scene, &away, &k, params, |p, _| Ok(*p)).unwrap();
        assert!(!r.success);
        assert_eq!(r.steps_used, 1);
        assert_eq!(r.failure_reason.as_deref(), Some("max_steps"));

        let r = run_loop::<Error>(&scene, &away, &k, EpisodeParams::default(), |p, _| {
            Ok(Pose::new(
                p.position + Vec3::new(0.0, -0.5, 0.0),
                p.orientation,
            ))
        })
        .unwrap();
        assert_eq!(r.failure_reason.as_deref(), Some("out_of_bounds"));
        assert!(!r.success);
        assert!((r.path_length_m - 0.5).abs() < 1e-12);
    }
}
