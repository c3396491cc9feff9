//! Demonstration records, their on-disk layout, normalization statistics and
//! training-sample iteration.
//!
//! A demo directory holds:
//!
//! ```text
//! manifest.json       demo_id, scene_id, source, n_steps, intrinsics, format_version
//! rgb_0000.png ...    8-bit RGB, one per step
//! depth_0000.bin ...  little-endian f32, row-major H x W, 0.0 = no hit
//! actions.bin         f32 T x 6   (tx ty tz roll pitch yaw)
//! deltas.bin          f32 T x 6   observation pose deltas
//! poses.bin           f32 T x 7   (x y z qw qx qy qz)
//! ```
//!
//! Step `t` pairs the observation taken at `poses[t]` with the action that
//! moves the camera to `poses[t + 1]`; the final action is the zero "stop".

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::se3::{compose, delta_between, euler_from_quat, quat_from_euler, Vec3};
use crate::sim::{is_success, CameraIntrinsics, Observation, Scene, DEFAULT_TAU_V};
use crate::{Pose, PoseDelta, Trajectory};

pub const MAX_EPISODE_STEPS: usize = 50;
pub const FORMAT_VERSION: u32 = 1;
pub const STD_FLOOR: f64 = 1e-6;
pub const CHAIN_TOLERANCE: f64 = 1e-5;
pub const STATS_FILE: &str = "stats.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Scripted,
    Human,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub action: PoseDelta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub demo_id: String,
    pub scene_id: String,
    pub source: DemoSource,
    pub steps: Vec<Step>,
    pub camera_trajectory: Trajectory,
    pub intrinsics: CameraIntrinsics,
}

fn invariant(invariant: &'static str, detail: impl Into<String>) -> Error {
    Error::Invariant {
        invariant,
        detail: detail.into(),
    }
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_pose(&self) -> &Pose {
        self.camera_trajectory.last()
    }

    /// Checks everything except the success of the final frame, which needs the scene.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.steps.len();
        if n == 0 || n > MAX_EPISODE_STEPS {
            return Err(invariant(
                "length",
                format!("{n} steps, expected 1..={MAX_EPISODE_STEPS}"),
            ));
        }
        if self.camera_trajectory.len() != n {
            return Err(invariant(
                "length",
                format!("{} poses for {n} steps", self.camera_trajectory.len()),
            ));
        }
        let k = &self.intrinsics;
        for (t, s) in self.steps.iter().enumerate() {
            let o = &s.observation;
            if o.width != k.width
                || o.height != k.height
                || o.rgb.len() != k.pixels() * 3
                || o.depth.len() != k.pixels()
            {
                return Err(invariant(
                    "observation-shape",
                    format!("step {t} does not match intrinsics"),
                ));
            }
            if !s.action.is_finite() || !o.pose_delta.is_finite() {
                return Err(invariant(
                    "finite",
                    format!("step {t} has non-finite values"),
                ));
            }
        }
        if !self.steps[0].observation.pose_delta.is_zero() {
            return Err(invariant(
                "first-delta",
                "first observation must carry the zero delta",
            ));
        }
        if !self.steps[n - 1].action.is_zero() {
            return Err(invariant(
                "terminal-action",
                "final action must be the zero delta",
            ));
        }
        let poses = self.camera_trajectory.poses();
        let mut chained = poses[0];
        for t in 0..n - 1 {
            chained = compose(&chained, &self.steps[t].action)?;
            let want = &poses[t + 1];
            let dp = (chained.position - want.position).norm();
            let dr = chained.orientation.angle_to(want.orientation);
            if dp > CHAIN_TOLERANCE || dr > CHAIN_TOLERANCE {
                return Err(invariant(
                    "action-chain",
                    format!("step {t}: chained pose off by {dp:.3e} m / {dr:.3e} rad"),
                ));
            }
        }
        Ok(())
    }

    /// Full invariant check, including success of the final pose in `scene`.
    pub fn validate(&self, scene: &Scene, tau_v: f64) -> Result<()> {
        self.check_structure()?;
        if scene.scene_id != self.scene_id {
            return Err(invariant(
                "scene",
                format!(
                    "demo recorded in {} validated against {}",
                    self.scene_id, scene.scene_id
                ),
            ));
        }
        if !is_success(scene, self.final_pose(), &self.intrinsics, tau_v) {
            return Err(invariant(
                "final-success",
                format!("demo {} does not end at a successful view", self.demo_id),
            ));
        }
        Ok(())
    }

    /// The demo exactly as it reads back from disk: 8-bit RGB and float32 numerics.
    pub fn quantized(&self) -> Demonstration {
        let mut d = self.clone();
        for s in &mut d.steps {
            for v in &mut s.observation.rgb {
                *v = dequantize_u8(quantize_u8(*v));
            }
            s.observation.pose_delta = round_delta(&s.observation.pose_delta);
            s.action = round_delta(&s.action);
        }
        let poses = self
            .camera_trajectory
            .poses()
            .iter()
            .map(|p| p.quantize_f32())
            .collect();
        d.camera_trajectory = Trajectory::new(poses, self.camera_trajectory.timestamps().to_vec())
            .expect("same timestamps");
        d
    }
}

fn round_delta(d: &PoseDelta) -> PoseDelta {
    PoseDelta::from_array(d.to_array().map(|v| v as f32 as f64))
}

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize_u8(q: u8) -> f32 {
    q as f32 / 255.0
}

/// Window-3 centered moving average over positions and orientation angles.
///
/// Orientations are expressed as `(roll, pitch, yaw)` relative to the first
/// pose and unwrapped before averaging. The first and last poses are kept
/// bit-for-bit; the returned deltas are recomputed from the smoothed poses.
/// Trajectories shorter than 3 poses come back unchanged.
pub fn smooth_commands(raw: &Trajectory) -> Result<(Trajectory, Vec<PoseDelta>)> {
    let poses = raw.poses();
    let n = poses.len();
    if n < 3 {
        return Ok((raw.clone(), raw.deltas()?));
    }
    let q0 = poses[0].orientation;
    let mut angles: Vec<[f64; 3]> = poses
        .iter()
        .map(|p| euler_from_quat(q0.conj() * p.orientation))
        .collect();
    for i in 1..n {
        for c in 0..3 {
            let prev = angles[i - 1][c];
            let mut a = angles[i][c];
            while a - prev > std::f64::consts::PI {
                a -= std::f64::consts::TAU;
            }
            while a - prev < -std::f64::consts::PI {
                a += std::f64::consts::TAU;
            }
            angles[i][c] = a;
        }
    }
    let mut out = Vec::with_capacity(n);
    out.push(poses[0]);
    for i in 1..n - 1 {
        let avg3 = |a: f64, b: f64, c: f64| (a + b + c) / 3.0;
        let (a, b, c) = (
            poses[i - 1].position,
            poses[i].position,
            poses[i + 1].position,
        );
        let position = Vec3::new(
            avg3(a.x, b.x, c.x),
            avg3(a.y, b.y, c.y),
            avg3(a.z, b.z, c.z),
        );
        let e: [f64; 3] =
            std::array::from_fn(|j| avg3(angles[i - 1][j], angles[i][j], angles[i + 1][j]));
        let orientation = (q0 * quat_from_euler(e[0], e[1], e[2])).canonical();
        out.push(Pose {
            position,
            orientation,
        });
    }
    out.push(poses[n - 1]);
    let smoothed = Trajectory::new(out, raw.timestamps().to_vec())?;
    let deltas = smoothed.deltas()?;
    Ok((smoothed, deltas))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    demo_id: String,
    scene_id: String,
    source: DemoSource,
    n_steps: usize,
    intrinsics: CameraIntrinsics,
    format_version: u32,
}

fn write_f32s(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    w.flush().at(path)
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).at(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!(
                "expected {} f32 values, found {} bytes",
                expected,
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_png(width: usize, height: usize, rgb: &[f32]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let data: Vec<u8> = rgb.iter().map(|v| quantize_u8(*v)).collect();
        let mut w = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png header: {e}")))?;
        w.write_image_data(&data)
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    }
    Ok(buf)
}

fn decode_png(path: &Path, width: usize, height: usize) -> Result<Vec<f32>> {
    let malformed = |detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let file = fs::File::open(path).at(path)?;
    let mut reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| malformed(e.to_string()))?;
    let mut data = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| malformed(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb
        || info.bit_depth != png::BitDepth::Eight
        || info.width as usize != width
        || info.height as usize != height
    {
        return Err(malformed(format!("expected {width}x{height} 8-bit RGB")));
    }
    Ok(data[..info.buffer_size()]
        .iter()
        .map(|q| dequantize_u8(*q))
        .collect())
}

/// Validates `demo` against `scene` and writes it under `root/<demo_id>`.
pub fn save_demo(demo: &Demonstration, scene: &Scene, root: &Path) -> Result<PathBuf> {
    demo.validate(scene, DEFAULT_TAU_V)?;
    write_demo_unchecked(demo, root)
}

pub(crate) fn write_demo_unchecked(demo: &Demonstration, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&demo.demo_id);
    fs::create_dir_all(&dir).at(&dir)?;
    let k = &demo.intrinsics;
    let manifest = Manifest {
        demo_id: demo.demo_id.clone(),
        scene_id: demo.scene_id.clone(),
        source: demo.source,
        n_steps: demo.steps.len(),
        intrinsics: *k,
        format_version: FORMAT_VERSION,
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).at(&mpath)?;
    for (t, s) in demo.steps.iter().enumerate() {
        let p = dir.join(format!("rgb_{t:04}.png"));
        fs::write(&p, encode_png(k.width, k.height, &s.observation.rgb)?).at(&p)?;
        write_f32s(
            &dir.join(format!("depth_{t:04}.bin")),
            s.observation.depth.iter().copied(),
        )?;
    }
    let f32s = |v: [f64; 6]| v.map(|x| x as f32);
    write_f32s(
        &dir.join("actions.bin"),
        demo.steps.iter().flat_map(|s| f32s(s.action.to_array())),
    )?;
    write_f32s(
        &dir.join("deltas.bin"),
        demo.steps
            .iter()
            .flat_map(|s| f32s(s.observation.pose_delta.to_array())),
    )?;
    let poses = dir.join("poses.bin");
    let mut bytes = Vec::with_capacity(28 * demo.steps.len());
    for p in demo.camera_trajectory.poses() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(&poses, bytes).at(&poses)?;
    Ok(dir)
}

/// Reads a demo directory written by [`save_demo`].
pub fn load_demo(dir: &Path) -> Result<Demonstration> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).at(&mpath)?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            path: mpath,
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(raw)?;
    m.intrinsics.validate()?;
    let (k, n) = (m.intrinsics, m.n_steps);
    let actions = read_f32s(&dir.join("actions.bin"), n * 6)?;
    let deltas = read_f32s(&dir.join("deltas.bin"), n * 6)?;
    let pose_path = dir.join("poses.bin");
    let pose_bytes = fs::read(&pose_path).at(&pose_path)?;
    if pose_bytes.len() != n * 28 {
        return Err(Error::Malformed {
            path: pose_path,
            detail: format!("expected {n} poses"),
        });
    }
    let poses = pose_bytes
        .chunks_exact(28)
        .map(Pose::from_le_bytes)
        .collect::<Result<Vec<_>>>()?;
    let to_delta = |v: &[f32]| PoseDelta::from_array(std::array::from_fn(|i| v[i] as f64));
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let rgb = decode_png(&dir.join(format!("rgb_{t:04}.png")), k.width, k.height)?;
        let depth = read_f32s(&dir.join(format!("depth_{t:04}.bin")), k.pixels())?;
        steps.push(Step {
            observation: Observation {
                width: k.width,
                height: k.height,
                rgb,
                depth,
                pose_delta: to_delta(&deltas[6 * t..6 * t + 6]),
            },
            action: to_delta(&actions[6 * t..6 * t + 6]),
        });
    }
    let demo = Demonstration {
        demo_id: m.demo_id,
        scene_id: m.scene_id,
        source: m.source,
        steps,
        camera_trajectory: Trajectory::from_steps(poses)?,
        intrinsics: k,
    };
    demo.check_structure()?;
    Ok(demo)
}

/// Demo directories under `root`, sorted by name.
pub fn list_demo_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).at(root)? {
        let p = entry.at(root)?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<Demonstration>> {
    list_demo_dirs(root)?.iter().map(|d| load_demo(d)).collect()
}

/// Per-dimension normalization statistics over actions and observation deltas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetStats {
    pub action_mean: [f64; 6],
    pub action_std: [f64; 6],
    pub delta_mean: [f64; 6],
    pub delta_std: [f64; 6],
    pub n_demos: usize,
    pub n_steps: usize,
}

fn mean_std(rows: &[[f64; 6]]) -> ([f64; 6], [f64; 6]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; 6];
    for r in rows {
        for i in 0..6 {
            mean[i] += r[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 6];
    for r in rows {
        for i in 0..6 {
            var[i] += (r[i] - mean[i]).powi(2);
        }
    }
    let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
    (mean, std)
}

impl DatasetStats {
    pub fn normalize_action(&self, a: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| (a[i] - self.action_mean[i]) / self.action_std[i])
    }

    pub fn denormalize_action(&self, a: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| a[i] * self.action_std[i] + self.action_mean[i])
    }

    pub fn normalize_delta(&self, d: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| (d[i] - self.delta_mean[i]) / self.delta_std[i])
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let p = root.join(STATS_FILE);
        fs::write(&p, serde_json::to_string_pretty(self)?).at(&p)?;
        Ok(p)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let p = root.join(STATS_FILE);
        Ok(serde_json::from_str(&fs::read_to_string(&p).at(&p)?)?)
    }
}

/// Mean and population standard deviation (floored at `1e-6`) per dimension.
pub fn compute_stats(demos: &[Demonstration]) -> Result<DatasetStats> {
    if demos.is_empty() {
        return Err(Error::Empty(
            "compute_stats needs at least one demonstration",
        ));
    }
    let actions: Vec<[f64; 6]> = demos
        .iter()
        .flat_map(|d| d.steps.iter().map(|s| s.action.to_array()))
        .collect();
    let deltas: Vec<[f64; 6]> = demos
        .iter()
        .flat_map(|d| d.steps.iter().map(|s| s.observation.pose_delta.to_array()))
        .collect();
    if actions.is_empty() {
        return Err(Error::Empty("demonstrations contain no steps"));
    }
    let (action_mean, action_std) = mean_std(&actions);
    let (delta_mean, delta_std) = mean_std(&deltas);
    Ok(DatasetStats {
        action_mean,
        action_std,
        delta_mean,
        delta_std,
        n_demos: demos.len(),
        n_steps: actions.len(),
    })
}

/// One training example: an observation and the next `k` normalized actions.
#[derive(Clone, Debug)]
pub struct TrainingSample<'a> {
    pub demo_index: usize,
    pub timestep: usize,
    pub observation: &'a Observation,
    /// `k` rows; padded rows are zero.
    pub action_chunk: Vec<[f64; 6]>,
    /// `false` where the chunk runs past the end of the episode.
    pub chunk_mask: Vec<bool>,
}

/// One epoch of samples: every timestep of every demo exactly once, in a
/// seeded shuffled order.
pub fn iterate_samples<'a>(
    demos: &'a [Demonstration],
    k: usize,
    stats: &'a DatasetStats,
    seed: u64,
) -> Result<impl Iterator<Item = TrainingSample<'a>> + 'a> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "chunk size k must be at least 1".into(),
        ));
    }
    let mut order: Vec<(usize, usize)> = demos
        .iter()
        .enumerate()
        .flat_map(|(d, demo)| (0..demo.steps.len()).map(move |t| (d, t)))
        .collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .into_iter()
        .map(move |(d, t)| sample_at(demos, d, t, k, stats)))
}

pub fn sample_at<'a>(
    demos: &'a [Demonstration],
    d: usize,
    t: usize,
    k: usize,
    stats: &DatasetStats,
) -> TrainingSample<'a> {
    let steps = &demos[d].steps;
    let mut action_chunk = Vec::with_capacity(k);
    let mut chunk_mask = Vec::with_capacity(k);
    for j in 0..k {
        match steps.get(t + j) {
            Some(s) => {
                action_chunk.push(stats.normalize_action(&s.action.to_array()));
                chunk_mask.push(true);
            }
            None => {
                action_chunk.push([0.0; 6]);
                chunk_mask.push(false);
            }
        }
    }
    TrainingSample {
        demo_index: d,
        timestep: t,
        observation: &steps[t].observation,
        action_chunk,
        chunk_mask,
    }
}

/// Builds a demonstration from a trajectory by rendering observations along it.
/// Actions are the deltas between consecutive poses plus a terminal zero action.
pub fn demonstration_from_trajectory(
    demo_id: String,
    scene: &Scene,
    source: DemoSource,
    trajectory: Trajectory,
    intrinsics: &CameraIntrinsics,
) -> Result<Demonstration> {
    let poses = trajectory.poses();
    let mut steps = Vec::with_capacity(poses.len());
    for (t, pose) in poses.iter().enumerate() {
        let prev = if t == 0 { pose } else { &poses[t - 1] };
        let observation = crate::sim::observe(scene, pose, prev, intrinsics)?;
        let action = match poses.get(t + 1) {
            Some(next) => delta_between(pose, next)?,
            None => PoseDelta::zero(),
        };
        steps.push(Step {
            observation,
            action,
        });
    }
    Ok(Demonstration {
        demo_id,
        scene_id: scene.scene_id.clone(),
        source,
        steps,
        camera_trajectory: trajectory,
        intrinsics: *intrinsics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Quat;
    use crate::sim::{generate_scene, render, Difficulty};

    fn traj(points: &[[f64; 3]]) -> Trajectory {
        Trajectory::from_steps(
            points
                .iter()
                .map(|p| Pose::new(Vec3::from_array(*p), Quat::identity()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn smoothing_leaves_linear_motion_alone() {
        let poses: Vec<Pose> = (0..6)
            .map(|i| {
                let s = i as f64;
                Pose::new(
                    Vec3::new(0.01 * s, -0.02 * s, 0.4),
                    quat_from_euler(0.0, 0.0, 0.05 * s),
                )
            })
            .collect();
        let t = Trajectory::from_steps(poses.clone()).unwrap();
        let (sm, deltas) = smooth_commands(&t).unwrap();
        for (a, b) in sm.poses().iter().zip(&poses) {
            assert!((a.position - b.position).norm() < 1e-9);
            assert!(a.orientation.distance(b.orientation) < 1e-9);
        }
        assert_eq!(deltas.len(), 5);
    }

    #[test]
    fn smoothing_zig_zag() {
        let t = traj(&[
            [0.0, 0.0, 0.0],
            [0.0, 0.02, 0.0],
            [0.0, 0.0, 0.0],
            [0.0, 0.02, 0.0],
            [0.0, 0.0, 0.0],
        ]);
        let (sm, deltas) = smooth_commands(&t).unwrap();
        let ys: Vec<f64> = sm.poses().iter().map(|p| p.position.y).collect();
        let want = [0.0, 0.02 / 3.0, 0.04 / 3.0, 0.02 / 3.0, 0.0];
        for (y, w) in ys.iter().zip(want) {
            assert!((y - w).abs() < 1e-12, "{ys:?}");
        }
        assert_eq!(sm.first(), t.first());
        assert_eq!(sm.last(), t.last());
        let mut p = *sm.first();
        for (d, want) in deltas.iter().zip(&sm.poses()[1..]) {
            p = compose(&p, d).unwrap();
            assert!((p.position - want.position).norm() < 1e-12);
        }
    }

    #[test]
    fn short_trajectories_pass_through() {
        let t = traj(&[[0.0; 3], [0.1, 0.0, 0.0]]);
        let (sm, d) = smooth_commands(&t).unwrap();
        assert_eq!(sm, t);
        assert_eq!(d.len(), 1);
    }

    fn fake_demo(actions: &[[f64; 6]]) -> Demonstration {
        let k = CameraIntrinsics::with_hfov(16, 16, 1.0);
        let obs = Observation {
            width: 16,
            height: 16,
            rgb: vec![0.5; 768],
            depth: vec![0.0; 256],
            pose_delta: PoseDelta::from_array(actions[0]),
        };
        Demonstration {
            demo_id: "d".into(),
            scene_id: "s".into(),
            source: DemoSource::Scripted,
            steps: actions
                .iter()
                .map(|a| Step {
                    observation: obs.clone(),
                    action: PoseDelta::from_array(*a),
                })
                .collect(),
            camera_trajectory: Trajectory::from_steps(vec![Pose::identity(); actions.len()])
                .unwrap(),
            intrinsics: k,
        }
    }

    #[test]
    fn stats_examples() {
        let c = [0.01, -0.02, 0.03, 0.1, 0.0, -0.1];
        let s = compute_stats(&[fake_demo(&[c, c, c])]).unwrap();
        for i in 0..6 {
            assert!((s.action_mean[i] - c[i]).abs() < 1e-15);
            assert_eq!(s.action_std[i], STD_FLOOR);
        }
        let s = compute_stats(&[fake_demo(&[[-1.0; 6], [1.0; 6]])]).unwrap();
        assert_eq!(s.action_mean, [0.0; 6]);
        assert_eq!(s.action_std, [1.0; 6]);
        assert!(matches!(compute_stats(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn stats_over_union_match_pooled_values() {
        let a = fake_demo(&[
            [0.1, 0.2, 0.3, 0.0, 0.0, 0.0],
            [0.3, 0.1, -0.2, 0.1, 0.0, 0.0],
        ]);
        let b = fake_demo(&[
            [-0.4, 0.0, 0.5, 0.2, 0.1, 0.0],
            [0.0; 6],
            [0.2, 0.2, 0.2, 0.2, 0.2, 0.2],
        ]);
        let s = compute_stats(&[a.clone(), b.clone()]).unwrap();
        // pooled recomputation by hand
        let all: Vec<[f64; 6]> = a
            .steps
            .iter()
            .chain(&b.steps)
            .map(|s| s.action.to_array())
            .collect();
        for i in 0..6 {
            let m: f64 = all.iter().map(|r| r[i]).sum::<f64>() / 5.0;
            let v: f64 = all.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / 5.0;
            assert!((s.action_mean[i] - m).abs() < 1e-12);
            assert!((s.action_std[i] - v.sqrt().max(STD_FLOOR)).abs() < 1e-12);
        }
        assert_eq!((s.n_demos, s.n_steps), (2, 5));
    }

    #[test]
    fn sample_counts_and_padding() {
        let demo = fake_demo(&[[0.1; 6]; 7]);
        let stats = compute_stats(std::slice::from_ref(&demo)).unwrap();
        let demos = vec![demo];
        let samples: Vec<_> = iterate_samples(&demos, 5, &stats, 3).unwrap().collect();
        assert_eq!(samples.len(), 7);
        let s5 = samples.iter().find(|s| s.timestep == 5).unwrap();
        assert_eq!(s5.chunk_mask, vec![true, true, false, false, false]);
        assert_eq!(s5.action_chunk[4], [0.0; 6]);
        let order = |seed| {
            iterate_samples(&demos, 5, &stats, seed)
                .unwrap()
                .map(|s| s.timestep)
                .collect::<Vec<_>>()
        };
        assert_eq!(order(3), order(3));
        assert!(iterate_samples(&demos, 0, &stats, 3).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let s = DatasetStats {
            action_mean: [0.1, -0.2, 0.0, 0.3, 0.0, 0.01],
            action_std: [0.5, 2.0, 1e-6, 0.1, 1.0, 3.0],
            delta_mean: [0.0; 6],
            delta_std: [1.0; 6],
            n_demos: 1,
            n_steps: 1,
        };
        let a = [0.7, 0.1, -0.05, 1.0, -2.0, 0.3];
        let back = s.denormalize_action(&s.normalize_action(&a));
        for i in 0..6 {
            assert!((back[i] - a[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn demo_from_trajectory_and_disk_round_trip() {
        let scene = Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04);
        let k = CameraIntrinsics::default();
        let poses: Vec<Pose> = (0..4)
            .map(|i| {
                Pose::new(Vec3::new(0.01 * i as f64, 0.0, 0.0), Quat::identity()).quantize_f32()
            })
            .collect();
        let demo = demonstration_from_trajectory(
            "demo-a".into(),
            &scene,
            DemoSource::Scripted,
            Trajectory::from_steps(poses.clone()).unwrap(),
            &k,
        )
        .unwrap();
        demo.validate(&scene, DEFAULT_TAU_V).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = save_demo(&demo, &scene, dir.path()).unwrap();
        let back = load_demo(&path).unwrap();
        assert_eq!(back, demo.quantized());
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(path.join(MANIFEST_FILE)).unwrap()).unwrap();
        let n_rgb = fs::read_dir(&path)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with("rgb_")
            })
            .count();
        assert_eq!(manifest["n_steps"].as_u64().unwrap() as usize, n_rgb);
        assert_eq!(manifest["format_version"], 1);
        // depth bit-exact, rgb within quantization of a fresh render
        let f = render(&scene, &poses[2], &k, true);
        assert_eq!(back.steps[2].observation.depth, f.depth);
        for (a, b) in back.steps[2].observation.rgb.iter().zip(&f.rgb) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn save_gate_rejects_unsuccessful_demo() {
        let scene = generate_scene(1, Difficulty::Easy).unwrap();
        let k = CameraIntrinsics::default();
        // camera staring away from the target
        let p = Pose::new(Vec3::new(0.0, -0.5, 0.4), Quat::identity());
        let demo = demonstration_from_trajectory(
            "bad".into(),
            &scene,
            DemoSource::Human,
            Trajectory::from_steps(vec![p, p]).unwrap(),
            &k,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = save_demo(&demo, &scene, dir.path()).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Invariant {
                    invariant: "final-success",
                    ..
                }
            ),
            "{err}"
        );
        assert!(!dir.path().join("bad").exists());
    }

    #[test]
    fn load_rejects_unknown_version() {
        let scene = Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04);
        let k = CameraIntrinsics::default();
        let demo = demonstration_from_trajectory(
            "v".into(),
            &scene,
            DemoSource::Scripted,
            Trajectory::from_steps(vec![Pose::identity()]).unwrap(),
            &k,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = save_demo(&demo, &scene, dir.path()).unwrap();
        let m = path.join(MANIFEST_FILE);
        let text = fs::read_to_string(&m)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 7");
        fs::write(&m, text).unwrap();
        assert!(matches!(
            load_demo(&path),
            Err(Error::FormatVersion { found: 7, .. })
        ));
    }

    #[test]
    fn structure_checks_name_the_invariant() {
        let mut d = fake_demo(&[[0.0; 6]; 3]);
        d.steps[0].observation.pose_delta = PoseDelta::zero();
        for s in &mut d.steps {
            s.observation.pose_delta = PoseDelta::zero();
        }
        d.check_structure().unwrap();
        d.steps[0].action = PoseDelta::from_array([0.1, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            d.check_structure(),
            Err(Error::Invariant {
                invariant: "action-chain",
                ..
            })
        ));
        let long = fake_demo(&[[0.0; 6]; 51]);
        assert!(matches!(
            long.check_structure(),
            Err(Error::Invariant {
                invariant: "length",
                ..
            })
        ));
    }
}
