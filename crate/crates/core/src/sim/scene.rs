use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Mat3, Quat, Vec3};
use crate::sim::camera::CameraIntrinsics;
use crate::sim::viewpoints::shell_lattice;
use crate::sim::visibility::{is_success, DEFAULT_TAU_V};
use crate::{Pose, Vec3d};

/// Unit vector pointing from the target toward the side the camera approaches from.
pub const APPROACH_AXIS: Vec3d = Vec3::new(0.0, -1.0, 0.0);
/// Nominal target location; the generator jitters around it.
pub const WORKSPACE_CENTER: Vec3d = Vec3::new(0.0, 0.0, 0.4);

pub const CERTIFY_CANDIDATES: usize = 256;
pub const MAX_GENERATION_ATTEMPTS: usize = 100;
/// Minimum share of certification candidates that must fail.
pub const MIN_FAILING_SHARE: f64 = 0.2;

pub type Rgb = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn occluder_count(self) -> usize {
        match self {
            Difficulty::Easy => 2,
            Difficulty::Medium => 4,
            Difficulty::Hard => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "hard" => Ok(Self::Hard),
            other => Err(Error::InvalidArgument(format!(
                "unknown difficulty {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vec3d,
    pub radius: f64,
    pub color: Rgb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccluderShape {
    /// Flat elliptical disc in the local xy-plane, normal along local z.
    Disc,
    Ellipsoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Occluder {
    pub shape: OccluderShape,
    pub pose: Pose,
    /// Local semi-axes. Discs only use x and y.
    pub half_extents: Vec3d,
    pub color: Rgb,
}

impl Occluder {
    pub fn bounding_radius(&self) -> f64 {
        let h = self.half_extents;
        match self.shape {
            OccluderShape::Disc => h.x.max(h.y),
            OccluderShape::Ellipsoid => h.x.max(h.y).max(h.z),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: Vec3d) -> bool {
        let p = p.to_array();
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_ball(&self, c: Vec3d, r: f64) -> bool {
        let c = c.to_array();
        (0..3).all(|i| c[i] - r >= self.min[i] && c[i] + r <= self.max[i])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }
}

/// Radial band around the target in which cameras start and goals are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for Shell {
    fn default() -> Self {
        Self {
            r_min: 0.3,
            r_max: 0.6,
        }
    }
}

impl Shell {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "shell needs 0 < r_min < r_max, got {} / {}",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub seed: u64,
    pub difficulty: Difficulty,
    /// `None` only for synthetic test scenes.
    pub target: Option<Sphere>,
    pub occluders: Vec<Occluder>,
    pub background_color: Rgb,
    pub workspace_bounds: Aabb,
    pub shell: Shell,
}

impl Scene {
    pub fn default_bounds() -> Aabb {
        Aabb {
            min: [-0.8, -0.8, -0.4],
            max: [0.8, 0.4, 1.2],
        }
    }

    /// A scene with only a target, used by tests and the baseline's sanity checks.
    pub fn with_target(center: Vec3d, radius: f64) -> Self {
        Self {
            scene_id: "target-only".into(),
            seed: 0,
            difficulty: Difficulty::Easy,
            target: Some(Sphere {
                center,
                radius,
                color: [0.85, 0.15, 0.1],
            }),
            occluders: Vec::new(),
            background_color: [0.55, 0.7, 0.85],
            workspace_bounds: Self::default_bounds(),
            shell: Shell::default(),
        }
    }

    pub fn target_center(&self) -> Vec3d {
        self.target
            .as_ref()
            .map(|t| t.center)
            .unwrap_or(WORKSPACE_CENTER)
    }

    pub fn target_radius(&self) -> f64 {
        self.target.as_ref().map(|t| t.radius).unwrap_or(0.0)
    }

    pub fn without_occluders(&self) -> Self {
        Self {
            occluders: Vec::new(),
            ..self.clone()
        }
    }

    /// Stable 64-bit seed derived from the scene id (FNV-1a).
    pub fn id_seed(&self) -> u64 {
        fnv1a(self.scene_id.as_bytes())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SceneFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Outcome of the dense shell sweep that every generated scene must pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certification {
    pub n_candidates: usize,
    pub n_success: usize,
}

impl Certification {
    pub fn failing_share(&self) -> f64 {
        (self.n_candidates - self.n_success) as f64 / self.n_candidates as f64
    }

    pub fn passes(&self) -> bool {
        self.n_success >= 1 && self.failing_share() >= MIN_FAILING_SHARE
    }
}

/// Runs the candidate sweep: the same lattice the scripted expert draws goals from.
pub fn certify(scene: &Scene, intrinsics: &CameraIntrinsics) -> Certification {
    let candidates = shell_lattice(scene, CERTIFY_CANDIDATES, scene.id_seed(), scene.shell);
    let n_success = candidates
        .iter()
        .filter(|p| is_success(scene, p, intrinsics, DEFAULT_TAU_V))
        .count();
    Certification {
        n_candidates: candidates.len(),
        n_success,
    }
}

fn uniform_in_cap(rng: &mut ChaCha8Rng, axis: Vec3d, max_angle: f64) -> Vec3d {
    let cos_min = max_angle.cos();
    let c: f64 = rng.gen_range(cos_min..=1.0);
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (e1, e2) = orthonormal_basis(axis);
    axis.scale(c) + e1.scale(s * phi.cos()) + e2.scale(s * phi.sin())
}

pub(crate) fn orthonormal_basis(n: Vec3d) -> (Vec3d, Vec3d) {
    let helper = if n.z.abs() < 0.9 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let e1 = n.cross(helper).normalized();
    let e2 = n.cross(e1);
    (e1, e2)
}

fn random_color(rng: &mut ChaCha8Rng, base: Rgb, spread: f64) -> Rgb {
    let mut c = base;
    for v in c.iter_mut() {
        *v = (*v + rng.gen_range(-spread..=spread)).clamp(0.0, 1.0);
    }
    c
}

fn sample_layout(rng: &mut ChaCha8Rng, seed: u64, difficulty: Difficulty) -> Scene {
    let jitter = Vec3::new(
        rng.gen_range(-0.03..=0.03),
        rng.gen_range(-0.03..=0.03),
        rng.gen_range(-0.03..=0.03),
    );
    let center = WORKSPACE_CENTER + jitter;
    let radius = rng.gen_range(0.03..=0.05);
    // red-to-yellow fruit, green foliage
    let target_color = random_color(rng, [0.85, 0.3, 0.1], 0.12);
    let target = Sphere {
        center,
        radius,
        color: target_color,
    };

    let mut occluders = Vec::with_capacity(difficulty.occluder_count());
    for i in 0..difficulty.occluder_count() {
        // The first occluder always sits close to the approach axis so the
        // frontal view is blocked; the rest spread over the cap.
        let max_angle = if i == 0 { 0.35 } else { 1.0 };
        let dir = uniform_in_cap(rng, APPROACH_AXIS, max_angle);
        let shape = if rng.gen_bool(0.7) {
            OccluderShape::Disc
        } else {
            OccluderShape::Ellipsoid
        };
        let (half_extents, standoff) = match shape {
            OccluderShape::Disc => {
                let a = rng.gen_range(0.05..=0.09);
                let b = rng.gen_range(0.6..=1.0) * a;
                (
                    Vec3::new(a, b, 0.0),
                    rng.gen_range(radius + 0.05..=radius + 0.16),
                )
            }
            OccluderShape::Ellipsoid => {
                let a = rng.gen_range(0.03..=0.05);
                let h = Vec3::new(
                    a,
                    rng.gen_range(0.6..=1.0) * a,
                    rng.gen_range(0.4..=0.8) * a,
                );
                (h, rng.gen_range(radius + a + 0.03..=radius + a + 0.14))
            }
        };
        // Leaves face roughly toward the target with some tilt and spin.
        let normal = uniform_in_cap(rng, dir, 0.5);
        let (e1, e2) = orthonormal_basis(normal);
        let spin: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = e1.scale(spin.cos()) + e2.scale(spin.sin());
        let y = normal.cross(x);
        let orientation = Quat::from_matrix(&Mat3::from_cols(x, y, normal));
        let pose = Pose::new(center + dir.scale(standoff), orientation).quantize_f32();
        let color = random_color(rng, [0.2, 0.55, 0.2], 0.1);
        occluders.push(Occluder {
            shape,
            pose,
            half_extents,
            color,
        });
    }

    Scene {
        scene_id: format!("{}-{seed:08}", difficulty.as_str()),
        seed,
        difficulty,
        target: Some(target),
        occluders,
        background_color: random_color(rng, [0.55, 0.7, 0.85], 0.05),
        workspace_bounds: Scene::default_bounds(),
        shell: Shell::default(),
    }
}

fn in_bounds(scene: &Scene) -> bool {
    let b = &scene.workspace_bounds;
    scene
        .target
        .as_ref()
        .map_or(true, |t| b.contains_ball(t.center, t.radius))
        && scene
            .occluders
            .iter()
            .all(|o| b.contains_ball(o.pose.position, o.bounding_radius()))
}

/// Deterministic certified scene for `(seed, difficulty)`.
pub fn generate_scene(seed: u64, difficulty: Difficulty) -> Result<Scene> {
    generate_scene_with(seed, difficulty, &CameraIntrinsics::default())
}

pub fn generate_scene_with(
    seed: u64,
    difficulty: Difficulty,
    intrinsics: &CameraIntrinsics,
) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(difficulty.as_str().as_bytes()));
    let mut last = None;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let scene = sample_layout(&mut rng, seed, difficulty);
        if !in_bounds(&scene) {
            continue;
        }
        let cert = certify(&scene, intrinsics);
        if cert.passes() {
            return Ok(scene);
        }
        last = Some(cert);
    }
    Err(Error::Generation {
        seed,
        reason: match last {
            Some(c) => format!(
                "no certified layout in {MAX_GENERATION_ATTEMPTS} attempts (last sweep: {}/{} succeeding)",
                c.n_success, c.n_candidates
            ),
            None => format!("no in-bounds layout in {MAX_GENERATION_ATTEMPTS} attempts"),
        },
    })
}

// ---- on-disk JSON layout ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetFile {
    center: [f64; 3],
    radius: f64,
    color: Rgb,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OccluderFile {
    shape: OccluderShape,
    pose: [f64; 7],
    half_extents: [f64; 3],
    color: Rgb,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    scene_id: String,
    seed: u64,
    difficulty: Difficulty,
    target: Option<TargetFile>,
    occluders: Vec<OccluderFile>,
    background_color: Rgb,
    workspace_bounds: Aabb,
    shell: Shell,
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        SceneFile {
            scene_id: s.scene_id.clone(),
            seed: s.seed,
            difficulty: s.difficulty,
            target: s.target.as_ref().map(|t| TargetFile {
                center: t.center.to_array(),
                radius: t.radius,
                color: t.color,
            }),
            occluders: s
                .occluders
                .iter()
                .map(|o| OccluderFile {
                    shape: o.shape,
                    pose: o.pose.to_array(),
                    half_extents: o.half_extents.to_array(),
                    color: o.color,
                })
                .collect(),
            background_color: s.background_color,
            workspace_bounds: s.workspace_bounds,
            shell: s.shell,
        }
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;
    fn try_from(f: SceneFile) -> Result<Self> {
        f.shell.validate()?;
        let occluders = f
            .occluders
            .into_iter()
            .map(|o| {
                Ok(Occluder {
                    shape: o.shape,
                    pose: Pose::from_unit_array(o.pose)?,
                    half_extents: Vec3::from_array(o.half_extents),
                    color: o.color,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            scene_id: f.scene_id,
            seed: f.seed,
            difficulty: f.difficulty,
            target: f.target.map(|t| Sphere {
                center: Vec3::from_array(t.center),
                radius: t.radius,
                color: t.color,
            }),
            occluders,
            background_color: f.background_color,
            workspace_bounds: f.workspace_bounds,
            shell: f.shell,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_counts() {
        let a = generate_scene(7, Difficulty::Easy).unwrap();
        let b = generate_scene(7, Difficulty::Easy).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.occluders.len(), 2);
        assert_eq!(
            generate_scene(7, Difficulty::Hard).unwrap().occluders.len(),
            6
        );
    }

    #[test]
    fn target_radius_and_bounds() {
        for seed in 0..5 {
            let s = generate_scene(seed, Difficulty::Medium).unwrap();
            let r = s.target_radius();
            assert!((0.02..=0.06).contains(&r));
            assert!(in_bounds(&s));
        }
    }

    #[test]
    fn json_round_trip() {
        let s = generate_scene(3, Difficulty::Medium).unwrap();
        let back = Scene::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        for key in [
            "scene_id",
            "seed",
            "difficulty",
            "target",
            "occluders",
            "background_color",
            "workspace_bounds",
            "shell",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["occluders"][0]["pose"].as_array().unwrap().len(), 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        let s = generate_scene(3, Difficulty::Easy).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(Scene::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn difficulty_parse() {
        assert_eq!("hard".parse::<Difficulty>().unwrap(), Difficulty::Hard);
        assert!("extreme".parse::<Difficulty>().is_err());
    }
}
