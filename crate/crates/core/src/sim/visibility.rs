use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::se3::delta_between;
use crate::sim::camera::CameraIntrinsics;
use crate::sim::render::{render, Frame, HIT_TARGET};
use crate::sim::scene::Scene;
use crate::{Pose, PoseDelta};

pub const DEFAULT_TAU_V: f64 = 0.95;

/// Ground-truth occlusion measurement of the target from one viewpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityReport {
    pub silhouette_pixels: usize,
    pub visible_pixels: usize,
    pub in_frame: bool,
    pub visibility_fraction: f64,
}

impl VisibilityReport {
    pub fn is_success(&self, tau_v: f64) -> bool {
        self.in_frame && self.visibility_fraction >= tau_v
    }
}

/// No silhouette pixel on the 1-pixel border, and the silhouette is big enough.
fn silhouette_in_frame(silhouette: &Frame, k: &CameraIntrinsics, count: usize) -> bool {
    if count < k.min_silhouette_pixels() {
        return false;
    }
    let (w, h) = (silhouette.width, silhouette.height);
    let on_target = |u: usize, v: usize| silhouette.hit_ids[v * w + u] == HIT_TARGET;
    let top_bottom = (0..w).any(|u| on_target(u, 0) || on_target(u, h - 1));
    let sides = (0..h).any(|v| on_target(0, v) || on_target(w - 1, v));
    !(top_bottom || sides)
}

pub fn visibility(scene: &Scene, camera: &Pose, k: &CameraIntrinsics) -> VisibilityReport {
    let silhouette = render(scene, camera, k, false);
    let silhouette_pixels = silhouette.count_hits(HIT_TARGET);
    let visible_pixels = if scene.occluders.is_empty() {
        silhouette_pixels
    } else {
        render(scene, camera, k, true).count_hits(HIT_TARGET)
    };
    let visibility_fraction = if silhouette_pixels == 0 {
        0.0
    } else {
        visible_pixels as f64 / silhouette_pixels as f64
    };
    VisibilityReport {
        silhouette_pixels,
        visible_pixels,
        in_frame: silhouette_in_frame(&silhouette, k, silhouette_pixels),
        visibility_fraction,
    }
}

/// Inclusive: `visibility_fraction >= tau_v` and the target is fully in frame.
pub fn is_success(scene: &Scene, camera: &Pose, k: &CameraIntrinsics, tau_v: f64) -> bool {
    visibility(scene, camera, k).is_success(tau_v)
}

/// RGB-D image plus the pose change that led to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// `H*W*3` in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// `H*W` meters, `0.0` for no hit.
    pub depth: Vec<f32>,
    pub pose_delta: PoseDelta,
}

impl Observation {
    pub fn from_frame(frame: Frame, pose_delta: PoseDelta) -> Self {
        Self {
            width: frame.width,
            height: frame.height,
            rgb: frame.rgb,
            depth: frame.depth,
            pose_delta,
        }
    }
}

/// Renders with occluders and attaches `delta_between(prev_camera, camera)`.
/// First steps pass `prev_camera == camera`.
pub fn observe(
    scene: &Scene,
    camera: &Pose,
    prev_camera: &Pose,
    k: &CameraIntrinsics,
) -> Result<Observation> {
    let pose_delta = delta_between(prev_camera, camera)?;
    Ok(Observation::from_frame(
        render(scene, camera, k, true),
        pose_delta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{compose, Quat, Vec3};
    use crate::sim::oracle::reference_render;
    use crate::sim::scene::{generate_scene, Difficulty, Occluder, OccluderShape};
    use crate::sim::viewpoints::shell_lattice;

    fn target_scene() -> Scene {
        Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04)
    }

    fn wall(x_center: f64, z: f64) -> Occluder {
        Occluder {
            shape: OccluderShape::Disc,
            pose: Pose::new(Vec3::new(x_center, 0.0, z), Quat::identity()),
            half_extents: Vec3::new(1.0, 1.0, 0.0),
            color: [0.1, 0.6, 0.1],
        }
    }

    #[test]
    fn unoccluded_centered_target() {
        let r = visibility(
            &target_scene(),
            &Pose::identity(),
            &CameraIntrinsics::default(),
        );
        assert_eq!(r.visibility_fraction, 1.0);
        assert!(r.in_frame);
        assert!(r.silhouette_pixels >= 25);
        assert!(is_success(
            &target_scene(),
            &Pose::identity(),
            &CameraIntrinsics::default(),
            0.95
        ));
    }

    #[test]
    fn fully_covered_target() {
        let mut s = target_scene();
        s.occluders.push(wall(0.0, 0.2));
        let r = visibility(&s, &Pose::identity(), &CameraIntrinsics::default());
        assert_eq!(r.visible_pixels, 0);
        assert_eq!(r.visibility_fraction, 0.0);
        assert!(!r.is_success(0.95));
    }

    #[test]
    fn half_plane_cover_counts_pixels() {
        let k = CameraIntrinsics::default();
        let cam = Pose::identity();
        let s = target_scene();
        let sil = reference_render(&s, &cam, &k, false);
        let total = sil.count_hits(HIT_TARGET);
        let mut per_col = vec![0usize; k.width];
        for (i, h) in sil.hit_ids.iter().enumerate() {
            if *h == HIT_TARGET {
                per_col[i % k.width] += 1;
            }
        }
        // column boundary whose left side holds closest to 40% of the silhouette
        let mut best = (f64::MAX, 0, 0);
        let mut cum = 0;
        for c in 0..=k.width {
            let err = (cum as f64 / total as f64 - 0.4).abs();
            if err < best.0 {
                best = (err, c, cum);
            }
            if c < k.width {
                cum += per_col[c];
            }
        }
        let (_, col, left) = best;
        let z = 0.2;
        let x_edge = (col as f64 - k.cx) / k.fx * z;
        let mut occluded = s.clone();
        occluded.occluders.push(wall(x_edge - 1.0, z));

        let r = visibility(&occluded, &cam, &k);
        let quantum = *per_col.iter().max().unwrap() as f64 / total as f64;
        assert_eq!(r.silhouette_pixels, total);
        assert_eq!(r.visible_pixels, total - left);
        assert!(
            (r.visibility_fraction - 0.6).abs() <= quantum,
            "{}",
            r.visibility_fraction
        );
    }

    #[test]
    fn success_threshold_inclusive() {
        let r = VisibilityReport {
            silhouette_pixels: 100,
            visible_pixels: 95,
            in_frame: true,
            visibility_fraction: 0.95,
        };
        assert!(r.is_success(0.95));
        let r = VisibilityReport {
            visible_pixels: 80,
            visibility_fraction: 0.80,
            ..r
        };
        assert!(!r.is_success(0.95));
        let r = VisibilityReport {
            visibility_fraction: 1.0,
            in_frame: false,
            ..r
        };
        assert!(!r.is_success(0.95));
    }

    #[test]
    fn border_and_size_rules() {
        let k = CameraIntrinsics::default();
        let s = target_scene();
        // target pushed to the image edge
        let cam = Pose::new(Vec3::new(0.2, 0.0, 0.0), Quat::identity());
        assert!(!visibility(&s, &cam, &k).in_frame);
        // target too far away to reach 25 pixels
        let far = Scene::with_target(Vec3::new(0.0, 0.0, 3.0), 0.04);
        let r = visibility(&far, &Pose::identity(), &k);
        assert!(r.silhouette_pixels > 0 && r.silhouette_pixels < 25);
        assert!(!r.in_frame);
    }

    #[test]
    fn removing_occluders_never_hurts() {
        let k = CameraIntrinsics::default();
        for seed in 0..4 {
            let s = generate_scene(seed, Difficulty::Hard).unwrap();
            for cam in shell_lattice(&s, 12, seed, s.shell) {
                let base = visibility(&s, &cam, &k).visibility_fraction;
                for i in 0..s.occluders.len() {
                    let mut fewer = s.clone();
                    fewer.occluders.remove(i);
                    assert!(visibility(&fewer, &cam, &k).visibility_fraction >= base);
                }
            }
        }
    }

    #[test]
    fn observe_contract() {
        let k = CameraIntrinsics::default();
        let s = generate_scene(2, Difficulty::Easy).unwrap();
        let cam = shell_lattice(&s, 1, 0, s.shell)[0];
        let o = observe(&s, &cam, &cam, &k).unwrap();
        assert!(o.pose_delta.is_zero());
        let f = render(&s, &cam, &k, true);
        assert_eq!(o.rgb, f.rgb);
        assert_eq!(o.depth, f.depth);

        let ahead = compose(
            &cam,
            &PoseDelta::from_array([0.0, 0.0, 0.02, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let o = observe(&s, &ahead, &cam, &k).unwrap();
        assert!((o.pose_delta.translation.z - 0.02).abs() < 1e-7);
        assert!(o.pose_delta.translation.x.abs() < 1e-7);
    }
}
