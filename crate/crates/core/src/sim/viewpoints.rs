use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::se3::Vec3;
use crate::sim::scene::{orthonormal_basis, Scene, Shell, APPROACH_AXIS};
use crate::{Pose, Vec3d};

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// World "up" used to regularize the camera roll when looking at the target.
pub const WORLD_UP: Vec3d = Vec3::new(0.0, 0.0, 1.0);

/// Quasi-uniform look-at poses on the approach hemisphere around the target.
///
/// Directions follow a Fibonacci lattice (equal-area in the cosine to the
/// approach axis) with a seeded azimuth offset; radii are uniform in the shell.
/// Poses are snapped to float32-representable values so they survive the
/// dataset format unchanged.
pub fn shell_lattice(scene: &Scene, n: usize, seed: u64, shell: Shell) -> Vec<Pose> {
    shell_lattice_around(scene.target_center(), n, seed, shell)
}

/// Same lattice around an arbitrary center.
pub fn shell_lattice_around(target: Vec3d, n: usize, seed: u64, shell: Shell) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (e1, e2) = orthonormal_basis(APPROACH_AXIS);
    (0..n)
        .map(|i| {
            let cos_t = 1.0 - (i as f64 + 0.5) / n as f64;
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let phi = offset + GOLDEN_ANGLE * i as f64;
            let dir = APPROACH_AXIS.scale(cos_t)
                + e1.scale(sin_t * phi.cos())
                + e2.scale(sin_t * phi.sin());
            let r = rng.gen_range(shell.r_min..=shell.r_max);
            Pose::look_at(target + dir.scale(r), target, WORLD_UP).quantize_f32()
        })
        .collect()
}

/// `n` initial camera poses around the scene's target.
pub fn sample_initial_viewpoints(
    scene: &Scene,
    n: usize,
    seed: u64,
    shell: Shell,
) -> Result<Vec<Pose>> {
    if n == 0 {
        return Err(crate::Error::InvalidArgument(
            "need at least one viewpoint".into(),
        ));
    }
    shell.validate()?;
    Ok(shell_lattice(scene, n, seed, shell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{generate_scene, Difficulty};

    #[test]
    fn fifty_distinct_poses_look_at_target() {
        let s = generate_scene(4, Difficulty::Medium).unwrap();
        let shell = Shell::default();
        let poses = sample_initial_viewpoints(&s, 50, 17, shell).unwrap();
        assert_eq!(poses.len(), 50);
        let c = s.target_center();
        for (i, p) in poses.iter().enumerate() {
            let r = (p.position - c).norm();
            assert!(r >= shell.r_min - 1e-6 && r <= shell.r_max + 1e-6);
            // perpendicular distance from the target center to the optical axis
            let to_c = c - p.position;
            let along = to_c.dot(p.forward());
            let miss = (to_c - p.forward().scale(along)).norm();
            assert!(along > 0.0 && miss <= s.target_radius());
            // facing the approach side
            assert!((p.position - c).dot(APPROACH_AXIS) >= 0.0);
            for q in &poses[..i] {
                assert!((q.position - p.position).norm() > 1e-6);
            }
            assert_eq!(Pose::from_le_bytes(&p.to_le_bytes()).unwrap(), *p);
        }
        assert_eq!(poses, sample_initial_viewpoints(&s, 50, 17, shell).unwrap());
        assert_ne!(poses, sample_initial_viewpoints(&s, 50, 18, shell).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = generate_scene(4, Difficulty::Easy).unwrap();
        assert!(sample_initial_viewpoints(&s, 0, 1, Shell::default()).is_err());
        assert!(sample_initial_viewpoints(
            &s,
            5,
            1,
            Shell {
                r_min: 0.6,
                r_max: 0.3
            }
        )
        .is_err());
    }
}
