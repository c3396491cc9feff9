//! Analytic ray casting of the scene primitives.
//!
//! One ray per pixel center, intersected with the target sphere, disc and
//! ellipsoid occluders; the nearest positive hit wins, ties go to the lower id.

use crate::se3::{Mat3, Vec3};
use crate::sim::camera::CameraIntrinsics;
use crate::sim::scene::{OccluderShape, Rgb, Scene};
use crate::{Pose, Vec3d};

pub const HIT_BACKGROUND: u8 = 0;
pub const HIT_TARGET: u8 = 1;
/// Occluder `i` is reported as `HIT_FIRST_OCCLUDER + i`.
pub const HIT_FIRST_OCCLUDER: u8 = 2;
pub const AMBIENT_FLOOR: f64 = 0.2;

/// Raw render output, row-major with `(row, col[, channel])` ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// `H*W*3`, each in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// `H*W` distances along the optical axis; `0.0` where nothing was hit.
    pub depth: Vec<f32>,
    pub hit_ids: Vec<u8>,
}

impl Frame {
    fn blank(width: usize, height: usize, bg: Rgb) -> Self {
        let n = width * height;
        let mut rgb = Vec::with_capacity(n * 3);
        for _ in 0..n {
            rgb.extend(bg.iter().map(|c| *c as f32));
        }
        Self {
            width,
            height,
            rgb,
            depth: vec![0.0; n],
            hit_ids: vec![HIT_BACKGROUND; n],
        }
    }

    pub fn count_hits(&self, id: u8) -> usize {
        self.hit_ids.iter().filter(|h| **h == id).count()
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Sphere { radius: f64 },
    Disc { hx: f64, hy: f64 },
    Ellipsoid { h: [f64; 3] },
}

#[derive(Clone, Copy)]
struct Prim {
    id: u8,
    kind: Kind,
    center: Vec3d,
    rot: Mat3<f64>,
    color: Rgb,
    /// Inclusive pixel rectangle `[u0, u1] x [v0, v1]` that may contain hits.
    rect: (usize, usize, usize, usize),
}

#[derive(Clone, Copy)]
struct Hit {
    t: f64,
    normal: Vec3d,
}

#[inline]
fn intersect_sphere(o: Vec3d, d: Vec3d, center: Vec3d, radius: f64) -> Option<Hit> {
    let oc = o - center;
    let a = d.dot(d);
    let b = oc.dot(d);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / a;
    let t1 = (-b + sq) / a;
    let t = if t0 > 0.0 {
        t0
    } else if t1 > 0.0 {
        t1
    } else {
        return None;
    };
    let p = o + d.scale(t);
    Some(Hit {
        t,
        normal: (p - center).scale(1.0 / radius),
    })
}

#[inline]
fn intersect_disc(
    o: Vec3d,
    d: Vec3d,
    center: Vec3d,
    rot: &Mat3<f64>,
    hx: f64,
    hy: f64,
) -> Option<Hit> {
    let n = rot.col(2);
    let denom = n.dot(d);
    if denom == 0.0 {
        return None;
    }
    let t = n.dot(center - o) / denom;
    if !(t > 0.0) {
        return None;
    }
    let rel = o + d.scale(t) - center;
    let lx = rot.col(0).dot(rel) / hx;
    let ly = rot.col(1).dot(rel) / hy;
    if lx * lx + ly * ly > 1.0 {
        return None;
    }
    Some(Hit { t, normal: n })
}

#[inline]
fn intersect_ellipsoid(
    o: Vec3d,
    d: Vec3d,
    center: Vec3d,
    rot: &Mat3<f64>,
    h: [f64; 3],
) -> Option<Hit> {
    let rel = o - center;
    let (c0, c1, c2) = (rot.col(0), rot.col(1), rot.col(2));
    let os = Vec3::new(c0.dot(rel) / h[0], c1.dot(rel) / h[1], c2.dot(rel) / h[2]);
    let ds = Vec3::new(c0.dot(d) / h[0], c1.dot(d) / h[1], c2.dot(d) / h[2]);
    let a = ds.dot(ds);
    let b = os.dot(ds);
    let c = os.dot(os) - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / a;
    let t1 = (-b + sq) / a;
    let t = if t0 > 0.0 {
        t0
    } else if t1 > 0.0 {
        t1
    } else {
        return None;
    };
    let ps = os + ds.scale(t);
    let gl = Vec3::new(ps.x / h[0], ps.y / h[1], ps.z / h[2]);
    let normal = (*rot * gl).normalized();
    Some(Hit { t, normal })
}

/// Head-light Lambertian factor with an ambient floor.
#[inline]
pub fn shade(normal: Vec3d, d: Vec3d) -> f64 {
    let cos = normal.dot(d.normalized()).abs();
    cos.max(AMBIENT_FLOOR)
}

/// Conservative pixel rectangle for a bounding sphere, or the whole image if
/// the sphere reaches behind the image plane.
fn screen_rect(
    cam: &Pose,
    k: &CameraIntrinsics,
    center: Vec3d,
    radius: f64,
) -> (usize, usize, usize, usize) {
    let full = (0, k.width - 1, 0, k.height - 1);
    let c = cam.inverse_transform_point(center);
    // slack covers rounding in the transform
    let r = radius * 1.001 + 1e-6;
    if c.z - r <= 1e-3 {
        return full;
    }
    let lo = |x: f64, f: f64, cc: f64| {
        let num = x - r;
        f * num / if num < 0.0 { c.z - r } else { c.z + r } + cc
    };
    let hi = |x: f64, f: f64, cc: f64| {
        let num = x + r;
        f * num / if num > 0.0 { c.z - r } else { c.z + r } + cc
    };
    let clamp = |a: f64, n: usize| -> Option<usize> {
        if a < 0.0 {
            Some(0)
        } else if a >= n as f64 {
            None
        } else {
            Some(a as usize)
        }
    };
    // pixel u has center u + 0.5; keep one pixel of margin on each side
    let (u0, u1) = (lo(c.x, k.fx, k.cx) - 1.5, hi(c.x, k.fx, k.cx) + 0.5);
    let (v0, v1) = (lo(c.y, k.fy, k.cy) - 1.5, hi(c.y, k.fy, k.cy) + 0.5);
    if u1 < 0.0 || v1 < 0.0 {
        return (1, 0, 1, 0);
    }
    match (clamp(u0, k.width), clamp(v0, k.height)) {
        (Some(a), Some(b)) => (
            a,
            (u1.min((k.width - 1) as f64)) as usize,
            b,
            (v1.min((k.height - 1) as f64)) as usize,
        ),
        _ => (1, 0, 1, 0),
    }
}

fn collect_prims(
    scene: &Scene,
    cam: &Pose,
    k: &CameraIntrinsics,
    occluders_enabled: bool,
) -> Vec<Prim> {
    let mut prims = Vec::with_capacity(1 + scene.occluders.len());
    if let Some(t) = &scene.target {
        prims.push(Prim {
            id: HIT_TARGET,
            kind: Kind::Sphere { radius: t.radius },
            center: t.center,
            rot: Mat3::identity(),
            color: t.color,
            rect: screen_rect(cam, k, t.center, t.radius),
        });
    }
    if occluders_enabled {
        for (i, o) in scene.occluders.iter().enumerate() {
            let h = o.half_extents;
            let kind = match o.shape {
                OccluderShape::Disc => Kind::Disc { hx: h.x, hy: h.y },
                OccluderShape::Ellipsoid => Kind::Ellipsoid { h: h.to_array() },
            };
            prims.push(Prim {
                id: HIT_FIRST_OCCLUDER + i as u8,
                kind,
                center: o.pose.position,
                rot: o.pose.rotation(),
                color: o.color,
                rect: screen_rect(cam, k, o.pose.position, o.bounding_radius()),
            });
        }
    }
    prims
}

/// Ray-casts the scene from `camera`. With `occluders_enabled = false` only
/// the target is drawn.
pub fn render(
    scene: &Scene,
    camera: &Pose,
    k: &CameraIntrinsics,
    occluders_enabled: bool,
) -> Frame {
    let prims = collect_prims(scene, camera, k, occluders_enabled);
    let mut frame = Frame::blank(k.width, k.height, scene.background_color);
    let rot = camera.rotation();
    let o = camera.position;
    for v in 0..k.height {
        for u in 0..k.width {
            let mut best: Option<(Hit, &Prim)> = None;
            let mut d = None;
            for p in &prims {
                let (u0, u1, v0, v1) = p.rect;
                if u < u0 || u > u1 || v < v0 || v > v1 {
                    continue;
                }
                let d = *d.get_or_insert_with(|| rot * Vec3::from_array(k.ray_dir(u, v)));
                let hit = match p.kind {
                    Kind::Sphere { radius } => intersect_sphere(o, d, p.center, radius),
                    Kind::Disc { hx, hy } => intersect_disc(o, d, p.center, &p.rot, hx, hy),
                    Kind::Ellipsoid { h } => intersect_ellipsoid(o, d, p.center, &p.rot, h),
                };
                if let Some(h) = hit {
                    if best.as_ref().map_or(true, |(b, _)| h.t < b.t) {
                        best = Some((h, p));
                    }
                }
            }
            if let (Some((hit, p)), Some(d)) = (best, d) {
                let i = v * k.width + u;
                let f = shade(hit.normal, d);
                for c in 0..3 {
                    frame.rgb[3 * i + c] = (p.color[c] * f) as f32;
                }
                frame.depth[i] = hit.t as f32;
                frame.hit_ids[i] = p.id;
            }
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Quat;
    use crate::sim::oracle::reference_render;
    use crate::sim::scene::{generate_scene, Difficulty, Occluder, Sphere};
    use crate::sim::viewpoints::shell_lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k16() -> CameraIntrinsics {
        CameraIntrinsics::with_hfov(16, 16, 60f64.to_radians())
    }

    #[test]
    fn empty_scene_is_background() {
        let mut s = Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04);
        s.target = None;
        let f = render(&s, &Pose::identity(), &CameraIntrinsics::default(), true);
        assert!(f.depth.iter().all(|d| *d == 0.0));
        assert!(f.hit_ids.iter().all(|h| *h == HIT_BACKGROUND));
        for px in f.rgb.chunks(3) {
            assert_eq!(px, &[0.55f32, 0.7, 0.85]);
        }
    }

    #[test]
    fn sphere_on_axis_front_depth() {
        // Center pixel ray is off-axis by half a pixel; with an even image use
        // a 65x65 frame so one pixel sits exactly on the optical axis.
        let s = Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04);
        let k = CameraIntrinsics::with_hfov(65, 65, 60f64.to_radians());
        let f = render(&s, &Pose::identity(), &k, true);
        let c = 32 * 65 + 32;
        assert_eq!(f.hit_ids[c], HIT_TARGET);
        assert!((f.depth[c] as f64 - 0.36).abs() < 1e-6);
        // head-on normal: full brightness
        assert!((f.rgb[3 * c] as f64 - 0.85).abs() < 1e-6);
    }

    #[test]
    fn depth_consistent_with_hits() {
        let s = generate_scene(11, Difficulty::Hard).unwrap();
        for p in shell_lattice(&s, 10, 1, s.shell) {
            let f = render(&s, &p, &CameraIntrinsics::default(), true);
            for (d, h) in f.depth.iter().zip(&f.hit_ids) {
                assert_eq!(*h != HIT_BACKGROUND, *d > 0.0);
            }
            assert!(f.rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn occluder_free_render_equals_deleted_occluders() {
        let s = generate_scene(5, Difficulty::Medium).unwrap();
        let bare = s.without_occluders();
        for p in shell_lattice(&s, 8, 2, s.shell) {
            let k = CameraIntrinsics::default();
            assert_eq!(render(&s, &p, &k, false), render(&bare, &p, &k, true));
        }
    }

    fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
        let center = Vec3::new(
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(0.35..0.45),
        );
        let mut s = Scene::with_target(center, rng.gen_range(0.02..0.06));
        for _ in 0..rng.gen_range(0..6) {
            let q = Quat::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let shape = if rng.gen_bool(0.5) {
                OccluderShape::Disc
            } else {
                OccluderShape::Ellipsoid
            };
            s.occluders.push(Occluder {
                shape,
                pose: Pose::new(
                    center
                        + Vec3::new(
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.25..0.0),
                            rng.gen_range(-0.1..0.1),
                        ),
                    q,
                ),
                half_extents: Vec3::new(
                    rng.gen_range(0.01..0.08),
                    rng.gen_range(0.01..0.08),
                    rng.gen_range(0.01..0.05),
                ),
                color: [rng.gen(), rng.gen(), rng.gen()],
            });
        }
        s
    }

    #[test]
    fn matches_brute_force_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..50 {
            let s = if i % 2 == 0 {
                random_scene(&mut rng)
            } else {
                generate_scene(i, Difficulty::Medium).unwrap()
            };
            let pose = shell_lattice(&s, 1, rng.gen(), s.shell)[0];
            let k = k16();
            assert_eq!(
                render(&s, &pose, &k, true),
                reference_render(&s, &pose, &k, true),
                "pair {i}"
            );
            assert_eq!(
                render(&s, &pose, &k, false),
                reference_render(&s, &pose, &k, false)
            );
        }
    }

    #[test]
    fn culling_is_conservative_near_camera() {
        // Primitive straddling the image plane must still be drawn.
        let mut s = Scene::with_target(Vec3::new(0.0, 0.0, 0.03), 0.05);
        s.occluders.push(Occluder {
            shape: OccluderShape::Ellipsoid,
            pose: Pose::new(Vec3::new(0.02, 0.0, 0.01), Quat::identity()),
            half_extents: Vec3::new(0.03, 0.03, 0.03),
            color: [0.0, 1.0, 0.0],
        });
        let k = k16();
        assert_eq!(
            render(&s, &Pose::identity(), &k, true),
            reference_render(&s, &Pose::identity(), &k, true)
        );
        let _ = Sphere {
            center: Vec3::zeros(),
            radius: 1.0,
            color: [0.0; 3],
        };
    }
}
