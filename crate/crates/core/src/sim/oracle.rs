//! Brute-force reference renderer used as a test oracle.
//!
//! Every pixel recomputes its ray and tests every primitive with a scalar
//! quadratic solve; no culling, no precomputed per-primitive data. The float
//! expressions follow the same evaluation order as the production renderer so
//! the two agree bit for bit.

use crate::sim::camera::CameraIntrinsics;
use crate::sim::render::{Frame, AMBIENT_FLOOR, HIT_BACKGROUND, HIT_FIRST_OCCLUDER, HIT_TARGET};
use crate::sim::scene::{OccluderShape, Scene};
use crate::Pose;

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn axpy(o: [f64; 3], d: [f64; 3], t: f64) -> [f64; 3] {
    [o[0] + d[0] * t, o[1] + d[1] * t, o[2] + d[2] * t]
}

fn col(m: &[[f64; 3]; 3], j: usize) -> [f64; 3] {
    [m[0][j], m[1][j], m[2][j]]
}

/// Smallest positive root of `a t^2 + 2 b t + c = 0`.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let near = (-b - sq) / a;
    let far = (-b + sq) / a;
    if near > 0.0 {
        Some(near)
    } else if far > 0.0 {
        Some(far)
    } else {
        None
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        let s = 1.0 / n;
        [v[0] * s, v[1] * s, v[2] * s]
    } else {
        v
    }
}

pub fn reference_render(
    scene: &Scene,
    camera: &Pose,
    k: &CameraIntrinsics,
    occluders_enabled: bool,
) -> Frame {
    let n = k.width * k.height;
    let mut rgb = vec![0f32; n * 3];
    let mut depth = vec![0f32; n];
    let mut hit_ids = vec![HIT_BACKGROUND; n];
    for v in 0..k.height {
        for u in 0..k.width {
            let r = camera.orientation.to_matrix().0;
            let dc = [
                (u as f64 + 0.5 - k.cx) / k.fx,
                (v as f64 + 0.5 - k.cy) / k.fy,
                1.0,
            ];
            let d = [dot(r[0], dc), dot(r[1], dc), dot(r[2], dc)];
            let o = camera.position.to_array();

            // (t, normal, id, color)
            let mut best: Option<(f64, [f64; 3], u8, [f64; 3])> = None;
            let mut consider = |t: f64, normal: [f64; 3], id: u8, color: [f64; 3]| {
                if best.map_or(true, |b| t < b.0) {
                    best = Some((t, normal, id, color));
                }
            };

            if let Some(tg) = &scene.target {
                let c = tg.center.to_array();
                let oc = sub(o, c);
                if let Some(t) = smallest_positive_root(
                    dot(d, d),
                    dot(oc, d),
                    dot(oc, oc) - tg.radius * tg.radius,
                ) {
                    let p = axpy(o, d, t);
                    let s = 1.0 / tg.radius;
                    let rel = sub(p, c);
                    consider(
                        t,
                        [rel[0] * s, rel[1] * s, rel[2] * s],
                        HIT_TARGET,
                        tg.color,
                    );
                }
            }
            if occluders_enabled {
                for (i, occ) in scene.occluders.iter().enumerate() {
                    let id = HIT_FIRST_OCCLUDER + i as u8;
                    let m = occ.pose.orientation.to_matrix().0;
                    let c = occ.pose.position.to_array();
                    let h = occ.half_extents.to_array();
                    match occ.shape {
                        OccluderShape::Disc => {
                            let nrm = col(&m, 2);
                            let denom = dot(nrm, d);
                            if denom == 0.0 {
                                continue;
                            }
                            let t = dot(nrm, sub(c, o)) / denom;
                            if !(t > 0.0) {
                                continue;
                            }
                            let rel = sub(axpy(o, d, t), c);
                            let x = dot(col(&m, 0), rel) / h[0];
                            let y = dot(col(&m, 1), rel) / h[1];
                            if x * x + y * y <= 1.0 {
                                consider(t, nrm, id, occ.color);
                            }
                        }
                        OccluderShape::Ellipsoid => {
                            let rel = sub(o, c);
                            let os = [
                                dot(col(&m, 0), rel) / h[0],
                                dot(col(&m, 1), rel) / h[1],
                                dot(col(&m, 2), rel) / h[2],
                            ];
                            let ds = [
                                dot(col(&m, 0), d) / h[0],
                                dot(col(&m, 1), d) / h[1],
                                dot(col(&m, 2), d) / h[2],
                            ];
                            if let Some(t) =
                                smallest_positive_root(dot(ds, ds), dot(os, ds), dot(os, os) - 1.0)
                            {
                                let ps = axpy(os, ds, t);
                                let g = [ps[0] / h[0], ps[1] / h[1], ps[2] / h[2]];
                                let wn = normalize([dot(m[0], g), dot(m[1], g), dot(m[2], g)]);
                                consider(t, wn, id, occ.color);
                            }
                        }
                    }
                }
            }

            let i = v * k.width + u;
            match best {
                Some((t, nrm, id, color)) => {
                    let f = dot(nrm, normalize(d)).abs().max(AMBIENT_FLOOR);
                    for ch in 0..3 {
                        rgb[3 * i + ch] = (color[ch] * f) as f32;
                    }
                    depth[i] = t as f32;
                    hit_ids[i] = id;
                }
                None => {
                    for ch in 0..3 {
                        rgb[3 * i + ch] = scene.background_color[ch] as f32;
                    }
                }
            }
        }
    }
    Frame {
        width: k.width,
        height: k.height,
        rgb,
        depth,
        hit_ids,
    }
}
