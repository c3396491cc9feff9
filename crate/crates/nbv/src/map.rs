//! Flat occupancy grid over the workspace with an exact ray walker.

use std::collections::HashSet;

use viewplan_core::se3::Vec3;
use viewplan_core::sim::{Aabb, CameraIntrinsics};
use viewplan_core::{Pose, Vec3d};

use crate::{NbvError, Result};

pub const GRID: usize = 32;
/// ROI radius as a multiple of the target radius.
pub const ROI_SCALE: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum VoxelState {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

/// One voxel crossed by a ray; `t_exit` is where the ray leaves the voxel
/// (not clipped to the ray's end).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub index: usize,
    pub t_enter: f64,
    pub t_exit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelMap {
    bounds: Aabb,
    n: usize,
    size: [f64; 3],
    states: Vec<VoxelState>,
    roi: Vec<bool>,
    roi_len: usize,
    roi_center: Vec3d,
}

/// Entry and exit parameters of `o + t d` through a box, `None` if missed.
pub fn slab(min: [f64; 3], max: [f64; 3], o: [f64; 3], d: [f64; 3]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
        } else {
            let (ta, tb) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

impl VoxelMap {
    /// All voxels unknown; the ROI is every voxel whose center lies within
    /// `ROI_SCALE * target_radius` of `target_center`.
    pub fn new(bounds: Aabb, target_center: Vec3d, target_radius: f64) -> Result<Self> {
        Self::with_resolution(bounds, GRID, target_center, target_radius)
    }

    pub fn with_resolution(
        bounds: Aabb,
        n: usize,
        target_center: Vec3d,
        target_radius: f64,
    ) -> Result<Self> {
        if n == 0 || (0..3).any(|a| !(bounds.max[a] > bounds.min[a])) {
            return Err(NbvError::InvalidArgument(format!(
                "degenerate grid: {n} cells over {bounds:?}"
            )));
        }
        if !(target_radius > 0.0) || !target_center.is_finite() {
            return Err(NbvError::InvalidArgument(
                "ROI needs a finite center and positive radius".into(),
            ));
        }
        let size = std::array::from_fn(|a| (bounds.max[a] - bounds.min[a]) / n as f64);
        let mut map = Self {
            bounds,
            n,
            size,
            states: vec![VoxelState::Unknown; n * n * n],
            roi: vec![false; n * n * n],
            roi_len: 0,
            roi_center: target_center,
        };
        let r = ROI_SCALE * target_radius;
        for i in 0..map.states.len() {
            if (map.voxel_center(i) - target_center).norm() <= r {
                map.roi[i] = true;
                map.roi_len += 1;
            }
        }
        if map.roi_len == 0 {
            return Err(NbvError::InvalidArgument(
                "ROI contains no voxel centers".into(),
            ));
        }
        Ok(map)
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn roi_center(&self) -> Vec3d {
        self.roi_center
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> VoxelState {
        self.states[i]
    }

    pub fn in_roi(&self, i: usize) -> bool {
        self.roi[i]
    }

    pub fn roi_indices(&self) -> Vec<usize> {
        (0..self.roi.len()).filter(|i| self.roi[*i]).collect()
    }

    pub fn count(&self, s: VoxelState) -> usize {
        self.states.iter().filter(|v| **v == s).count()
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.n + ijk[1]) * self.n + ijk[2]
    }

    pub fn ijk(&self, i: usize) -> [usize; 3] {
        [i / (self.n * self.n), (i / self.n) % self.n, i % self.n]
    }

    pub fn voxel_box(&self, i: usize) -> ([f64; 3], [f64; 3]) {
        let c = self.ijk(i);
        let lo = std::array::from_fn(|a| self.bounds.min[a] + c[a] as f64 * self.size[a]);
        let hi = std::array::from_fn(|a| self.bounds.min[a] + (c[a] + 1) as f64 * self.size[a]);
        (lo, hi)
    }

    pub fn voxel_center(&self, i: usize) -> Vec3d {
        let (lo, hi) = self.voxel_box(i);
        Vec3::from_array(std::array::from_fn(|a| 0.5 * (lo[a] + hi[a])))
    }

    /// Voxel containing `p` (cells are half-open, the upper faces of the grid
    /// belong to the last cell).
    pub fn locate(&self, p: Vec3d) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        let p = p.to_array();
        let c = std::array::from_fn(|a| {
            (((p[a] - self.bounds.min[a]) / self.size[a]).floor() as usize).min(self.n - 1)
        });
        Some(self.index(c))
    }

    /// Walks the voxels pierced by `o + t d`, `t` in `[0, t_end]`, in order.
    /// The walk stops early when `visit` returns `false`.
    pub fn traverse(
        &self,
        o: Vec3d,
        d: Vec3d,
        t_end: f64,
        mut visit: impl FnMut(Crossing) -> bool,
    ) {
        let (o, d) = (o.to_array(), d.to_array());
        let Some((t0, t1)) = slab(self.bounds.min, self.bounds.max, o, d) else {
            return;
        };
        let t_start = t0.max(0.0);
        let t_stop = t1.min(t_end);
        if t_start > t_stop {
            return;
        }
        let n = self.n as i64;
        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_next = [f64::INFINITY; 3];
        let face =
            |a: usize, c: i64, up: bool| self.bounds.min[a] + (c + up as i64) as f64 * self.size[a];
        for a in 0..3 {
            let p = o[a] + t_start * d[a];
            let mut c = ((p - self.bounds.min[a]) / self.size[a]).floor() as i64;
            // The entry point sits on a face; pick the cell the ray moves into.
            if d[a] < 0.0 && self.bounds.min[a] + c as f64 * self.size[a] == p {
                c -= 1;
            }
            cell[a] = c.clamp(0, n - 1);
            if d[a] != 0.0 {
                step[a] = if d[a] > 0.0 { 1 } else { -1 };
                t_next[a] = (face(a, cell[a], d[a] > 0.0) - o[a]) / d[a];
            }
        }
        let mut t_enter = t_start;
        loop {
            let a = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            let t_exit = t_next[a];
            let index = self.index(cell.map(|c| c as usize));
            if !visit(Crossing {
                index,
                t_enter,
                t_exit,
            }) || t_exit >= t_stop
            {
                return;
            }
            cell[a] += step[a];
            if cell[a] < 0 || cell[a] >= n {
                return;
            }
            t_enter = t_exit;
            t_next[a] = (face(a, cell[a], step[a] > 0) - o[a]) / d[a];
        }
    }

    pub(crate) fn mark(&mut self, i: usize, s: VoxelState) {
        if s > self.states[i] {
            self.states[i] = s;
        }
    }

    /// Fuses one depth image (distances along the optical axis, `0` = no hit).
    pub fn integrate_depth(
        &mut self,
        camera: &Pose,
        depth: &[f32],
        k: &CameraIntrinsics,
    ) -> Result<()> {
        if depth.len() != k.pixels() {
            return Err(NbvError::InvalidArgument(format!(
                "{} depth values for a {}x{} camera",
                depth.len(),
                k.width,
                k.height
            )));
        }
        let r = camera.rotation();
        for v in 0..k.height {
            for u in 0..k.width {
                let d = r * Vec3::from_array(k.ray_dir(u, v));
                let z = depth[v * k.width + u] as f64;
                let mut hits = Vec::new();
                if z > 0.0 {
                    self.traverse(camera.position, d, z, |c| {
                        hits.push((c.index, c.t_exit >= z));
                        true
                    });
                    let hit_inside = self.bounds.contains(camera.position + d.scale(z));
                    for (i, last) in hits {
                        self.mark(
                            i,
                            if last && hit_inside {
                                VoxelState::Occupied
                            } else {
                                VoxelState::Free
                            },
                        );
                    }
                } else {
                    self.traverse(camera.position, d, f64::INFINITY, |c| {
                        hits.push((c.index, false));
                        true
                    });
                    for (i, _) in hits {
                        self.mark(i, VoxelState::Free);
                    }
                }
            }
        }
        Ok(())
    }

    /// Distinct unknown ROI voxels reachable along each pixel ray before the
    /// first occupied voxel, judged from the map alone.
    pub fn score_candidate(&self, pose: &Pose, k: &CameraIntrinsics) -> usize {
        let r = pose.rotation();
        let mut seen = HashSet::new();
        for v in 0..k.height {
            for u in 0..k.width {
                let d = r * Vec3::from_array(k.ray_dir(u, v));
                self.traverse(pose.position, d, f64::INFINITY, |c| {
                    match self.states[c.index] {
                        VoxelState::Occupied => false,
                        VoxelState::Unknown if self.roi[c.index] => {
                            seen.insert(c.index);
                            true
                        }
                        _ => true,
                    }
                });
            }
        }
        seen.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use viewplan_core::sim::viewpoints::WORLD_UP;
    use viewplan_core::sim::{render, Scene};

    fn scene() -> Scene {
        Scene::with_target(Vec3::new(0.0, 0.0, 0.4), 0.04)
    }

    fn map(s: &Scene) -> VoxelMap {
        VoxelMap::new(s.workspace_bounds, s.target_center(), s.target_radius()).unwrap()
    }

    /// Every voxel whose box the segment crosses with positive length, sorted by entry.
    fn brute_walk(m: &VoxelMap, o: Vec3d, d: Vec3d, t_end: f64) -> Vec<usize> {
        let mut out: Vec<(f64, usize)> = (0..m.len())
            .filter_map(|i| {
                let (lo, hi) = m.voxel_box(i);
                let (a, b) = slab(lo, hi, o.to_array(), d.to_array())?;
                let (a, b) = (a.max(0.0), b.min(t_end));
                (b - a > 1e-9).then_some((a, i))
            })
            .collect();
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        out.into_iter().map(|(_, i)| i).collect()
    }

    #[test]
    fn walker_matches_brute_force() {
        let s = scene();
        let m = VoxelMap::with_resolution(s.workspace_bounds, 8, s.target_center(), 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let o = Vec3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..0.8),
                rng.gen_range(-0.8..1.6),
            );
            let d = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let t_end = if rng.gen_bool(0.5) {
                f64::INFINITY
            } else {
                rng.gen_range(0.1..2.0)
            };
            let mut walked = Vec::new();
            m.traverse(o, d, t_end, |c| {
                if c.t_exit.min(t_end) - c.t_enter > 1e-9 {
                    walked.push(c.index);
                }
                true
            });
            assert_eq!(walked, brute_walk(&m, o, d, t_end));
        }
    }

    #[test]
    fn empty_depth_frees_only() {
        let s = scene();
        let mut m = map(&s);
        let k = CameraIntrinsics::with_hfov(16, 16, 1.0);
        let cam = Pose::look_at(Vec3::new(0.0, -0.5, 0.4), s.target_center(), WORLD_UP);
        m.integrate_depth(&cam, &vec![0.0; 256], &k).unwrap();
        assert_eq!(m.count(VoxelState::Occupied), 0);
        assert!(m.count(VoxelState::Free) > 0);
        assert!(m.integrate_depth(&cam, &[0.0; 3], &k).is_err());
    }

    #[test]
    fn front_surface_voxel_is_occupied() {
        let s = Scene::with_target(Vec3::new(0.013, 0.0, 0.412), 0.04);
        let mut m = map(&s);
        // Odd width: the central pixel ray is the optical axis.
        let k = CameraIntrinsics::with_hfov(15, 15, 1.0);
        let cam = Pose::look_at(Vec3::new(0.013, -0.5, 0.412), s.target_center(), WORLD_UP);
        let f = render(&s, &cam, &k, true);
        m.integrate_depth(&cam, &f.depth, &k).unwrap();
        // Front point (0.013, -0.04, 0.412); cells are 0.05 x 0.0375 x 0.05 from (-0.8, -0.8, -0.4).
        let ijk = [
            (0.813f64 / 0.05) as usize,
            (0.76f64 / 0.0375) as usize,
            (0.812f64 / 0.05) as usize,
        ];
        assert_eq!(ijk, [16, 20, 16]);
        assert_eq!(m.state(m.index(ijk)), VoxelState::Occupied);
        assert_eq!(m.state(m.index([16, 19, 16])), VoxelState::Free);
        assert_eq!(m.state(m.index([16, 22, 16])), VoxelState::Unknown);

        let before = m.clone();
        m.integrate_depth(&cam, &f.depth, &k).unwrap();
        assert_eq!(m, before);
    }

    /// Unknown ROI voxels a ray can reach, found per pixel by testing every voxel.
    fn brute_utility(m: &VoxelMap, pose: &Pose, k: &CameraIntrinsics) -> usize {
        let r = pose.rotation();
        let mut seen = HashSet::new();
        for v in 0..k.height {
            for u in 0..k.width {
                let d = r * Vec3::from_array(k.ray_dir(u, v));
                let blocked = (0..m.len())
                    .filter(|i| m.state(*i) == VoxelState::Occupied)
                    .filter_map(|i| {
                        let (lo, hi) = m.voxel_box(i);
                        slab(lo, hi, pose.position.to_array(), d.to_array())
                            .filter(|(a, b)| *b > a.max(0.0))
                    })
                    .map(|(a, _)| a.max(0.0))
                    .fold(f64::INFINITY, f64::min);
                for i in m.roi_indices() {
                    if m.state(i) != VoxelState::Unknown {
                        continue;
                    }
                    let (lo, hi) = m.voxel_box(i);
                    if let Some((a, b)) = slab(lo, hi, pose.position.to_array(), d.to_array()) {
                        if b > a.max(0.0) && a.max(0.0) < blocked {
                            seen.insert(i);
                        }
                    }
                }
            }
        }
        seen.len()
    }

    #[test]
    fn utility_matches_brute_force_and_decays() {
        let s = scene();
        let mut m = map(&s);
        let k = CameraIntrinsics::with_hfov(16, 16, 1.0);
        let cam = Pose::look_at(Vec3::new(0.0, -0.5, 0.4), s.target_center(), WORLD_UP);
        let fresh = m.score_candidate(&cam, &k);
        assert!(fresh > 0);
        assert_eq!(fresh, brute_utility(&m, &cam, &k));

        let side = Pose::look_at(Vec3::new(0.45, -0.2, 0.5), s.target_center(), WORLD_UP);
        let mut last = [fresh, m.score_candidate(&side, &k)];
        for pose in [cam, side, cam] {
            let f = render(&s, &pose, &k, true);
            m.integrate_depth(&pose, &f.depth, &k).unwrap();
            let now = [m.score_candidate(&cam, &k), m.score_candidate(&side, &k)];
            assert!(now[0] <= last[0] && now[1] <= last[1]);
            assert_eq!(now[1], brute_utility(&m, &side, &k));
            last = now;
        }
    }

    #[test]
    fn known_map_scores_zero() {
        let s = scene();
        let mut m = map(&s);
        for i in 0..m.len() {
            m.mark(i, VoxelState::Free);
        }
        let k = CameraIntrinsics::with_hfov(16, 16, 1.0);
        let cam = Pose::look_at(Vec3::new(0.0, -0.5, 0.4), s.target_center(), WORLD_UP);
        assert_eq!(m.score_candidate(&cam, &k), 0);
        m.mark(0, VoxelState::Unknown);
        assert_eq!(m.state(0), VoxelState::Free);
    }
}
