//! Rigid-body camera poses and camera-local motion.
//!
//! Conventions used everywhere in this workspace:
//!
//! - A [`Pose`] stores the world-from-camera transform. The camera looks along
//!   its local `+z`, `+x` points right in the image and `+y` points down.
//! - A [`PoseDelta`] is a motion expressed in the camera's own frame: a
//!   translation plus `(roll, pitch, yaw)` about the local `x`, `y`, `z` axes,
//!   assembled as `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! - Quaternions are `(w, x, y, z)`, unit length, with `w >= 0`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self.scale(T::one() / n)
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Self, s: T) -> Self {
        self + (o - self).scale(s)
    }

    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Scalar> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn rot_x(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self([[o, z, z], [z, c, -s], [z, s, c]])
    }

    pub fn rot_y(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self([[c, z, s], [z, o, z], [-s, z, c]])
    }

    pub fn rot_z(a: T) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self([[c, -s, z], [s, c, z], [z, z, o]])
    }
}

impl<T: Scalar> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut r = [[T::zero(); 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        Self(r)
    }
}

impl<T: Scalar> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Quat<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let a = axis.normalized();
        let (s, c) = (angle * T::lit(0.5)).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s).canonical()
    }

    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn vec(self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit length with the `w >= 0` representative of the double cover.
    pub fn canonical(self) -> Self {
        let n = self.norm();
        let q = Self::new(self.w / n, self.x / n, self.y / n, self.z / n);
        if q.w < T::zero() {
            Self::new(-q.w, -q.x, -q.y, -q.z)
        } else {
            q
        }
    }

    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = self.vec();
        let t = u.cross(v).scale(T::lit(2.0));
        v + t.scale(self.w) + u.cross(t)
    }

    pub fn to_matrix(self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two = T::lit(2.0);
        let o = T::one();
        Mat3([
            [
                o - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                o - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                o - two * (x * x + y * y),
            ],
        ])
    }

    pub fn from_matrix(m: &Mat3<T>) -> Self {
        let m = &m.0;
        let one = T::one();
        let quarter = T::lit(0.25);
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > T::zero() {
            let s = (trace + one).sqrt() * T::lit(2.0);
            Self::new(
                quarter * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
            Self::new(
                (m[2][1] - m[1][2]) / s,
                quarter * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
            Self::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                quarter * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
            Self::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                quarter * s,
            )
        };
        q.canonical()
    }

    /// Geodesic angle between the rotations, in `[0, pi]`.
    pub fn angle_to(self, o: Self) -> T {
        if self == o {
            return T::zero();
        }
        let r = self.conj() * o;
        T::lit(2.0) * r.vec().norm().atan2(r.w.abs())
    }

    /// Chordal distance that ignores the double cover.
    pub fn distance(self, o: Self) -> T {
        let a = Self::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z).norm();
        let b = Self::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z).norm();
        a.min(b)
    }

    /// Shortest-arc spherical interpolation.
    pub fn slerp(self, o: Self, s: T) -> Self {
        let mut d = self.dot(o);
        let mut o = o;
        if d < T::zero() {
            d = -d;
            o = Self::new(-o.w, -o.x, -o.y, -o.z);
        }
        let (ka, kb) = if d > T::lit(1.0 - 1e-12) {
            (T::one() - s, s)
        } else {
            let theta = d.min(T::one()).acos();
            let sin_t = theta.sin();
            (
                ((T::one() - s) * theta).sin() / sin_t,
                (s * theta).sin() / sin_t,
            )
        };
        Self::new(
            ka * self.w + kb * o.w,
            ka * self.x + kb * o.x,
            ka * self.y + kb * o.y,
            ka * self.z + kb * o.z,
        )
        .canonical()
    }
}

impl<T: Scalar> Mul for Quat<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let pi = T::pi();
    let two_pi = pi + pi;
    let mut r = a % two_pi;
    if r > pi {
        r -= two_pi;
    } else if r <= -pi {
        r += two_pi;
    }
    r
}

/// Quaternion for `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn quat_from_euler<T: Scalar>(roll: T, pitch: T, yaw: T) -> Quat<T> {
    let half = T::lit(0.5);
    let (sr, cr) = (roll * half).sin_cos();
    let (sp, cp) = (pitch * half).sin_cos();
    let (sy, cy) = (yaw * half).sin_cos();
    Quat::new(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )
    .canonical()
}

/// Inverse of [`quat_from_euler`]. At `|pitch| = pi/2` roll is pinned to zero.
pub fn euler_from_quat<T: Scalar>(q: Quat<T>) -> [T; 3] {
    let m = q.to_matrix().0;
    let s = -m[2][0];
    let one = T::one();
    let half_pi = T::pi() * T::lit(0.5);
    if s >= one - T::lit(1e-12) || s <= -one + T::lit(1e-12) {
        let pitch = if s > T::zero() { half_pi } else { -half_pi };
        let yaw = (-m[0][1]).atan2(m[1][1]);
        return [T::zero(), pitch, wrap_angle(yaw)];
    }
    let pitch = s.max(-one).min(one).asin();
    let roll = m[2][1].atan2(m[2][2]);
    let yaw = m[1][0].atan2(m[0][0]);
    [wrap_angle(roll), pitch, wrap_angle(yaw)]
}

/// World-from-camera transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub position: Vec3<T>,
    pub orientation: Quat<T>,
}

/// Camera-local 6-DoF motion: translation then `(roll, pitch, yaw)` in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta<T> {
    pub translation: Vec3<T>,
    pub rotation: Vec3<T>,
}

impl<T: Scalar> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> Pose<T> {
    pub fn new(position: Vec3<T>, orientation: Quat<T>) -> Self {
        Self {
            position,
            orientation: orientation.canonical(),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.is_finite()
    }

    pub fn rotation(&self) -> Mat3<T> {
        self.orientation.to_matrix()
    }

    /// World direction of the optical (`+z`) axis.
    pub fn forward(&self) -> Vec3<T> {
        self.orientation
            .rotate(Vec3::new(T::zero(), T::zero(), T::one()))
    }

    /// Camera at `eye` looking at `target`. `up_hint` is the world direction
    /// that should appear as "up" in the image (camera `-y`).
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up_hint: Vec3<T>) -> Self {
        let z = (target - eye).normalized();
        let mut x = z.cross(up_hint);
        if x.norm() < T::lit(1e-9) {
            // Looking straight along the hint; any perpendicular works.
            let alt = if z.x.abs() < T::lit(0.9) {
                Vec3::new(T::one(), T::zero(), T::zero())
            } else {
                Vec3::new(T::zero(), T::one(), T::zero())
            };
            x = z.cross(alt);
        }
        let x = x.normalized();
        let y = z.cross(x);
        Self::new(eye, Quat::from_matrix(&Mat3::from_cols(x, y, z)))
    }

    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.orientation.rotate(p) + self.position
    }

    pub fn inverse_transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.orientation.conj().rotate(p - self.position)
    }

    pub fn to_array(&self) -> [T; 7] {
        let (p, q) = (self.position, self.orientation);
        [p.x, p.y, p.z, q.w, q.x, q.y, q.z]
    }

    pub fn from_array(a: [T; 7]) -> Result<Self> {
        let pose = Self::new(
            Vec3::new(a[0], a[1], a[2]),
            Quat::new(a[3], a[4], a[5], a[6]),
        );
        if !pose.is_finite() || Quat::new(a[3], a[4], a[5], a[6]).norm() == T::zero() {
            return Err(Error::InvalidArgument(
                "pose must be finite with a nonzero quaternion".into(),
            ));
        }
        Ok(pose)
    }

    /// Like [`from_array`](Self::from_array) but keeps the quaternion bits
    /// as given; it must already be unit length within `1e-6`.
    pub fn from_unit_array(a: [T; 7]) -> Result<Self> {
        let q = Quat::new(a[3], a[4], a[5], a[6]);
        let pose = Self {
            position: Vec3::new(a[0], a[1], a[2]),
            orientation: q,
        };
        if !pose.is_finite() || (q.norm() - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::InvalidArgument(
                "pose quaternion must be finite and unit length".into(),
            ));
        }
        Ok(pose)
    }

    /// Seven little-endian `f32` values: `x y z qw qx qy qz`.
    pub fn to_le_bytes(&self) -> [u8; 28] {
        let mut out = [0u8; 28];
        for (chunk, v) in out.chunks_exact_mut(4).zip(self.to_array()) {
            chunk.copy_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out
    }

    /// Reads the [`to_le_bytes`](Self::to_le_bytes) layout and renormalizes the quaternion.
    pub fn from_le_bytes(b: &[u8]) -> Result<Self> {
        let v = read_f32s::<T, 7>(b)?;
        Self::from_array(v)
    }

    /// Nearest pose that survives a float32 save/load cycle unchanged:
    /// `from_le_bytes(p.to_le_bytes()) == p` holds for the returned pose.
    pub fn quantize_f32(&self) -> Self {
        let mut p = *self;
        for _ in 0..8 {
            let bytes = p.to_le_bytes();
            let q = Self::from_le_bytes(&bytes).expect("finite pose");
            if q.to_le_bytes() == bytes {
                return q;
            }
            p = q;
        }
        p
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        let q = self.orientation;
        Pose {
            position: self.position.cast(),
            orientation: Quat::new(
                U::lit(q.w.to_f64_lossy()),
                U::lit(q.x.to_f64_lossy()),
                U::lit(q.y.to_f64_lossy()),
                U::lit(q.z.to_f64_lossy()),
            ),
        }
    }
}

impl<T: Scalar> PoseDelta<T> {
    pub fn new(translation: Vec3<T>, rotation: Vec3<T>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn zero() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: Vec3::zeros(),
        }
    }

    pub fn from_array(a: [T; 6]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5]))
    }

    pub fn to_array(&self) -> [T; 6] {
        let (t, r) = (self.translation, self.rotation);
        [t.x, t.y, t.z, r.x, r.y, r.z]
    }

    pub fn is_finite(&self) -> bool {
        self.translation.is_finite() && self.rotation.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|v| *v == T::zero())
    }

    pub fn rotation_quat(&self) -> Quat<T> {
        quat_from_euler(self.rotation.x, self.rotation.y, self.rotation.z)
    }

    /// Geodesic angle of the rotational part.
    pub fn rotation_angle(&self) -> T {
        Quat::identity().angle_to(self.rotation_quat())
    }

    /// Six little-endian `f32` values: `tx ty tz roll pitch yaw`.
    pub fn to_le_bytes(&self) -> [u8; 24] {
        let mut out = [0u8; 24];
        for (chunk, v) in out.chunks_exact_mut(4).zip(self.to_array()) {
            chunk.copy_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(b: &[u8]) -> Result<Self> {
        let d = Self::from_array(read_f32s::<T, 6>(b)?);
        if !d.is_finite() {
            return Err(Error::InvalidArgument("non-finite pose delta bytes".into()));
        }
        Ok(d)
    }

    pub fn cast<U: Scalar>(&self) -> PoseDelta<U> {
        PoseDelta::new(self.translation.cast(), self.rotation.cast())
    }
}

fn read_f32s<T: Scalar, const N: usize>(b: &[u8]) -> Result<[T; N]> {
    if b.len() != 4 * N {
        return Err(Error::InvalidArgument(format!(
            "expected {} bytes, got {}",
            4 * N,
            b.len()
        )));
    }
    let mut out = [T::zero(); N];
    for (o, c) in out.iter_mut().zip(b.chunks_exact(4)) {
        *o = T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    }
    Ok(out)
}

/// Applies a camera-local motion to a world pose.
pub fn compose<T: Scalar>(p: &Pose<T>, d: &PoseDelta<T>) -> Result<Pose<T>> {
    if !p.is_finite() || !d.is_finite() {
        return Err(Error::InvalidArgument(
            "compose: non-finite pose or delta".into(),
        ));
    }
    let position = p.position + p.orientation.rotate(d.translation);
    let orientation = (p.orientation * d.rotation_quat()).canonical();
    Ok(Pose {
        position,
        orientation,
    })
}

/// The camera-local delta that takes `prev` to `curr`.
pub fn delta_between<T: Scalar>(prev: &Pose<T>, curr: &Pose<T>) -> Result<PoseDelta<T>> {
    if !prev.is_finite() || !curr.is_finite() {
        return Err(Error::InvalidArgument(
            "delta_between: non-finite pose".into(),
        ));
    }
    if prev == curr {
        return Ok(PoseDelta::zero());
    }
    let inv = prev.orientation.conj();
    let translation = inv.rotate(curr.position - prev.position);
    let rel = (inv * curr.orientation).canonical();
    let [roll, pitch, yaw] = euler_from_quat(rel);
    Ok(PoseDelta::new(translation, Vec3::new(roll, pitch, yaw)))
}

/// Linear position, shortest-arc slerp orientation.
pub fn interpolate<T: Scalar>(p0: &Pose<T>, p1: &Pose<T>, s: T) -> Result<Pose<T>> {
    if !(s >= T::zero() && s <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "interpolate: s = {s} outside [0, 1]"
        )));
    }
    if s == T::zero() {
        return Ok(*p0);
    }
    if s == T::one() {
        return Ok(*p1);
    }
    Ok(Pose {
        position: p0.position.lerp(p1.position, s),
        orientation: p0.orientation.slerp(p1.orientation, s),
    })
}

/// `|dp| + w_rot * angle`.
pub fn pose_distance<T: Scalar>(p0: &Pose<T>, p1: &Pose<T>, w_rot: T) -> T {
    (p1.position - p0.position).norm() + w_rot * p0.orientation.angle_to(p1.orientation)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    poses: Vec<Pose<T>>,
    timestamps: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(poses: Vec<Pose<T>>, timestamps: Vec<T>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidArgument(
                "trajectory needs at least one pose".into(),
            ));
        }
        if poses.len() != timestamps.len() {
            return Err(Error::InvalidArgument(
                "trajectory pose/timestamp length mismatch".into(),
            ));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "trajectory timestamps must strictly increase".into(),
            ));
        }
        Ok(Self { poses, timestamps })
    }

    /// Poses stamped `0, 1, 2, ...` (one unit per step).
    pub fn from_steps(poses: Vec<Pose<T>>) -> Result<Self> {
        let ts = (0..poses.len()).map(|i| T::lit(i as f64)).collect();
        Self::new(poses, ts)
    }

    pub fn poses(&self) -> &[Pose<T>] {
        &self.poses
    }

    pub fn timestamps(&self) -> &[T] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn first(&self) -> &Pose<T> {
        &self.poses[0]
    }

    pub fn last(&self) -> &Pose<T> {
        &self.poses[self.poses.len() - 1]
    }

    /// Deltas between consecutive poses.
    pub fn deltas(&self) -> Result<Vec<PoseDelta<T>>> {
        self.poses
            .windows(2)
            .map(|w| delta_between(&w[0], &w[1]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    type P = Pose<f64>;

    fn pose_close(a: &P, b: &P, tol: f64) -> bool {
        (a.position - b.position).norm() <= tol && a.orientation.distance(b.orientation) <= tol
    }

    fn arb_quat() -> impl Strategy<Value = Quat<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| {
                w * w + x * x + y * y + z * z > 1e-3
            })
            .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).canonical())
    }

    fn arb_pose() -> impl Strategy<Value = P> {
        ((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), arb_quat())
            .prop_map(|((x, y, z), q)| Pose::new(Vec3::new(x, y, z), q))
    }

    #[test]
    fn compose_identity_and_aligned_frames() {
        let p = Pose::new(Vec3::new(0.1, -0.2, 0.3), quat_from_euler(0.3, -0.2, 1.1));
        assert_eq!(compose(&p, &PoseDelta::zero()).unwrap(), p);

        let d = PoseDelta::new(Vec3::new(0.0, 0.0, 0.1), Vec3::zeros());
        let q = compose(&P::identity(), &d).unwrap();
        assert_abs_diff_eq!(q.position.z, 0.1, epsilon = 1e-15);
        assert_eq!(q.orientation, Quat::identity());
    }

    #[test]
    fn compose_matches_matrix_arithmetic() {
        // 90 degrees about the camera y axis, worked out with plain matrices.
        let r = Mat3::<f64>::rot_y(FRAC_PI_2);
        let p = Pose::new(Vec3::new(0.5, 0.0, 0.2), Quat::from_matrix(&r));
        let d = PoseDelta::new(Vec3::new(0.0, 0.0, 0.1), Vec3::zeros());
        let expected = Vec3::new(0.5, 0.0, 0.2) + r * Vec3::new(0.0, 0.0, 0.1);
        let got = compose(&p, &d).unwrap();
        assert_abs_diff_eq!(got.position.x, expected.x, epsilon = 1e-12);
        assert_abs_diff_eq!(got.position.y, expected.y, epsilon = 1e-12);
        assert_abs_diff_eq!(got.position.z, expected.z, epsilon = 1e-12);
        assert_abs_diff_eq!(got.position.x, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn euler_matrix_order_is_z_y_x() {
        let (r, p, y) = (0.3, -0.4, 1.2);
        let m = Mat3::rot_z(y) * Mat3::rot_y(p) * Mat3::rot_x(r);
        let q = quat_from_euler(r, p, y);
        let qm = q.to_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(qm.0[i][j], m.0[i][j], epsilon = 1e-12);
            }
        }
        let e = euler_from_quat(q);
        assert_abs_diff_eq!(e[0], r, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], p, epsilon = 1e-12);
        assert_abs_diff_eq!(e[2], y, epsilon = 1e-12);
    }

    #[test]
    fn compose_rejects_non_finite() {
        let d = PoseDelta::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::zeros());
        assert!(matches!(
            compose(&P::identity(), &d),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn delta_between_basics() {
        let p = Pose::new(Vec3::new(0.1, 0.2, 0.3), quat_from_euler(0.2, 0.5, -1.0));
        assert!(delta_between(&p, &p)
            .unwrap()
            .to_array()
            .iter()
            .all(|v: &f64| v.abs() < 1e-15));

        let ahead = Pose::new(p.position + p.forward().scale(0.05), p.orientation);
        let d = delta_between(&p, &ahead).unwrap();
        assert_abs_diff_eq!(d.translation.z, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(d.translation.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.rotation.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gimbal_lock_pins_roll() {
        for pitch in [FRAC_PI_2, -FRAC_PI_2] {
            let d = PoseDelta::new(Vec3::zeros(), Vec3::new(0.4, pitch, -0.7));
            let p = P::identity();
            let q = compose(&p, &d).unwrap();
            let back = delta_between(&p, &q).unwrap();
            assert_eq!(back.rotation.x, 0.0);
            assert_abs_diff_eq!(back.rotation.y, pitch, epsilon = 1e-6);
            assert!(pose_close(&compose(&p, &back).unwrap(), &q, 1e-9));
        }
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let p0 = P::identity();
        let p1 = Pose::new(
            Vec3::new(1.0, 0.0, 0.0),
            quat_from_euler(0.0, 0.0, FRAC_PI_2),
        );
        assert_eq!(interpolate(&p0, &p1, 0.0).unwrap(), p0);
        assert_eq!(interpolate(&p0, &p1, 1.0).unwrap(), p1);
        let mid = interpolate(&p0, &p1, 0.5).unwrap();
        let e = euler_from_quat(mid.orientation);
        assert_abs_diff_eq!(e[2], FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(mid.position.x, 0.5, epsilon = 1e-15);
        assert!(interpolate(&p0, &p1, 1.5).is_err());
        assert!(interpolate(&p0, &p1, -0.1).is_err());
    }

    #[test]
    fn pose_distance_examples() {
        let p = Pose::new(Vec3::new(0.1, 0.2, 0.3), quat_from_euler(0.1, 0.2, 0.3));
        assert_eq!(pose_distance(&p, &p, 3.0), 0.0);
        let t = Pose::new(p.position + Vec3::new(0.0, 0.2, 0.0), p.orientation);
        assert_abs_diff_eq!(pose_distance(&p, &t, 1.0), 0.2, epsilon = 1e-12);
        let r = Pose::new(Vec3::zeros(), quat_from_euler(FRAC_PI_2, 0.0, 0.0));
        assert_abs_diff_eq!(
            pose_distance(&P::identity(), &r, 0.5),
            0.5 * FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(0.5 * FRAC_PI_2, 0.7854, epsilon = 1e-4);
    }

    #[test]
    fn wrap_angle_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vec3::new(0.0, -0.4, 0.5);
        let target = Vec3::new(0.05, 0.0, 0.3);
        let p = Pose::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0));
        let f = p.forward();
        let want = (target - eye).normalized();
        assert_abs_diff_eq!((f - want).norm(), 0.0, epsilon = 1e-12);
        // image "up" (-y) has positive world z component
        let up = p.orientation.rotate(Vec3::new(0.0, -1.0, 0.0));
        assert!(up.z > 0.0);
    }

    #[test]
    fn byte_layouts() {
        let p = Pose::new(Vec3::new(0.5, -0.25, 1.0), Quat::identity());
        let b = p.to_le_bytes();
        assert_eq!(&b[0..4], &0.5f32.to_le_bytes());
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(Pose::<f64>::from_le_bytes(&b).unwrap(), p);
        let d = PoseDelta::from_array([0.01, 0.0, 0.0, 0.0, 0.0, -0.5]);
        let db = d.to_le_bytes();
        assert_eq!(&db[20..24], &(-0.5f32).to_le_bytes());
        assert!(PoseDelta::<f64>::from_le_bytes(&db[..20]).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let p = P::identity();
        assert!(Trajectory::<f64>::new(vec![], vec![]).is_err());
        assert!(Trajectory::new(vec![p, p], vec![0.0, 0.0]).is_err());
        assert!(Trajectory::new(vec![p, p], vec![0.0, 0.1]).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip_compose_delta(a in arb_pose(), b in arb_pose()) {
            let d = delta_between(&a, &b).unwrap();
            prop_assert!(d.rotation.to_array().iter().all(|v| *v > -PI && *v <= PI));
            let back = compose(&a, &d).unwrap();
            prop_assert!(pose_close(&back, &b, 1e-7));
        }

        #[test]
        fn delta_of_compose_is_identity(
            p in arb_pose(),
            t in (-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64),
            r in (-3.1..3.1f64, -1.5698..1.5698f64, -3.1..3.1f64),
        ) {
            let d = PoseDelta::new(Vec3::new(t.0, t.1, t.2), Vec3::new(r.0, r.1, r.2));
            let back = delta_between(&p, &compose(&p, &d).unwrap()).unwrap();
            for (x, y) in back.to_array().iter().zip(d.to_array()) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }

        #[test]
        fn chained_deltas_collapse(p in arb_pose(),
            a in prop::array::uniform6(-0.5..0.5f64), b in prop::array::uniform6(-0.5..0.5f64)) {
            let p2 = compose(&compose(&p, &PoseDelta::from_array(a)).unwrap(), &PoseDelta::from_array(b)).unwrap();
            let single = delta_between(&p, &p2).unwrap();
            prop_assert!(pose_close(&compose(&p, &single).unwrap(), &p2, 1e-7));
        }

        #[test]
        fn slerp_midpoint_equidistant(a in arb_pose(), b in arb_pose()) {
            prop_assume!(a.orientation.angle_to(b.orientation) < PI - 1e-3);
            let m = interpolate(&a, &b, 0.5).unwrap();
            let d0 = m.orientation.angle_to(a.orientation);
            let d1 = m.orientation.angle_to(b.orientation);
            prop_assert!((d0 - d1).abs() < 1e-7);
        }

        #[test]
        fn interpolate_rotation_invariant(a in arb_pose(), b in arb_pose(), g in arb_quat(), s in 0.0..1.0f64) {
            prop_assume!(a.orientation.angle_to(b.orientation) < PI - 1e-3);
            let rot = |p: &P| Pose::new(g.rotate(p.position), g * p.orientation);
            let lhs = rot(&interpolate(&a, &b, s).unwrap());
            let rhs = interpolate(&rot(&a), &rot(&b), s).unwrap();
            prop_assert!(pose_close(&lhs, &rhs, 1e-7));
        }

        #[test]
        fn pose_distance_symmetric(a in arb_pose(), b in arb_pose(), w in 0.0..2.0f64) {
            prop_assert!((pose_distance(&a, &b, w) - pose_distance(&b, &a, w)).abs() < 1e-12);
        }
    }
}
