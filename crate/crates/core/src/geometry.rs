//! Rotation and pose algebra, plus the per-view action-space transforms.
//!
//! Rotations are stored as 3x3 matrices. The axis-angle form only appears at
//! the network boundary, where per-step deltas are far from angle π.
//!
//! Every transform here rotates the free vectors of an action (translation
//! delta and rotation delta) and leaves the gripper scalar untouched.

use std::fmt;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Elementwise tolerance used to validate rotation matrices.
pub fn rotation_tolerance<T: Real>() -> T {
    if T::epsilon() < T::lit(1e-10) {
        T::lit(1e-9)
    } else {
        T::lit(1e-5)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }

    pub fn x(&self) -> T {
        self.0[0]
    }

    pub fn y(&self) -> T {
        self.0[1]
    }

    pub fn z(&self) -> T {
        self.0[2]
    }

    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Self) -> Self {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        Vec3([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction; the zero vector is returned as-is.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            *self * (T::one() / n)
        } else {
            *self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        Vec3(self.0.map(|v| U::lit(v.as_f64())))
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        (0..3).fold(T::zero(), |acc, i| acc.max((self.0[i] - o.0[i]).abs()))
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3(self.0.map(|v| -v))
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Vec3(self.0.map(|v| v * s))
    }
}

/// Element of SO(3) stored as a row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Default for Rotation<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Rotation {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Accepts a matrix only if it is orthonormal with unit determinant.
    pub fn from_matrix(m: [[T; 3]; 3]) -> Result<Self> {
        let r = Rotation { m };
        if r.is_valid(rotation_tolerance::<T>()) {
            Ok(r)
        } else {
            Err(Error::Domain(format!("matrix is not a rotation: {m:?}")))
        }
    }

    /// Wraps a matrix without validation. Callers guarantee orthonormality.
    pub(crate) fn from_matrix_unchecked(m: [[T; 3]; 3]) -> Self {
        Rotation { m }
    }

    pub fn matrix(&self) -> &[[T; 3]; 3] {
        &self.m
    }

    /// Rotation by `angle` radians about a unit `axis`.
    pub fn about_axis(axis: Vec3<T>, angle: T) -> Self {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let k = skew(&a);
        let k2 = mat_mul(&k, &k);
        let mut m = Self::identity().m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += s * k[i][j] + (T::one() - c) * k2[i][j];
            }
        }
        Rotation { m }
    }

    pub fn about_x(angle: T) -> Self {
        Self::about_axis(Vec3::new(T::one(), T::zero(), T::zero()), angle)
    }

    pub fn about_y(angle: T) -> Self {
        Self::about_axis(Vec3::new(T::zero(), T::one(), T::zero()), angle)
    }

    pub fn about_z(angle: T) -> Self {
        Self::about_axis(Vec3::new(T::zero(), T::zero(), T::one()), angle)
    }

    /// Exponential map (Rodrigues). Rejects |w| >= π.
    pub fn from_axis_angle(w: Vec3<T>) -> Result<Self> {
        let theta = w.norm();
        if !theta.is_finite() || theta >= T::PI() {
            return Err(Error::Domain(format!(
                "axis-angle norm {theta} outside [0, π)"
            )));
        }
        let t2 = theta * theta;
        // sin(θ)/θ and (1 - cos θ)/θ², with series near zero.
        let (a, b) = if theta < T::lit(1e-4) {
            (
                T::one() - t2 / T::lit(6.0) + t2 * t2 / T::lit(120.0),
                T::lit(0.5) - t2 / T::lit(24.0) + t2 * t2 / T::lit(720.0),
            )
        } else {
            (theta.sin() / theta, (T::one() - theta.cos()) / t2)
        };
        let k = skew(&w);
        let k2 = mat_mul(&k, &k);
        let mut m = Self::identity().m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += a * k[i][j] + b * k2[i][j];
            }
        }
        Ok(Rotation { m })
    }

    /// Logarithm map. Fails when the rotation angle is within reach of π.
    pub fn to_axis_angle(&self) -> Result<Vec3<T>> {
        let m = &self.m;
        let tr = self.trace();
        if tr.is_nan() || tr <= -T::one() + T::lit(1e-8) {
            return Err(Error::Domain(format!(
                "rotation angle too close to π (trace {tr})"
            )));
        }
        let v = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
        let sin_t = v.norm() * T::lit(0.5);
        let cos_t = (tr - T::one()) * T::lit(0.5);
        let theta = sin_t.atan2(cos_t);
        if theta < T::lit(1e-5) {
            let t2 = theta * theta;
            return Ok(v * (T::lit(0.5) + t2 / T::lit(12.0)));
        }
        if theta < T::PI() - T::lit(1e-3) {
            return Ok(v * (theta / (T::lit(2.0) * sin_t)));
        }
        // Near π the antisymmetric part vanishes; read the axis from the
        // symmetric part (1 - cos θ) n nᵀ and take the sign from `v`.
        let one_minus_c = T::one() - cos_t;
        let diag = [m[0][0], m[1][1], m[2][2]];
        let i = (0..3)
            .max_by(|&a, &b| diag[a].partial_cmp(&diag[b]).unwrap())
            .unwrap();
        let mut col = [T::zero(); 3];
        for (j, c) in col.iter_mut().enumerate() {
            let sym = (m[j][i] + m[i][j]) * T::lit(0.5);
            *c = if j == i { sym - cos_t } else { sym };
        }
        let mut n = Vec3(col) * (T::one() / (col[i] * one_minus_c).sqrt());
        n = n.normalized();
        if n.dot(&v) < T::zero() {
            n = -n;
        }
        Ok(n * theta)
    }

    pub fn trace(&self) -> T {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> T {
        let c = ((self.trace() - T::one()) * T::lit(0.5))
            .max(-T::one())
            .min(T::one());
        c.acos()
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Rotation {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Matrix product `self * rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Rotation {
            m: mat_mul(&self.m, &rhs.m),
        }
    }

    /// `by * self * byᵀ`: the same rotation expressed in the frame `by` maps into.
    pub fn conjugate(&self, by: &Self) -> Self {
        by.compose(self).compose(&by.transpose())
    }

    pub fn apply(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        )
    }

    pub fn apply_transpose(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        )
    }

    pub fn determinant(&self) -> T {
        det(&self.m)
    }

    /// Orthonormality and unit determinant, elementwise within `tol`.
    pub fn is_valid(&self, tol: T) -> bool {
        if !self.m.iter().flatten().all(|v| v.is_finite()) {
            return false;
        }
        let g = mat_mul(&self.m, &self.transpose().m);
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { T::one() } else { T::zero() };
                if (*v - want).abs() > tol {
                    return false;
                }
            }
        }
        (self.determinant() - T::one()).abs() <= tol
    }

    /// Nearest rotation in the Frobenius sense (orthogonal polar factor),
    /// computed with the Newton iteration X ← (X + X⁻ᵀ)/2.
    pub fn orthonormalized(&self) -> Self {
        let mut x = self.m;
        for _ in 0..30 {
            let inv_t = inverse_transpose(&x);
            let mut next = x;
            let mut delta = T::zero();
            for i in 0..3 {
                for j in 0..3 {
                    next[i][j] = (x[i][j] + inv_t[i][j]) * T::lit(0.5);
                    delta = delta.max((next[i][j] - x[i][j]).abs());
                }
            }
            x = next;
            if delta <= T::epsilon() * T::lit(4.0) {
                break;
            }
        }
        Rotation { m: x }
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut d = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        d
    }

    pub fn cast<U: Real>(&self) -> Rotation<U> {
        Rotation {
            m: self.m.map(|r| r.map(|v| U::lit(v.as_f64()))),
        }
    }
}

impl<T: Real> Mul for Rotation<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

fn skew<T: Real>(w: &Vec3<T>) -> [[T; 3]; 3] {
    let z = T::zero();
    [[z, -w[2], w[1]], [w[2], z, -w[0]], [-w[1], w[0], z]]
}

fn mat_mul<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn det<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// (M⁻¹)ᵀ = cofactor(M) / det(M).
fn inverse_transpose<T: Real>(m: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let d = det(m);
    let mut cof = [[T::zero(); 3]; 3];
    for (i, row) in cof.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
            let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
            *c = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / d;
        }
    }
    cof
}

/// Rigid pose. For an end-effector, `rotation`/`translation` map the tool
/// frame into the base frame. For camera extrinsics, `translation` is the
/// camera center in the world and `rotation` maps world directions into the
/// camera frame, so `x_cam = R (x_world - p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub rotation: Rotation<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Pose::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Rotation<T>, translation: Vec3<T>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zero())
    }

    /// Applies a Base-space delta action: `p + Δp`, `ΔR · R`.
    pub fn apply_action(&self, a: &Action<T>) -> Self {
        Pose::new(a.dr.compose(&self.rotation), self.translation + a.dp)
    }

    /// `R (x - p)`; meaningful for camera extrinsics.
    pub fn world_to_camera(&self, x: &Vec3<T>) -> Vec3<T> {
        self.rotation.apply(&(*x - self.translation))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.is_finite()
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose::new(self.rotation.cast(), self.translation.cast())
    }
}

/// Per-step delta action (Δp, ΔR, s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action<T> {
    pub dp: Vec3<T>,
    pub dr: Rotation<T>,
    /// Continuous gripper command in [0, 1]; >= 0.5 means closed.
    pub gripper: T,
}

impl<T: Real> Default for Action<T> {
    fn default() -> Self {
        Action::zero()
    }
}

impl<T: Real> Action<T> {
    pub fn new(dp: Vec3<T>, dr: Rotation<T>, gripper: T) -> Self {
        Action { dp, dr, gripper }
    }

    pub fn zero() -> Self {
        Action::new(Vec3::zero(), Rotation::identity(), T::zero())
    }

    pub fn is_valid(&self) -> bool {
        self.dp.is_finite()
            && self.dr.is_valid(rotation_tolerance::<T>())
            && self.gripper >= T::zero()
            && self.gripper <= T::one()
    }

    pub fn is_finite(&self) -> bool {
        self.dp.is_finite()
            && self.gripper.is_finite()
            && self.dr.matrix().iter().flatten().all(|v| v.is_finite())
    }

    /// Rotates both free vectors of the action by `r`: `(r Δp, r ΔR rᵀ, s)`.
    pub fn rotated(&self, r: &Rotation<T>) -> Self {
        Action::new(r.apply(&self.dp), self.dr.conjugate(r), self.gripper)
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        self.dp
            .max_abs_diff(&o.dp)
            .max(self.dr.max_abs_diff(&o.dr))
            .max((self.gripper - o.gripper).abs())
    }
}

/// Base action to the frame of camera `ext`: `(R Δp, R ΔR Rᵀ, s)`.
/// Only the rotation of the extrinsics is used.
pub fn action_to_camera<T: Real>(a: &Action<T>, ext: &Pose<T>) -> Action<T> {
    a.rotated(&ext.rotation)
}

/// Inverse of [`action_to_camera`].
pub fn action_from_camera<T: Real>(a: &Action<T>, ext: &Pose<T>) -> Action<T> {
    a.rotated(&ext.rotation.transpose())
}

/// Base action to the current end-effector frame: `(Rᵀ Δp, Rᵀ ΔR R, s)`.
pub fn action_to_eef<T: Real>(a: &Action<T>, eef_pose: &Pose<T>) -> Action<T> {
    a.rotated(&eef_pose.rotation.transpose())
}

/// Inverse of [`action_to_eef`].
pub fn action_from_eef<T: Real>(a: &Action<T>, eef_pose: &Pose<T>) -> Action<T> {
    a.rotated(&eef_pose.rotation)
}

/// Frame in which a policy's actions are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSpace {
    Base,
    Eef,
    Camera,
}

impl ActionSpace {
    /// Tag for the pseudo-demonstration recorded from `view`.
    pub fn tag(self, view: usize) -> ActionSpaceTag {
        match self {
            ActionSpace::Base => ActionSpaceTag::Base,
            ActionSpace::Eef => ActionSpaceTag::Eef,
            ActionSpace::Camera => ActionSpaceTag::Camera(view),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionSpace::Base => "base",
            ActionSpace::Eef => "eef",
            ActionSpace::Camera => "camera",
        }
    }
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ActionSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(ActionSpace::Base),
            "eef" => Ok(ActionSpace::Eef),
            "camera" => Ok(ActionSpace::Camera),
            other => Err(Error::Config(format!("unknown action space `{other}`"))),
        }
    }
}

/// Action space of a concrete action sequence; camera spaces carry their view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionSpaceTag {
    Base,
    Eef,
    Camera(usize),
}

impl ActionSpaceTag {
    pub fn space(self) -> ActionSpace {
        match self {
            ActionSpaceTag::Base => ActionSpace::Base,
            ActionSpaceTag::Eef => ActionSpace::Eef,
            ActionSpaceTag::Camera(_) => ActionSpace::Camera,
        }
    }

    /// Checks that a camera tag refers to a view of a rig with `n_views` cameras.
    pub fn validate(self, n_views: usize) -> Result<()> {
        match self {
            ActionSpaceTag::Camera(v) if v >= n_views => Err(Error::Config(format!(
                "camera view {v} outside rig of {n_views} views"
            ))),
            _ => Ok(()),
        }
    }

    /// Maps a Base-space action into this space (the per-view transform).
    pub fn from_base<T: Real>(
        self,
        a: &Action<T>,
        rig: &[Pose<T>],
        eef_pose: &Pose<T>,
    ) -> Action<T> {
        match self {
            ActionSpaceTag::Base => *a,
            ActionSpaceTag::Eef => action_to_eef(a, eef_pose),
            ActionSpaceTag::Camera(v) => action_to_camera(a, &rig[v]),
        }
    }

    /// Maps an action expressed in this space back to the Base space.
    pub fn to_base<T: Real>(self, a: &Action<T>, rig: &[Pose<T>], eef_pose: &Pose<T>) -> Action<T> {
        match self {
            ActionSpaceTag::Base => *a,
            ActionSpaceTag::Eef => action_from_eef(a, eef_pose),
            ActionSpaceTag::Camera(v) => action_from_camera(a, &rig[v]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Rodrigues evaluated term by term, independent of `from_axis_angle`.
    fn rodrigues_oracle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
        let [x, y, z] = axis;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    fn close(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3], tol: f64) -> bool {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_axis_angle_is_identity() {
        let r = Rotation::from_axis_angle(Vec3::<f64>::zero()).unwrap();
        assert_eq!(r, Rotation::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = Rotation::from_axis_angle(Vec3::new(0.0, 0.0, FRAC_PI_2)).unwrap();
        assert!(close(
            r.matrix(),
            &rodrigues_oracle([0.0, 0.0, 1.0], FRAC_PI_2),
            1e-12
        ));
        let y = r.apply(&Vec3::new(1.0, 0.0, 0.0));
        assert!(y.max_abs_diff(&Vec3::new(0.0, 1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn from_axis_angle_rejects_pi() {
        assert!(matches!(
            Rotation::from_axis_angle(Vec3::new(PI, 0.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(Rotation::from_axis_angle(Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn log_of_identity_is_zero() {
        let w = Rotation::<f64>::identity().to_axis_angle().unwrap();
        assert_eq!(w, Vec3::zero());
    }

    #[test]
    fn log_of_rz() {
        let r = Rotation::from_matrix(rodrigues_oracle([0.0, 0.0, 1.0], 0.3)).unwrap();
        let w = r.to_axis_angle().unwrap();
        assert!(w.max_abs_diff(&Vec3::new(0.0, 0.0, 0.3)) < 1e-9);

        let composed = Rotation::about_z(0.1).compose(&Rotation::about_z(0.2));
        let w = composed.to_axis_angle().unwrap();
        assert!(w.max_abs_diff(&Vec3::new(0.0, 0.0, 0.3)) < 1e-9);
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = Rotation::<f64>::about_x(PI);
        assert!(matches!(r.to_axis_angle(), Err(Error::Domain(_))));
    }

    #[test]
    fn log_near_pi_uses_symmetric_branch() {
        let w = Vec3::new(0.3, -0.5, 0.8).normalized() * (PI - 2e-4);
        let r = Rotation::from_axis_angle(w).unwrap();
        let back = r.to_axis_angle().unwrap();
        assert!(back.max_abs_diff(&w) < 1e-6, "{back:?} vs {w:?}");
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(Rotation::<f64>::from_matrix(m).is_err());
    }

    #[test]
    fn camera_transform_examples() {
        let ext = Pose::new(Rotation::about_z(FRAC_PI_2), Vec3::new(3.0, 4.0, 5.0));
        let a = Action::new(Vec3::new(1.0, 0.0, 0.0), Rotation::identity(), 0.7);
        let c = action_to_camera(&a, &ext);
        assert!(c.dp.max_abs_diff(&Vec3::new(0.0, 1.0, 0.0)) < 1e-12);
        assert!(c.dr.max_abs_diff(&Rotation::identity()) < 1e-12);
        assert_eq!(c.gripper, 0.7);

        let a = Action::new(Vec3::new(0.0, 1.0, 0.0), Rotation::identity(), 0.0);
        let b = action_from_camera(&a, &ext);
        assert!(b.dp.max_abs_diff(&Vec3::new(1.0, 0.0, 0.0)) < 1e-12);

        let a = Action::new(Vec3::new(0.1, 0.2, 0.3), Rotation::about_x(0.1), 0.3);
        assert_eq!(
            action_to_camera(&a, &Pose::identity()).max_abs_diff(&a),
            0.0
        );
        assert_eq!(
            action_from_camera(&a, &Pose::identity()).max_abs_diff(&a),
            0.0
        );
    }

    #[test]
    fn eef_transform_examples() {
        let pose = Pose::new(Rotation::about_z(FRAC_PI_2), Vec3::zero());
        let a = Action::new(Vec3::new(1.0, 0.0, 0.0), Rotation::about_x(0.2), 1.0);
        let e = action_to_eef(&a, &pose);
        assert!(e.dp.max_abs_diff(&Vec3::new(0.0, -1.0, 0.0)) < 1e-12);
        assert!((e.dr.angle() - a.dr.angle()).abs() < 1e-9);
        assert!(action_from_eef(&e, &pose).max_abs_diff(&a) < 1e-12);
        assert_eq!(action_to_eef(&a, &Pose::identity()).max_abs_diff(&a), 0.0);
    }

    #[test]
    fn eef_composition_matches_base_composition() {
        // ΔR·R = R·ΔR_eef and p + Δp = p + R Δp_eef.
        let pose = Pose::new(
            Rotation::from_axis_angle(Vec3::new(0.3, -0.2, 0.9)).unwrap(),
            Vec3::new(0.1, 0.0, 0.2),
        );
        let a = Action::new(
            Vec3::new(0.01, 0.02, -0.03),
            Rotation::from_axis_angle(Vec3::new(0.05, 0.0, -0.1)).unwrap(),
            0.0,
        );
        let e = action_to_eef(&a, &pose);
        let next = pose.apply_action(&a);
        let via_eef = pose.rotation.compose(&e.dr);
        assert!(next.rotation.max_abs_diff(&via_eef) < 1e-12);
        let dp = pose.rotation.apply(&e.dp);
        assert!(dp.max_abs_diff(&a.dp) < 1e-12);
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut r = Rotation::<f64>::identity();
        let step = Rotation::from_axis_angle(Vec3::new(0.01, 0.02, 0.03)).unwrap();
        for _ in 0..1000 {
            r = r.compose(&step);
        }
        let mut m = *r.matrix();
        m[0][0] += 1e-6;
        m[2][1] -= 1e-6;
        let drifted = Rotation::from_matrix_unchecked(m);
        assert!(!drifted.is_valid(1e-9));
        let fixed = drifted.orthonormalized();
        assert!(fixed.is_valid(1e-12));
        assert!(fixed.max_abs_diff(&r) < 1e-5);
    }

    #[test]
    fn tags_round_trip() {
        let rig = [Pose::new(Rotation::about_y(0.4), Vec3::zero())];
        let eef = Pose::new(Rotation::about_x(-0.7), Vec3::zero());
        let a = Action::new(Vec3::new(0.02, -0.01, 0.03), Rotation::about_z(0.05), 1.0);
        for tag in [
            ActionSpaceTag::Base,
            ActionSpaceTag::Eef,
            ActionSpaceTag::Camera(0),
        ] {
            let back = tag.to_base(&tag.from_base(&a, &rig, &eef), &rig, &eef);
            assert!(back.max_abs_diff(&a) < 1e-12);
        }
        assert!(ActionSpaceTag::Camera(1).validate(1).is_err());
        assert_eq!(
            "Camera".parse::<ActionSpace>().unwrap(),
            ActionSpace::Camera
        );
    }

    #[test]
    fn works_in_single_precision() {
        let r = Rotation::<f32>::from_axis_angle(Vec3::new(0.1, 0.2, 0.3)).unwrap();
        assert!(r.is_valid(rotation_tolerance::<f32>()));
        let w = r.to_axis_angle().unwrap();
        assert!(w.max_abs_diff(&Vec3::new(0.1, 0.2, 0.3)) < 1e-5);
    }
}
