//! Rotation parameterizations and homogeneous transforms.
//!
//! Three parameterizations are supported, all mapping a short real vector
//! to a 3×3 direction-cosine matrix:
//!
//! * Euler angles `(a, b, c)` about the fixed x, y and z axes, composed as
//!   `R = Rz(c) · Ry(b) · Rx(a)`.
//! * Axis-angle `v`, where `‖v‖` is the angle and `v / ‖v‖` the axis
//!   (Rodrigues' formula).
//! * Quaternion `(w, x, y, z)`, scalar first. The quaternion is normalized on
//!   every evaluation, so an optimizer may move it off the unit sphere freely.

use std::fmt;
use std::ops::Mul;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;
const QUAT_MIN_NORM: f64 = 1e-12;
const GIMBAL_TOL: f64 = 1e-12;

/// A proper orthonormal 3×3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and determinant to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if !(ortho < ORTHO_TOL) || !((det - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::DegenerateParameter(format!(
                "matrix is not a proper rotation (‖mᵀm − I‖ = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self(m))
    }

    /// Wraps `m` without any check. The caller guarantees orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Projects an approximately orthonormal matrix onto SO(3) via SVD.
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn about_axis(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let v = axis * (angle / n);
        Self(axis_angle_matrix(&[v.x, v.y, v.z]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Angle of this rotation in `[0, π]`.
    pub fn angle(&self) -> f64 {
        rotation_angle(self)
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// The three supported rotation parameterizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RotationKind {
    EulerXyz,
    AxisAngle,
    Quaternion,
}

impl RotationKind {
    pub const ALL: [RotationKind; 3] = [Self::EulerXyz, Self::AxisAngle, Self::Quaternion];

    /// Number of parameters of this representation.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            Self::EulerXyz | Self::AxisAngle => 3,
            Self::Quaternion => 4,
        }
    }

    /// Parameters that map to the identity rotation.
    pub fn identity_params(self) -> &'static [f64] {
        match self {
            Self::EulerXyz | Self::AxisAngle => &[0.0, 0.0, 0.0],
            Self::Quaternion => &[1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EulerXyz => "euler",
            Self::AxisAngle => "axis-angle",
            Self::Quaternion => "quaternion",
        }
    }
}

impl fmt::Display for RotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RotationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euler" | "euler-xyz" => Ok(Self::EulerXyz),
            "axis-angle" | "axisangle" | "axis_angle" => Ok(Self::AxisAngle),
            "quaternion" | "quat" => Ok(Self::Quaternion),
            other => Err(Error::Config(format!("unknown rotation kind '{other}'"))),
        }
    }
}

/// A rotation parameter vector tagged with its representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RotationParam {
    /// Angles about x, y, z in radians.
    EulerXyz([f64; 3]),
    /// Rotation vector in radians.
    AxisAngle([f64; 3]),
    /// `(w, x, y, z)`, any nonzero scale.
    Quaternion([f64; 4]),
}

impl RotationParam {
    pub fn kind(&self) -> RotationKind {
        match self {
            Self::EulerXyz(_) => RotationKind::EulerXyz,
            Self::AxisAngle(_) => RotationKind::AxisAngle,
            Self::Quaternion(_) => RotationKind::Quaternion,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Self::EulerXyz(p) | Self::AxisAngle(p) => p,
            Self::Quaternion(q) => q,
        }
    }

    pub fn from_slice(kind: RotationKind, p: &[f64]) -> Result<Self> {
        if p.len() != kind.len() {
            return Err(Error::DegenerateParameter(format!(
                "{kind} expects {} parameters, got {}",
                kind.len(),
                p.len()
            )));
        }
        Ok(match kind {
            RotationKind::EulerXyz => Self::EulerXyz([p[0], p[1], p[2]]),
            RotationKind::AxisAngle => Self::AxisAngle([p[0], p[1], p[2]]),
            RotationKind::Quaternion => Self::Quaternion([p[0], p[1], p[2], p[3]]),
        })
    }
}

/// Converts a parameter vector to its rotation matrix.
pub fn rot_from_param(p: &RotationParam) -> Result<Rotation3> {
    rotation_matrix(p.kind(), p.as_slice()).map(Rotation3)
}

/// Slice-based variant of [`rot_from_param`] used on solver hot paths.
pub fn rotation_matrix(kind: RotationKind, p: &[f64]) -> Result<Matrix3<f64>> {
    debug_assert_eq!(p.len(), kind.len());
    match kind {
        RotationKind::EulerXyz => Ok(euler_xyz_matrix(p[0], p[1], p[2])),
        RotationKind::AxisAngle => Ok(axis_angle_matrix(p)),
        RotationKind::Quaternion => quaternion_matrix(p),
    }
}

fn euler_xyz_matrix(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

fn axis_angle_matrix(v: &[f64]) -> Matrix3<f64> {
    let w = Vec3::new(v[0], v[1], v[2]);
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    // Series expansions keep the map smooth through the origin.
    let (a, b) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = w.cross_matrix();
    Matrix3::identity() + k * a + k * k * b
}

fn quaternion_matrix(q: &[f64]) -> Result<Matrix3<f64>> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > QUAT_MIN_NORM) {
        return Err(Error::DegenerateParameter(format!(
            "quaternion norm {n:e} is too small"
        )));
    }
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Unit quaternion `(w, x, y, z)` with `w ≥ 0` for a rotation matrix.
pub fn quaternion_from_rot(r: &Rotation3) -> [f64; 4] {
    let m = &r.0;
    let trace = m.trace();
    // Shepperd: branch on the largest of w², x², y², z².
    let candidates = [trace, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    let mut best = 0;
    for i in 1..4 {
        if candidates[i] > candidates[best] {
            best = i;
        }
    }
    let q = match best {
        0 => {
            let s = (1.0 + trace).sqrt() * 2.0;
            Vector4::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        }
        1 => {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Vector4::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        }
        2 => {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Vector4::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        }
        _ => {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Vector4::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        }
    };
    let mut q = q.normalize();
    if q[0] < 0.0 {
        q = -q;
    }
    [q[0], q[1], q[2], q[3]]
}

/// Euler angles extracted from a rotation, with a gimbal-lock flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerExtraction {
    pub angles: [f64; 3],
    /// Set when `|r[2][0]|` is within 1e-12 of 1; the z angle is then fixed to 0.
    pub gimbal_lock: bool,
}

pub fn euler_from_rot(r: &Rotation3) -> EulerExtraction {
    let m = &r.0;
    let s = m[(2, 0)];
    if s.abs() > 1.0 - GIMBAL_TOL {
        let (a, b) = if s < 0.0 {
            (m[(0, 1)].atan2(m[(1, 1)]), std::f64::consts::FRAC_PI_2)
        } else {
            ((-m[(0, 1)]).atan2(m[(1, 1)]), -std::f64::consts::FRAC_PI_2)
        };
        return EulerExtraction {
            angles: [a, b, 0.0],
            gimbal_lock: true,
        };
    }
    let b = (-s).atan2((m[(0, 0)] * m[(0, 0)] + m[(1, 0)] * m[(1, 0)]).sqrt());
    let a = m[(2, 1)].atan2(m[(2, 2)]);
    let c = m[(1, 0)].atan2(m[(0, 0)]);
    EulerExtraction {
        angles: [a, b, c],
        gimbal_lock: false,
    }
}

/// Rotation vector (axis · angle) with angle in `[0, π]`.
pub fn axis_angle_from_rot(r: &Rotation3) -> [f64; 3] {
    let q = quaternion_from_rot(r);
    let v = Vec3::new(q[1], q[2], q[3]);
    let s = v.norm();
    if s < 1e-300 {
        return [0.0; 3];
    }
    let theta = 2.0 * s.atan2(q[0]);
    let w = v * (theta / s);
    [w.x, w.y, w.z]
}

/// Extracts a parameter vector of the requested kind from a rotation.
///
/// Quaternions come back unit-norm with a nonnegative scalar part.
pub fn param_from_rot(r: &Rotation3, kind: RotationKind) -> RotationParam {
    match kind {
        RotationKind::EulerXyz => RotationParam::EulerXyz(euler_from_rot(r).angles),
        RotationKind::AxisAngle => RotationParam::AxisAngle(axis_angle_from_rot(r)),
        RotationKind::Quaternion => RotationParam::Quaternion(quaternion_from_rot(r)),
    }
}

/// `arccos(clamp((trace − 1) / 2, −1, 1))`.
pub fn rotation_angle(r: &Rotation3) -> f64 {
    ((r.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// A rigid homogeneous transform `[R t; 0 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Htm {
    pub r: Rotation3,
    pub t: Vec3,
}

impl Default for Htm {
    fn default() -> Self {
        Self::identity()
    }
}

impl Htm {
    pub fn new(r: Rotation3, t: Vec3) -> Self {
        Self { r, t }
    }

    pub fn identity() -> Self {
        Self {
            r: Rotation3::identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            r: Rotation3::identity(),
            t,
        }
    }

    /// Builds a transform from rotation parameters and a translation.
    pub fn from_params(kind: RotationKind, p: &[f64], t: &[f64]) -> Result<Self> {
        Ok(Self {
            r: Rotation3(rotation_matrix(kind, p)?),
            t: Vec3::new(t[0], t[1], t[2]),
        })
    }

    /// `self · other`.
    pub fn compose(&self, other: &Htm) -> Htm {
        Htm {
            r: Rotation3(self.r.0 * other.r.0),
            t: self.r.0 * other.t + self.t,
        }
    }

    pub fn inverse(&self) -> Htm {
        let rt = self.r.0.transpose();
        Htm {
            r: Rotation3(rt),
            t: -(rt * self.t),
        }
    }

    /// Applies the upper 3×4 block to a point.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.r.0 * p + self.t
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r.0);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    /// Splits a 4×4 matrix; the rotation block must be orthonormal to 1e-9.
    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let r = Rotation3::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Self {
            r,
            t: m.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    /// Row-major upper 3×4 block as 12 numbers.
    pub fn upper_3x4(&self) -> [f64; 12] {
        let r = &self.r.0;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            self.t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            self.t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            self.t.z,
        ]
    }

    /// Serializes in the shared text format: four rows of four numbers,
    /// the last row `0 0 0 1`. Numbers use the shortest exact decimal form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in 0..3 {
            let r = &self.r.0;
            s.push_str(&format!(
                "{} {} {} {}\n",
                r[(row, 0)],
                r[(row, 1)],
                r[(row, 2)],
                self.t[row]
            ));
        }
        s.push_str("0 0 0 1\n");
        s
    }

    /// Parses the shared text format.
    ///
    /// Rotation blocks within 1e-9 of orthonormal are kept bit-for-bit;
    /// blocks within 1e-6 (typical of files printed with few digits) are
    /// projected onto SO(3); anything worse is rejected.
    pub fn parse_text(text: &str) -> std::result::Result<Self, String> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|tok| tok.parse::<f64>().map_err(|e| format!("bad number '{tok}': {e}")))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<_, _>>()?;
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err("expected 4 rows of 4 numbers".into());
        }
        if rows[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err("last row must be '0 0 0 1'".into());
        }
        let m = Matrix3::from_fn(|i, j| rows[i][j]);
        let t = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
        if !m.iter().chain(t.iter()).all(|v| v.is_finite()) {
            return Err("non-finite entry".into());
        }
        let r = match Rotation3::from_matrix(m) {
            Ok(r) => r,
            Err(_) => {
                let ortho = (m.transpose() * m - Matrix3::identity()).norm();
                if ortho < 1e-6 && m.determinant() > 0.0 {
                    Rotation3::nearest(&m)
                } else {
                    return Err(format!("rotation block is not orthonormal (error {ortho:e})"));
                }
            }
        };
        Ok(Htm { r, t })
    }
}

impl Mul for Htm {
    type Output = Htm;
    fn mul(self, rhs: Htm) -> Htm {
        self.compose(&rhs)
    }
}

impl Mul<&Htm> for &Htm {
    type Output = Htm;
    fn mul(self, rhs: &Htm) -> Htm {
        self.compose(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Quaternion, UnitQuaternion};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_rotation(seed: [f64; 4]) -> Rotation3 {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(seed[0], seed[1], seed[2], seed[3]));
        Rotation3::from_matrix_unchecked(*q.to_rotation_matrix().matrix())
    }

    #[test]
    fn zero_euler_is_identity() {
        let r = rot_from_param(&RotationParam::EulerXyz([0.0; 3])).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn half_turn_about_x() {
        let r = rot_from_param(&RotationParam::AxisAngle([PI, 0.0, 0.0])).unwrap();
        assert_relative_eq!(
            *r.matrix(),
            Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn quaternion_half_is_cyclic_permutation() {
        let r = rot_from_param(&RotationParam::Quaternion([0.5; 4])).unwrap();
        let expected = Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_quaternion_is_rejected() {
        let err = rot_from_param(&RotationParam::Quaternion([0.0, 1e-13, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DegenerateParameter(_)));
    }

    #[test]
    fn param_extraction_examples() {
        let q = param_from_rot(&Rotation3::identity(), RotationKind::Quaternion);
        assert_eq!(q, RotationParam::Quaternion([1.0, 0.0, 0.0, 0.0]));
        let half = Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)));
        let RotationParam::AxisAngle(v) = param_from_rot(&half, RotationKind::AxisAngle) else {
            unreachable!()
        };
        assert_relative_eq!(v[0], PI, epsilon = 1e-15);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn euler_matches_nalgebra_roll_pitch_yaw() {
        // nalgebra's from_euler_angles(roll, pitch, yaw) = Rz(yaw) Ry(pitch) Rx(roll).
        let (a, b, c) = (0.3, -1.1, 2.5);
        let ours = euler_xyz_matrix(a, b, c);
        let theirs = nalgebra::Rotation3::from_euler_angles(a, b, c);
        assert_relative_eq!(ours, *theirs.matrix(), epsilon = 1e-14);
    }

    #[test]
    fn axis_angle_matches_nalgebra() {
        let v = Vec3::new(0.4, -0.9, 1.7);
        let ours = axis_angle_matrix(v.as_slice());
        let theirs = nalgebra::Rotation3::new(v);
        assert_relative_eq!(ours, *theirs.matrix(), epsilon = 1e-14);
    }

    #[test]
    fn gimbal_lock_is_flagged_and_round_trips() {
        for b in [PI / 2.0, -PI / 2.0] {
            let r = Rotation3(euler_xyz_matrix(0.7, b, -0.4));
            let e = euler_from_rot(&r);
            assert!(e.gimbal_lock);
            assert_eq!(e.angles[2], 0.0);
            let back = euler_xyz_matrix(e.angles[0], e.angles[1], e.angles[2]);
            assert!((back - r.0).norm() < 1e-9);
        }
    }

    #[test]
    fn round_trip_thousand_random_rotations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let seed: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let r = random_rotation(seed);
            for kind in RotationKind::ALL {
                let p = param_from_rot(&r, kind);
                let back = rot_from_param(&p).unwrap();
                worst = worst.max((back.0 - r.0).norm());
            }
        }
        assert!(worst < 1e-9, "worst round-trip error {worst:e}");
    }

    #[test]
    fn inverse_of_translation() {
        let h = Htm::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let inv = h.inverse();
        assert_eq!(inv.r, Rotation3::identity());
        assert_eq!(inv.t, Vec3::new(-1.0, -2.0, -3.0));
        assert_eq!(Htm::identity().compose(&Htm::identity()), Htm::identity());
    }

    #[test]
    fn rotation_angle_examples() {
        assert_eq!(rotation_angle(&Rotation3::identity()), 0.0);
        let half = Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)));
        assert_relative_eq!(rotation_angle(&half), PI);
        let rz = Rotation3::about_axis(&Vec3::z(), 0.3);
        assert_relative_eq!(rotation_angle(&rz), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn text_format_round_trip_is_byte_identical() {
        let h = Htm::new(
            random_rotation([0.1, 0.7, -0.3, 0.2]),
            Vec3::new(0.1, -123.456789012345, 1e-7),
        );
        let text = h.to_text();
        assert!(text.ends_with("0 0 0 1\n"));
        let parsed = Htm::parse_text(&text).unwrap();
        assert_eq!(parsed, h);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn text_format_rejects_bad_last_row() {
        let bad = "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n";
        assert!(Htm::parse_text(bad).is_err());
    }

    prop_compose! {
        fn any_rotation()(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64)
            -> Rotation3 {
            if w * w + x * x + y * y + z * z < 1e-6 { Rotation3::identity() } else { random_rotation([w, x, y, z]) }
        }
    }

    proptest! {
        #[test]
        fn params_give_proper_rotations(a in -10.0..10.0f64, b in -10.0..10.0f64, c in -10.0..10.0f64, d in 0.1..2.0f64) {
            for (kind, p) in [
                (RotationKind::EulerXyz, vec![a, b, c]),
                (RotationKind::AxisAngle, vec![a, b, c]),
                (RotationKind::Quaternion, vec![d, a, b, c]),
            ] {
                let m = rotation_matrix(kind, &p).unwrap();
                prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
                prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn quaternion_scale_gauge(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.1..1.0f64, s in 0.01..100.0f64) {
            let a = quaternion_matrix(&[w, x, y, z]).unwrap();
            let b = quaternion_matrix(&[s * w, s * x, s * y, s * z]).unwrap();
            prop_assert!((a - b).abs().max() < 1e-12);
        }

        #[test]
        fn compose_with_inverse_is_identity(r in any_rotation(), tx in -1e3..1e3f64, ty in -1e3..1e3f64, tz in -1e3..1e3f64) {
            let h = Htm::new(r, Vec3::new(tx, ty, tz));
            let id = h.compose(&h.inverse()).to_matrix4();
            prop_assert!((id - Matrix4::identity()).abs().max() < 1e-9);
        }

        #[test]
        fn self_relative_rotation_has_zero_angle(r in any_rotation()) {
            let rel = r.transpose() * r;
            prop_assert!(rotation_angle(&rel) < 1e-7);
        }
    }
}
