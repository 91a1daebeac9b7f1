//! Single-view pose of a planar target: homography seed, then LM on the
//! reprojection error. Used to recover `A_i` from raw corner detections.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::camera::{project, CameraIntrinsics, TargetModel, Vec2};
use crate::error::{Error, Result};
use crate::nlls::{solve_lm, LeastSquaresProblem, SolverOptions};
use crate::se3::{param_from_rot, Htm, Rotation3, RotationKind};

/// Views whose refined rms reprojection error exceeds this are rejected.
pub const MAX_POSE_RMS_PX: f64 = 10.0;

/// Normalizing similarity for a 2-D point set (centroid to origin, mean
/// distance √2).
fn normalizer(pts: &[(f64, f64)]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let mean_dist = pts
        .iter()
        .map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized DLT homography mapping `src` to `dst`.
fn homography(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let ts = normalizer(src);
    let td = normalizer(dst);
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (k, (s, d)) in src.iter().zip(dst).enumerate() {
        let p = ts * Vector3::new(s.0, s.1, 1.0);
        let q = td * Vector3::new(d.0, d.1, 1.0);
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (u, v) = (q.x / q.z, q.y / q.z);
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    // Null vector of A = eigenvector of AᵀA with the smallest eigenvalue.
    let ata = a.tr_mul(&a);
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x: &(usize, &f64), y: &(usize, &f64)| x.1.total_cmp(y.1))?;
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let h = td.try_inverse()? * hn * ts;
    h.iter().all(|v| v.is_finite()).then_some(h)
}

/// Pose seed from a homography between target-plane and normalized image
/// coordinates: `H ∝ [r1 r2 t]`.
fn decompose(h: &Matrix3<f64>) -> Option<Htm> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let scale = 2.0 / (h1.norm() + h2.norm());
    if !scale.is_finite() {
        return None;
    }
    // The target must lie in front of the camera.
    let sign = if h3.z * scale < 0.0 { -scale } else { scale };
    let r1 = h1 * sign;
    let r2 = h2 * sign;
    let r3 = r1.cross(&r2);
    let m = Matrix3::from_columns(&[r1, r2, r3]);
    Some(Htm::new(Rotation3::nearest(&m), h3 * sign))
}

/// World→camera pose of a planar (`z = 0`) target from its observed pixels.
/// `points` pairs target point indices with pixel positions.
pub fn estimate_planar_pose(target: &TargetModel, k: &CameraIntrinsics, points: &[(usize, Vec2)]) -> Result<Htm> {
    let fail = |m: &str| Error::GeometryError(m.to_string());
    if !target.is_planar_z0() {
        return Err(fail("pose estimation needs a planar target with z = 0"));
    }
    if points.len() < 4 {
        return Err(fail(&format!("need at least 4 corners, got {}", points.len())));
    }
    let world = target.points();
    if let Some((j, _)) = points.iter().find(|(j, _)| *j >= world.len()) {
        return Err(fail(&format!("corner index {j} is outside the target")));
    }
    let src: Vec<(f64, f64)> = points.iter().map(|(j, _)| (world[*j].x, world[*j].y)).collect();
    let dst: Vec<(f64, f64)> = points.iter().map(|(_, uv)| k.undistort(uv)).collect();
    let h = homography(&src, &dst).ok_or_else(|| fail("homography is degenerate"))?;
    let seed = decompose(&h).ok_or_else(|| fail("homography decomposition failed"))?;

    let n_res = 2 * points.len();
    let residual_fn = |p: &DVector<f64>| -> DVector<f64> {
        let Ok(pose) = Htm::from_params(RotationKind::AxisAngle, &p.as_slice()[..3], &p.as_slice()[3..]) else {
            return DVector::from_element(n_res, f64::NAN);
        };
        let mut out = Vec::with_capacity(n_res);
        for (j, uv) in points {
            match project(k, &pose.transform_point(&world[*j])) {
                Ok(q) => out.extend([uv.x - q.x, uv.y - q.y]),
                Err(_) => out.extend([crate::calib::reproj::BEHIND_CAMERA_SENTINEL; 2]),
            }
        }
        DVector::from_vec(out)
    };
    let mut init = Vec::with_capacity(6);
    init.extend_from_slice(param_from_rot(&seed.r, RotationKind::AxisAngle).as_slice());
    init.extend_from_slice(seed.t.as_slice());
    let lsq = LeastSquaresProblem::new(residual_fn, DVector::from_vec(init));
    let (p, report) = solve_lm(&lsq, &SolverOptions::default())?;
    let rms = (report.final_cost / points.len() as f64).sqrt();
    if !(rms <= MAX_POSE_RMS_PX) {
        return Err(fail(&format!("rms reprojection error {rms:.3} px after refinement")));
    }
    let p = p.as_slice();
    Htm::from_params(RotationKind::AxisAngle, &p[..3], &p[3..6])
}
