//! Evaluation metrics for calibration results.
//!
//! Algebraic errors per pose `i` (all averaged over the visible poses):
//!
//! * `e_r1 = ‖R_A R_X − R_Z R_B‖²_F` (unitless)
//! * `e_r2 = angle((R_Z R_B)ᵀ (R_A R_X))` in degrees
//! * `e_t = ‖(R_A t_X + t_A) − (R_Z t_B + t_Z)‖²` (mm²)
//! * `e_c = ‖A X − Z B‖²_F`, which always equals `e_r1 + e_t`
//!
//! plus the reprojection rrmse, the reconstruction accuracy error (rae) from
//! triangulated target points, and the ground-truth errors used on
//! simulated data.

use nalgebra::{DVector, Matrix3};

use crate::calib::{compute_rsse, CalibProblem};
use crate::camera::{project, CameraIntrinsics, TargetModel, Vec2};
use crate::error::{Error, Result};
use crate::nlls::{solve_lm, LeastSquaresProblem, SolverOptions};
use crate::se3::{rotation_angle, Htm, Rotation3, Vec3};

/// Rays closer than this angle (degrees) make a triangulation ill-conditioned.
pub const MIN_RAY_ANGLE_DEG: f64 = 0.1;

/// Algebraic errors for one camera, each averaged over its visible poses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlgebraicErrors {
    pub e_r1: f64,
    pub e_r2_deg: f64,
    pub e_t: f64,
    pub e_c: f64,
    pub poses: usize,
}

/// Full metric set for one calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Averages over every visible (camera, pose) pair.
    pub e_r1: f64,
    pub e_r2_deg: f64,
    pub e_t_mm2: f64,
    pub e_c: f64,
    pub per_camera: Vec<AlgebraicErrors>,
    /// Empty when the problem has no observations or intrinsics.
    pub rrmse_px: Vec<f64>,
    /// Mean distance between triangulated and true target points (mm).
    pub rae_mm: Option<f64>,
    /// Mean squared distance variant of rae (mm²).
    pub rae_sq_mm2: Option<f64>,
    pub runtime_s: f64,
}

fn pose_errors(a: &Htm, b: &Htm, x: &Htm, z: &Htm) -> (f64, f64, f64) {
    let lhs = a.r.matrix() * x.r.matrix();
    let rhs = z.r.matrix() * b.r.matrix();
    let e_r1 = (lhs - rhs).norm_squared();
    let rel = Rotation3::from_matrix_unchecked(rhs.transpose() * lhs);
    let angle = rotation_angle(&rel).to_degrees();
    let lt = a.r.matrix() * x.t + a.t;
    let rt = z.r.matrix() * b.t + z.t;
    (e_r1, angle, (lt - rt).norm_squared())
}

/// Per-camera algebraic errors; cameras need `A` for every visible pose.
pub fn algebraic_errors(x: &Htm, z: &[Htm], problem: &CalibProblem) -> Result<Vec<AlgebraicErrors>> {
    problem.validate_algebraic()?;
    if z.len() != problem.n_cameras() {
        return Err(Error::InvalidProblem("one Z per camera required".into()));
    }
    Ok(problem
        .cameras
        .iter()
        .zip(z)
        .map(|(cam, z)| {
            let mut acc = AlgebraicErrors::default();
            for i in &cam.visibility {
                let a = &cam.a_poses[i];
                let b = &problem.b_poses[*i];
                let (r1, r2, t) = pose_errors(a, b, x, z);
                let diff: f64 = a
                    .compose(x)
                    .upper_3x4()
                    .iter()
                    .zip(z.compose(b).upper_3x4())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                acc.e_r1 += r1;
                acc.e_r2_deg += r2;
                acc.e_t += t;
                acc.e_c += diff;
            }
            let n = cam.visibility.len() as f64;
            AlgebraicErrors {
                e_r1: acc.e_r1 / n,
                e_r2_deg: acc.e_r2_deg / n,
                e_t: acc.e_t / n,
                e_c: acc.e_c / n,
                poses: cam.visibility.len(),
            }
        })
        .collect())
}

fn pooled(per_camera: &[AlgebraicErrors]) -> AlgebraicErrors {
    let total: usize = per_camera.iter().map(|c| c.poses).sum();
    let w =
        |f: fn(&AlgebraicErrors) -> f64| per_camera.iter().map(|c| f(c) * c.poses as f64).sum::<f64>() / total as f64;
    AlgebraicErrors {
        e_r1: w(|c| c.e_r1),
        e_r2_deg: w(|c| c.e_r2_deg),
        e_t: w(|c| c.e_t),
        e_c: w(|c| c.e_c),
        poses: total,
    }
}

/// Mean `‖R_A R_X − R_Z R_B‖²_F` per camera.
pub fn e_r1(x: &Htm, z: &[Htm], problem: &CalibProblem) -> Result<Vec<f64>> {
    Ok(algebraic_errors(x, z, problem)?.iter().map(|e| e.e_r1).collect())
}

/// Mean relative rotation angle per camera, degrees.
pub fn e_r2(x: &Htm, z: &[Htm], problem: &CalibProblem) -> Result<Vec<f64>> {
    Ok(algebraic_errors(x, z, problem)?.iter().map(|e| e.e_r2_deg).collect())
}

/// Mean squared translation discrepancy per camera, mm².
pub fn e_t(x: &Htm, z: &[Htm], problem: &CalibProblem) -> Result<Vec<f64>> {
    Ok(algebraic_errors(x, z, problem)?.iter().map(|e| e.e_t).collect())
}

/// Mean `‖A X − Z B‖²_F` per camera.
pub fn e_c(x: &Htm, z: &[Htm], problem: &CalibProblem) -> Result<Vec<f64>> {
    Ok(algebraic_errors(x, z, problem)?.iter().map(|e| e.e_c).collect())
}

/// One image of a point to be triangulated.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub uv: Vec2,
    /// World→camera transform for this image.
    pub camera_from_world: Htm,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangulation {
    pub point: Vec3,
    /// Widest pair of rays is within [`MIN_RAY_ANGLE_DEG`] of parallel.
    pub ill_conditioned: bool,
}

fn ray(view: &View) -> (Vec3, Vec3) {
    let (x, y) = view.intrinsics.undistort(&view.uv);
    let rt = view.camera_from_world.r.matrix().transpose();
    let center = -(rt * view.camera_from_world.t);
    let dir = (rt * Vec3::new(x, y, 1.0)).normalize();
    (center, dir)
}

/// Midpoint of the shortest segment between two rays.
fn midpoint(c0: &Vec3, d0: &Vec3, c1: &Vec3, d1: &Vec3) -> Vec3 {
    let w = c0 - c1;
    let b = d0.dot(d1);
    let d = d0.dot(&w);
    let e = d1.dot(&w);
    let denom = 1.0 - b * b;
    if denom.abs() < 1e-15 {
        return (c0 + c1) / 2.0;
    }
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    ((c0 + d0 * s) + (c1 + d1 * t)) / 2.0
}

/// Point minimizing the summed squared reprojection error over `views`,
/// seeded by the midpoint of the two most divergent rays.
pub fn triangulate_point(point_index: usize, views: &[View]) -> Result<Triangulation> {
    if views.len() < 2 {
        return Err(Error::InsufficientViews {
            point: point_index,
            views: views.len(),
        });
    }
    let rays: Vec<(Vec3, Vec3)> = views.iter().map(ray).collect();
    let mut best = (0, 1, -2.0f64);
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            // Smallest cosine = widest angle.
            let c = rays[i].1.dot(&rays[j].1);
            if best.2 < -1.0 || c < best.2 {
                best = (i, j, c);
            }
        }
    }
    let (i, j, cos) = best;
    let ill_conditioned = cos.clamp(-1.0, 1.0).acos().to_degrees() < MIN_RAY_ANGLE_DEG;
    let seed = midpoint(&rays[i].0, &rays[i].1, &rays[j].0, &rays[j].1);

    let residual_fn = |p: &DVector<f64>| -> DVector<f64> {
        let y = Vec3::new(p[0], p[1], p[2]);
        let mut out = Vec::with_capacity(2 * views.len());
        for v in views {
            match project(&v.intrinsics, &v.camera_from_world.transform_point(&y)) {
                Ok(uv) => {
                    out.push(v.uv.x - uv.x);
                    out.push(v.uv.y - uv.y);
                }
                Err(_) => {
                    out.push(crate::calib::reproj::BEHIND_CAMERA_SENTINEL);
                    out.push(crate::calib::reproj::BEHIND_CAMERA_SENTINEL);
                }
            }
        }
        DVector::from_vec(out)
    };
    let lsq = LeastSquaresProblem::new(residual_fn, DVector::from_column_slice(seed.as_slice()));
    let (p, _) = solve_lm(&lsq, &SolverOptions::default())?;
    Ok(Triangulation {
        point: Vec3::new(p[0], p[1], p[2]),
        ill_conditioned,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaeReport {
    /// Mean Euclidean distance (mm).
    pub mean_distance: f64,
    /// Mean squared distance (mm²).
    pub mean_squared: f64,
    pub ill_conditioned_points: usize,
}

/// Triangulates every target point from all its observations (across all
/// cameras) and compares with the known target geometry.
pub fn rae(x: &Htm, z: &[Htm], intrinsics: &[CameraIntrinsics], problem: &CalibProblem) -> Result<RaeReport> {
    let target: &TargetModel = problem
        .target
        .as_ref()
        .ok_or_else(|| Error::InvalidProblem("rae needs a target model".into()))?;
    let x_inv = x.inverse();
    let mut views: Vec<Vec<View>> = vec![Vec::new(); target.len()];
    for (d, cam) in problem.cameras.iter().enumerate() {
        for obs in &cam.observations {
            views[obs.point_index].push(View {
                uv: obs.uv,
                camera_from_world: z[d].compose(&problem.b_poses[obs.pose_index].compose(&x_inv)),
                intrinsics: intrinsics[d],
            });
        }
    }
    let mut dist = 0.0;
    let mut dist_sq = 0.0;
    let mut ill = 0;
    for (j, (truth, v)) in target.points().iter().zip(&views).enumerate() {
        let tri = triangulate_point(j, v)?;
        let e = (tri.point - truth).norm();
        dist += e;
        dist_sq += e * e;
        ill += usize::from(tri.ill_conditioned);
    }
    let m = target.len() as f64;
    Ok(RaeReport {
        mean_distance: dist / m,
        mean_squared: dist_sq / m,
        ill_conditioned_points: ill,
    })
}

/// Ground-truth errors for simulated data.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimErrors {
    pub e_rx: f64,
    pub e_rz: f64,
    pub e_tx: f64,
    pub e_tz: f64,
}

/// `‖R̂ − R‖_F` and `‖t̂ − t‖` for both `X` and `Z`.
pub fn sim_errors(est_x: &Htm, est_z: &Htm, true_x: &Htm, true_z: &Htm) -> SimErrors {
    let rd = |a: &Matrix3<f64>, b: &Matrix3<f64>| (a - b).norm();
    SimErrors {
        e_rx: rd(est_x.r.matrix(), true_x.r.matrix()),
        e_rz: rd(est_z.r.matrix(), true_z.r.matrix()),
        e_tx: (est_x.t - true_x.t).norm(),
        e_tz: (est_z.t - true_z.t).norm(),
    }
}

/// Computes every applicable metric. Reprojection metrics use `intrinsics`
/// when given (refined values), else the problem's own intrinsics, and are
/// skipped when observations or intrinsics are missing.
pub fn evaluate_all(
    x: &Htm,
    z: &[Htm],
    intrinsics: Option<&[CameraIntrinsics]>,
    problem: &CalibProblem,
    runtime_s: f64,
) -> Result<MetricsReport> {
    let per_camera = algebraic_errors(x, z, problem)?;
    let all = pooled(&per_camera);
    let has_reprojection = problem.validate_reprojection().is_ok();
    let (rrmse_px, rae_report) = if has_reprojection {
        let owned;
        let k = match intrinsics {
            Some(k) => k,
            None => {
                owned = problem.intrinsics()?;
                &owned[..]
            }
        };
        let rsse = compute_rsse(x, z, k, problem)?;
        let rae = rae(x, z, k, problem).ok();
        (rsse.rrmse_per_camera, rae)
    } else {
        (Vec::new(), None)
    };
    Ok(MetricsReport {
        e_r1: all.e_r1,
        e_r2_deg: all.e_r2_deg,
        e_t_mm2: all.e_t,
        e_c: all.e_c,
        per_camera,
        rrmse_px,
        rae_mm: rae_report.map(|r| r.mean_distance),
        rae_sq_mm2: rae_report.map(|r| r.mean_squared),
        runtime_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CalibProblem;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn small_rotation_of_x_on_identity_data() {
        let p = CalibProblem::from_pairs(vec![Htm::identity(); 3], vec![Htm::identity(); 3]).unwrap();
        let theta: f64 = 0.01;
        let x = Htm::new(Rotation3::about_axis(&Vec3::z(), theta), Vec3::zeros());
        let r1 = e_r1(&x, &[Htm::identity()], &p).unwrap()[0];
        assert_relative_eq!(r1, 4.0 * (1.0 - theta.cos()), epsilon = 1e-15);
        assert!((r1 - 2e-4).abs() < 1e-7);
        let r2 = e_r2(&x, &[Htm::identity()], &p).unwrap()[0];
        assert_relative_eq!(r2, theta.to_degrees(), epsilon = 1e-9);
    }

    #[test]
    fn one_degree_relative_rotation() {
        let b = Htm::new(
            Rotation3::about_axis(&Vec3::new(1.0, 2.0, -0.5), 0.7),
            Vec3::new(1.0, 2.0, 3.0),
        );
        let a = Htm::new(
            Rotation3::about_axis(&Vec3::new(0.3, -1.0, 0.2), 1.0_f64.to_radians()) * b.r,
            b.t,
        );
        let p = CalibProblem::from_pairs(vec![a; 3], vec![b; 3]).unwrap();
        let r2 = e_r2(&Htm::identity(), &[Htm::identity()], &p).unwrap()[0];
        assert_relative_eq!(r2, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn translation_offset_of_x() {
        let p = CalibProblem::from_pairs(vec![Htm::identity(); 3], vec![Htm::identity(); 3]).unwrap();
        let x = Htm::from_translation(Vec3::new(1.0, 1.0, 1.0));
        assert_relative_eq!(e_t(&x, &[Htm::identity()], &p).unwrap()[0], 3.0);
        assert_relative_eq!(e_c(&x, &[Htm::identity()], &p).unwrap()[0], 3.0);
    }

    #[test]
    fn half_turn_gives_max_rotation_error() {
        let r = Rotation3::about_axis(&Vec3::new(0.2, 0.5, 0.9), 1.1);
        let axis = r * Vec3::x(); // any axis works for a half turn
        let flipped = Rotation3::about_axis(&axis, PI) * r;
        let e = sim_errors(
            &Htm::new(flipped, Vec3::zeros()),
            &Htm::identity(),
            &Htm::new(r, Vec3::zeros()),
            &Htm::identity(),
        );
        assert_relative_eq!(e.e_rx, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(e.e_rz, 0.0);
    }

    #[test]
    fn two_views_on_optical_axes() {
        let k = CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0);
        // Camera 0 at origin looking +z; camera 1 at (100, 0, 100) looking −x.
        let cam0 = Htm::identity();
        let r1 = Rotation3::from_matrix(Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0)).unwrap();
        let c1 = Vec3::new(100.0, 0.0, 100.0);
        let cam1 = Htm::new(r1, -(r1 * c1));
        let truth = Vec3::new(0.0, 0.0, 100.0);
        assert!((cam1.transform_point(&truth) - Vec3::new(0.0, 0.0, 100.0)).norm() < 1e-12);
        let views = [
            View {
                uv: Vec2::new(320.0, 240.0),
                camera_from_world: cam0,
                intrinsics: k,
            },
            View {
                uv: Vec2::new(320.0, 240.0),
                camera_from_world: cam1,
                intrinsics: k,
            },
        ];
        let t = triangulate_point(0, &views).unwrap();
        assert!((t.point - truth).norm() < 1e-9);
        assert!(!t.ill_conditioned);
        assert!(matches!(
            triangulate_point(3, &views[..1]),
            Err(Error::InsufficientViews { point: 3, views: 1 })
        ));
    }

    #[test]
    fn parallel_rays_are_flagged() {
        let k = CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0);
        let truth = Vec3::new(0.0, 0.0, 1000.0);
        let views: Vec<View> = [0.0, 0.5]
            .iter()
            .map(|dx| {
                let cam = Htm::from_translation(Vec3::new(-dx, 0.0, 0.0));
                View {
                    uv: project(&k, &cam.transform_point(&truth)).unwrap(),
                    camera_from_world: cam,
                    intrinsics: k,
                }
            })
            .collect();
        let t = triangulate_point(0, &views).unwrap();
        assert!(t.ill_conditioned);
    }
}
