//! Reprojection-error solvers.
//!
//! `rp1` refines `X̃ = X⁻¹` and every `Z_d` by minimizing the pixel distance
//! between detected corners and corners projected through `Z_d · B_i · X̃`,
//! with intrinsics held fixed. `rp2` additionally frees all twelve intrinsic
//! parameters of every camera. The seeding chain is c2-simultaneous → rp1 →
//! rp2, each stage starting from the previous stage's raw parameter vector.

use nalgebra::DVector;

use super::{axzb, CalibProblem, CalibResult, Layout, Method};
use crate::camera::{project, CameraIntrinsics, Observation, INTRINSICS_LEN};
use crate::error::{Error, Result};
use crate::nlls::{solve_lm, LeastSquaresProblem, SolverOptions};
use crate::se3::{Htm, RotationKind, Vec3};

/// Residual assigned to both coordinates of an observation whose point
/// lands behind the camera.
pub const BEHIND_CAMERA_SENTINEL: f64 = 1e6;

const MAX_RRMSE: f64 = 1e4;

#[derive(Clone, Debug, PartialEq)]
pub struct ReprojResult {
    pub base: CalibResult,
    /// Present only for rp2.
    pub refined_intrinsics: Option<Vec<CameraIntrinsics>>,
    /// Unweighted sum of squared pixel residuals over all cameras.
    pub rsse: f64,
    pub rrmse_per_camera: Vec<f64>,
}

/// Result of a pure reprojection-error evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RsseReport {
    pub rsse: f64,
    pub rsse_per_camera: Vec<f64>,
    pub rrmse_per_camera: Vec<f64>,
    /// Observations that projected behind their camera and contributed the
    /// sentinel residual.
    pub behind_camera: usize,
}

/// Per-camera observation data captured once per solve.
struct CameraTerms<'a> {
    sw: f64,
    observations: &'a [Observation],
}

/// Appends `(u, v)` residuals for one camera. `x_tilde` maps world to base.
fn push_camera_residuals(
    out: &mut Vec<f64>,
    points: &[Vec3],
    b_poses: &[Htm],
    z: &Htm,
    x_tilde: &Htm,
    k: &CameraIntrinsics,
    terms: &CameraTerms<'_>,
) -> usize {
    let mut behind = 0;
    let mut cache: Option<(usize, Htm)> = None;
    for obs in terms.observations {
        let cam = match cache {
            Some((i, t)) if i == obs.pose_index => t,
            _ => {
                let t = z.compose(&b_poses[obs.pose_index].compose(x_tilde));
                cache = Some((obs.pose_index, t));
                t
            }
        };
        match project(k, &cam.transform_point(&points[obs.point_index])) {
            Ok(uv) => {
                out.push(terms.sw * (obs.uv.x - uv.x));
                out.push(terms.sw * (obs.uv.y - uv.y));
            }
            Err(_) => {
                behind += 1;
                out.push(BEHIND_CAMERA_SENTINEL);
                out.push(BEHIND_CAMERA_SENTINEL);
            }
        }
    }
    behind
}

fn summarize(problem: &CalibProblem, residuals: &[f64], behind: usize) -> RsseReport {
    let mut offset = 0;
    let mut per_camera = Vec::with_capacity(problem.n_cameras());
    let mut rrmse = Vec::with_capacity(problem.n_cameras());
    for cam in &problem.cameras {
        let len = 2 * cam.observations.len();
        let s: f64 = residuals[offset..offset + len].iter().map(|r| r * r).sum();
        offset += len;
        per_camera.push(s);
        rrmse.push((s / cam.observations.len() as f64).sqrt());
    }
    RsseReport {
        rsse: per_camera.iter().sum(),
        rsse_per_camera: per_camera,
        rrmse_per_camera: rrmse,
        behind_camera: behind,
    }
}

/// Unweighted reprojection error of every observation at the given
/// transforms and intrinsics.
pub fn compute_rsse(x: &Htm, z: &[Htm], intrinsics: &[CameraIntrinsics], problem: &CalibProblem) -> Result<RsseReport> {
    let target = problem
        .target
        .as_ref()
        .ok_or_else(|| Error::InvalidProblem("no target model".into()))?;
    if z.len() != problem.n_cameras() || intrinsics.len() != problem.n_cameras() {
        return Err(Error::InvalidProblem(
            "one Z and one intrinsics set per camera required".into(),
        ));
    }
    Ok(rsse_with_x_tilde(&x.inverse(), z, intrinsics, problem, target.points()))
}

fn rsse_with_x_tilde(
    x_tilde: &Htm,
    z: &[Htm],
    intrinsics: &[CameraIntrinsics],
    problem: &CalibProblem,
    points: &[Vec3],
) -> RsseReport {
    let mut out = Vec::new();
    let mut behind = 0;
    for (d, cam) in problem.cameras.iter().enumerate() {
        let terms = CameraTerms {
            sw: 1.0,
            observations: &cam.observations,
        };
        behind += push_camera_residuals(
            &mut out,
            points,
            &problem.b_poses,
            &z[d],
            x_tilde,
            &intrinsics[d],
            &terms,
        );
    }
    summarize(problem, &out, behind)
}

fn refine(
    problem: &CalibProblem,
    kind: RotationKind,
    seed: &[f64],
    free_intrinsics: bool,
    options: &SolverOptions,
) -> Result<ReprojResult> {
    problem.validate_reprojection()?;
    let target = problem.target.as_ref().expect("validated");
    let points = target.points();
    let fixed_k = problem.intrinsics()?;
    let q = problem.n_cameras();
    let layout = Layout {
        with_intrinsics: free_intrinsics,
        ..Layout::full(kind, q)
    };
    let weights = problem.weights();
    let terms: Vec<CameraTerms<'_>> = problem
        .cameras
        .iter()
        .zip(&weights)
        .map(|(cam, w)| CameraTerms {
            sw: w.sqrt(),
            observations: &cam.observations,
        })
        .collect();
    let n_res: usize = 2 * problem.cameras.iter().map(|c| c.observations.len()).sum::<usize>();

    let unpack = |p: &[f64]| -> Result<(Htm, Vec<Htm>, Vec<CameraIntrinsics>)> {
        let x_tilde = layout.htm(p, 0)?;
        let z = (0..q).map(|d| layout.htm(p, 1 + d)).collect::<Result<Vec<_>>>()?;
        let k = if free_intrinsics {
            (0..q).map(|d| layout.intrinsics(p, d)).collect()
        } else {
            fixed_k.clone()
        };
        Ok((x_tilde, z, k))
    };

    let residual_fn = |p: &DVector<f64>| -> DVector<f64> {
        let Ok((x_tilde, z, k)) = unpack(p.as_slice()) else {
            return DVector::from_element(n_res, f64::NAN);
        };
        let mut out = Vec::with_capacity(n_res);
        for d in 0..q {
            push_camera_residuals(&mut out, points, &problem.b_poses, &z[d], &x_tilde, &k[d], &terms[d]);
        }
        DVector::from_vec(out)
    };

    let mut init = DVector::zeros(layout.len());
    let base_len = layout.block() * (1 + q);
    init.rows_mut(0, base_len).copy_from_slice(&seed[..base_len]);
    if free_intrinsics {
        for (d, k) in fixed_k.iter().enumerate() {
            let o = layout.intrinsics_offset(d);
            init.rows_mut(o, INTRINSICS_LEN).copy_from_slice(&k.to_array());
        }
    }

    let lsq = LeastSquaresProblem::new(residual_fn, init);
    let (params, report) = solve_lm(&lsq, options)?;
    let p = params.as_slice();
    let (x_tilde, z, k) = unpack(p)?;

    let summary = rsse_with_x_tilde(&x_tilde, &z, &k, problem, points);
    if let Some(worst) = summary.rrmse_per_camera.iter().copied().find(|r| !(*r <= MAX_RRMSE)) {
        return Err(Error::ConvergenceFailure(format!("final rrmse {worst:e} px")));
    }
    if free_intrinsics {
        if let Some(d) = k.iter().position(|k| !(k.fx > 0.0 && k.fy > 0.0)) {
            return Err(Error::NegativeFocal { camera: d });
        }
    }

    Ok(ReprojResult {
        base: CalibResult {
            x: x_tilde.inverse(),
            z,
            rotation_kind: kind,
            method: if free_intrinsics { Method::Rp2 } else { Method::Rp1 },
            report,
            params: p.to_vec(),
        },
        refined_intrinsics: free_intrinsics.then_some(k),
        rsse: summary.rsse,
        rrmse_per_camera: summary.rrmse_per_camera,
    })
}

/// Fixed-intrinsics reprojection refinement seeded by c2-simultaneous.
pub fn solve_rp1(problem: &CalibProblem, kind: RotationKind) -> Result<ReprojResult> {
    let seed = axzb::solve_c2_simultaneous(problem, kind)?;
    solve_rp1_from(problem, &seed)
}

/// rp1 from an explicit c2-simultaneous result (same rotation kind).
pub fn solve_rp1_from(problem: &CalibProblem, seed: &CalibResult) -> Result<ReprojResult> {
    solve_rp1_from_with(problem, seed, &SolverOptions::default())
}

pub fn solve_rp1_from_with(
    problem: &CalibProblem,
    seed: &CalibResult,
    options: &SolverOptions,
) -> Result<ReprojResult> {
    check_seed(seed, &[Method::C2Sim, Method::C2Sep, Method::Rp1, Method::Rp2])?;
    refine(problem, seed.rotation_kind, &seed.params, false, options)
}

/// Reprojection refinement with free intrinsics, seeded by rp1.
pub fn solve_rp2(problem: &CalibProblem, kind: RotationKind) -> Result<ReprojResult> {
    let rp1 = solve_rp1(problem, kind)?;
    solve_rp2_from(problem, &rp1)
}

/// rp2 from an rp1 result; the intrinsics start at the problem's values.
pub fn solve_rp2_from(problem: &CalibProblem, seed: &ReprojResult) -> Result<ReprojResult> {
    solve_rp2_from_with(problem, seed, &SolverOptions::default())
}

pub fn solve_rp2_from_with(
    problem: &CalibProblem,
    seed: &ReprojResult,
    options: &SolverOptions,
) -> Result<ReprojResult> {
    check_seed(&seed.base, &[Method::Rp1])?;
    refine(problem, seed.base.rotation_kind, &seed.base.params, true, options)
}

fn check_seed(seed: &CalibResult, allowed: &[Method]) -> Result<()> {
    if !allowed.contains(&seed.method) {
        return Err(Error::InvalidProblem(format!(
            "{} cannot seed this method (its parameters do not describe X⁻¹)",
            seed.method
        )));
    }
    Ok(())
}

/// Reprojection error at the raw parameters of an X⁻¹-parameterized result.
pub fn rsse_at_params(problem: &CalibProblem, result: &CalibResult) -> Result<RsseReport> {
    check_seed(result, &[Method::C2Sim, Method::C2Sep, Method::Rp1])?;
    let target = problem
        .target
        .as_ref()
        .ok_or_else(|| Error::InvalidProblem("no target model".into()))?;
    let layout = Layout::full(result.rotation_kind, problem.n_cameras());
    let x_tilde = layout.htm(&result.params, 0)?;
    let z = (0..problem.n_cameras())
        .map(|d| layout.htm(&result.params, 1 + d))
        .collect::<Result<Vec<_>>>()?;
    Ok(rsse_with_x_tilde(
        &x_tilde,
        &z,
        &problem.intrinsics()?,
        problem,
        target.points(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CameraData;
    use crate::camera::{make_chessboard, Vec2};
    use crate::se3::Rotation3;

    #[test]
    fn identity_observation_has_zero_residual() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 320.0, 240.0);
        let target = crate::camera::TargetModel::new(vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.1, 0.0, 1.0),
            Vec3::new(0.0, 0.1, 1.0),
            Vec3::new(0.1, 0.1, 1.2),
        ])
        .unwrap();
        let obs: Vec<Observation> = (0..3)
            .map(|i| Observation {
                pose_index: i,
                point_index: 0,
                uv: Vec2::new(320.0, 240.0),
            })
            .collect();
        let problem = CalibProblem {
            b_poses: vec![Htm::identity(); 3],
            cameras: vec![CameraData {
                a_poses: Default::default(),
                intrinsics: Some(k),
                observations: obs,
                visibility: vec![0, 1, 2],
            }],
            target: Some(target),
        };
        let i = Htm::identity();
        let r = compute_rsse(&i, &[i], &[k], &problem).unwrap();
        assert_eq!(r.rsse, 0.0);
    }

    #[test]
    fn uniform_pixel_offset_gives_unit_rrmse() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 320.0, 240.0);
        let board = make_chessboard(3, 4, 10.0).unwrap();
        let cam = Htm::new(Rotation3::identity(), Vec3::new(-15.0, -10.0, 300.0));
        let b_poses = vec![Htm::identity(); 3];
        let mut obs = Vec::new();
        for i in 0..3 {
            for (j, p) in board.points().iter().enumerate() {
                let uv = project(&k, &cam.transform_point(p)).unwrap();
                obs.push(Observation {
                    pose_index: i,
                    point_index: j,
                    uv: uv + Vec2::new(1.0, 0.0),
                });
            }
        }
        let problem = CalibProblem {
            b_poses,
            cameras: vec![CameraData {
                a_poses: Default::default(),
                intrinsics: Some(k),
                observations: obs,
                visibility: vec![0, 1, 2],
            }],
            target: Some(board),
        };
        // Z·B·X⁻¹ = cam with B = I, X = I.
        let r = compute_rsse(&Htm::identity(), &[cam], &[k], &problem).unwrap();
        assert!((r.rrmse_per_camera[0] - 1.0).abs() < 1e-9);
        assert!((r.rsse - 36.0).abs() < 1e-7);
    }

    #[test]
    fn behind_camera_counts_sentinels() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 320.0, 240.0);
        let board = make_chessboard(2, 2, 10.0).unwrap();
        let obs = (0..3)
            .map(|i| Observation {
                pose_index: i,
                point_index: 0,
                uv: Vec2::new(0.0, 0.0),
            })
            .collect();
        let problem = CalibProblem {
            b_poses: vec![Htm::identity(); 3],
            cameras: vec![CameraData {
                a_poses: Default::default(),
                intrinsics: Some(k),
                observations: obs,
                visibility: vec![0, 1, 2],
            }],
            target: Some(board),
        };
        let z = Htm::from_translation(Vec3::new(0.0, 0.0, -5.0));
        let r = compute_rsse(&Htm::identity(), &[z], &[k], &problem).unwrap();
        assert_eq!(r.behind_camera, 3);
        assert!(r.rsse >= 3.0 * 2.0 * BEHIND_CAMERA_SENTINEL.powi(2));
    }

    #[test]
    fn wrong_seed_method_rejected() {
        let dummy = CalibResult {
            x: Htm::identity(),
            z: vec![Htm::identity()],
            rotation_kind: RotationKind::EulerXyz,
            method: Method::C1Sim,
            report: crate::nlls::SolverReport {
                initial_cost: 0.0,
                final_cost: 0.0,
                iterations: 0,
                termination: crate::nlls::Termination::GradTol,
                cost_trace: vec![0.0],
            },
            params: vec![0.0; 12],
        };
        assert!(check_seed(&dummy, &[Method::C2Sim]).is_err());
    }
}
