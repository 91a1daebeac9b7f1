//! Solvers for the algebraic costs
//! `c1 = Σ ‖A_i X − Z B_i‖²_F` and `c2 = Σ ‖A_i − Z B_i X⁻¹‖²_F`,
//! both jointly over rotation and translation and in the separable
//! rotation-then-translation form. Multi-camera problems weight camera `d`
//! by `w_d = min_s / |S_d|`.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::{CalibProblem, CalibResult, Layout, Method};
use crate::error::{Error, Result};
use crate::nlls::{solve_lm, LeastSquaresProblem, SolverOptions, SolverReport, Termination};
use crate::se3::{param_from_rot, rotation_matrix, Htm, Rotation3, RotationKind, Vec3};

/// Which algebraic objective to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    C1,
    C2,
}

const DEGENERATE_RATIO: f64 = 1e-8;

/// `(d, i, sqrt(w_d), A_{i,d}, B_i)` for every visible pair.
fn pairs(problem: &CalibProblem) -> Vec<(usize, f64, Htm, Htm)> {
    let w = problem.weights();
    let mut out = Vec::new();
    for (d, cam) in problem.cameras.iter().enumerate() {
        let sw = w[d].sqrt();
        for i in &cam.visibility {
            out.push((d, sw, cam.a_poses[i], problem.b_poses[*i]));
        }
    }
    out
}

fn push_diff(out: &mut Vec<f64>, sw: f64, lhs: &Htm, rhs: &Htm) {
    let l = lhs.upper_3x4();
    let r = rhs.upper_3x4();
    out.extend(l.iter().zip(&r).map(|(a, b)| sw * (a - b)));
}

fn push_rot_diff(out: &mut Vec<f64>, sw: f64, lhs: &Matrix3<f64>, rhs: &Matrix3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            out.push(sw * (lhs[(i, j)] - rhs[(i, j)]));
        }
    }
}

fn nan_residuals(len: usize) -> DVector<f64> {
    DVector::from_element(len, f64::NAN)
}

fn check_convergence(report: &SolverReport, n: usize) -> Result<()> {
    if report.termination == Termination::Stalled && report.final_cost > 1e6 * n as f64 {
        return Err(Error::ConvergenceFailure(format!(
            "solver stalled at cost {:e}",
            report.final_cost
        )));
    }
    Ok(())
}

/// Closed-form rotation estimate from the null space of the stacked
/// Kronecker system `(I ⊗ R_A) vec(R_X) − (R_Bᵀ ⊗ I) vec(R_Z) = 0`,
/// each block projected onto SO(3). Returns `(R_X, [R_Z])`, or `None` if
/// the null vector is degenerate.
pub(crate) fn linear_rotation_estimate(problem: &CalibProblem) -> Option<(Matrix3<f64>, Vec<Matrix3<f64>>)> {
    let pairs = pairs(problem);
    let q = problem.n_cameras();
    let mut m = DMatrix::<f64>::zeros(9 * pairs.len(), 9 * (1 + q));
    for (p, (d, sw, a, b)) in pairs.iter().enumerate() {
        let ra = a.r.matrix();
        let rb = b.r.matrix();
        let zc = 9 * (1 + d);
        for r in 0..3 {
            for c in 0..3 {
                let row = 9 * p + r + 3 * c;
                for k in 0..3 {
                    // (A X)_rc = Σ_k A_rk X_kc ; (Z B)_rc = Σ_k Z_rk B_kc
                    m[(row, k + 3 * c)] += sw * ra[(r, k)];
                    m[(row, zc + r + 3 * k)] -= sw * rb[(k, c)];
                }
            }
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a: &(usize, &f64), b: &(usize, &f64)| a.1.total_cmp(b.1))?;
    let v = v_t.row(imin).transpose();
    let block = |s: usize| Matrix3::from_column_slice(&v.as_slice()[9 * s..9 * s + 9]);
    let sign = block(0).determinant().signum();
    if sign == 0.0 || !sign.is_finite() {
        return None;
    }
    let project = |s: usize| *Rotation3::nearest(&(block(s) * sign)).matrix();
    Some((project(0), (0..q).map(|d| project(1 + d)).collect()))
}

/// Rotations of the linear estimate in the unknowns of `cost`.
fn rotation_seed(problem: &CalibProblem, cost: CostKind) -> Option<(Matrix3<f64>, Vec<Matrix3<f64>>)> {
    let (rx, rz) = linear_rotation_estimate(problem)?;
    let first = match cost {
        CostKind::C1 => rx,
        CostKind::C2 => rx.transpose(),
    };
    Some((first, rz))
}

fn rotation_params(kind: RotationKind, r: &Matrix3<f64>) -> Vec<f64> {
    param_from_rot(&Rotation3::from_matrix_unchecked(*r), kind)
        .as_slice()
        .to_vec()
}

/// Picks the lower-cost outcome; the identity-start run wins ties and is
/// the error reported when both fail.
fn better<T>(primary: Result<T>, alternate: Option<Result<T>>, cost: impl Fn(&T) -> f64) -> Result<T> {
    match (primary, alternate) {
        (Ok(p), Some(Ok(a))) => Ok(if cost(&a) < cost(&p) { a } else { p }),
        (Err(_), Some(Ok(a))) => Ok(a),
        (p, _) => p,
    }
}

fn simultaneous(
    problem: &CalibProblem,
    kind: RotationKind,
    cost: CostKind,
    options: &SolverOptions,
) -> Result<CalibResult> {
    problem.validate_algebraic()?;
    let layout = Layout::full(kind, problem.n_cameras());
    let pairs = pairs(problem);
    let n_res = 12 * pairs.len();
    let residual_fn = |p: &DVector<f64>| -> DVector<f64> {
        let p = p.as_slice();
        let Ok(x) = layout.htm(p, 0) else {
            return nan_residuals(n_res);
        };
        let z: Result<Vec<Htm>> = (0..layout.cameras).map(|d| layout.htm(p, 1 + d)).collect();
        let Ok(z) = z else { return nan_residuals(n_res) };
        let mut out = Vec::with_capacity(n_res);
        for (d, sw, a, b) in &pairs {
            match cost {
                CostKind::C1 => push_diff(&mut out, *sw, &a.compose(&x), &z[*d].compose(b)),
                CostKind::C2 => push_diff(&mut out, *sw, a, &z[*d].compose(&b.compose(&x))),
            }
        }
        DVector::from_vec(out)
    };
    let run = |start: DVector<f64>| -> Result<(DVector<f64>, SolverReport)> {
        let lsq = LeastSquaresProblem::new(&residual_fn, start);
        let (params, report) = solve_lm(&lsq, options)?;
        check_convergence(&report, problem.n_poses())?;
        Ok((params, report))
    };
    let seeded = rotation_seed(problem, cost).map(|(first, rz)| {
        let mut start = layout.identity();
        let r = kind.len();
        let t = {
            let (m, rhs) = translation_system(problem, &rz, cost);
            solve_translations(&m, &rhs).ok()
        };
        for (s, rot) in std::iter::once(&first).chain(&rz).enumerate() {
            let o = layout.slot(s);
            start.rows_mut(o, r).copy_from_slice(&rotation_params(kind, rot));
            if let Some(t) = &t {
                start.rows_mut(o + r, 3).copy_from(&t.rows(3 * s, 3));
            }
        }
        run(start)
    });
    let (params, report) = better(run(layout.identity()), seeded, |(_, rep)| rep.final_cost)?;
    let p = params.as_slice();
    let first = layout.htm(p, 0)?;
    let z = (0..layout.cameras)
        .map(|d| layout.htm(p, 1 + d))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibResult {
        x: if cost == CostKind::C1 { first } else { first.inverse() },
        z,
        rotation_kind: kind,
        method: if cost == CostKind::C1 {
            Method::C1Sim
        } else {
            Method::C2Sim
        },
        report,
        params: params.as_slice().to_vec(),
    })
}

/// Jointly minimizes `Σ_d Σ_{i∈S_d} w_d ‖A_{i,d} X − Z_d B_i‖²_F`.
///
/// LM runs from identity rotations with zero translations and again from a
/// closed-form linear estimate; the lower final cost wins. The identity
/// start alone can settle in a half-turn local minimum.
pub fn solve_c1_simultaneous(problem: &CalibProblem, kind: RotationKind) -> Result<CalibResult> {
    solve_c1_simultaneous_with(problem, kind, &SolverOptions::default())
}

pub fn solve_c1_simultaneous_with(
    problem: &CalibProblem,
    kind: RotationKind,
    options: &SolverOptions,
) -> Result<CalibResult> {
    simultaneous(problem, kind, CostKind::C1, options)
}

/// Jointly minimizes `Σ w_d ‖A_{i,d} − Z_d B_i X̃‖²_F` over `X̃ = X⁻¹`.
/// The returned `x` is `X̃⁻¹`.
pub fn solve_c2_simultaneous(problem: &CalibProblem, kind: RotationKind) -> Result<CalibResult> {
    solve_c2_simultaneous_with(problem, kind, &SolverOptions::default())
}

pub fn solve_c2_simultaneous_with(
    problem: &CalibProblem,
    kind: RotationKind,
    options: &SolverOptions,
) -> Result<CalibResult> {
    simultaneous(problem, kind, CostKind::C2, options)
}

type RotationStage = (Matrix3<f64>, Vec<Matrix3<f64>>, DVector<f64>, SolverReport);

/// Rotation stage of the separable methods: returns `R_first` (R_X for c1,
/// R_X̃ for c2), the `R_Z` list, the raw rotation parameters and the report.
fn separable_rotations(
    problem: &CalibProblem,
    kind: RotationKind,
    cost: CostKind,
    options: &SolverOptions,
) -> Result<RotationStage> {
    let layout = Layout::rotations_only(kind, problem.n_cameras());
    let pairs = pairs(problem);
    let n_res = 9 * pairs.len();
    let r = kind.len();
    let residual_fn = |p: &DVector<f64>| -> DVector<f64> {
        let p = p.as_slice();
        let rots: Result<Vec<Matrix3<f64>>> = (0..=layout.cameras)
            .map(|s| rotation_matrix(kind, &p[s * r..(s + 1) * r]))
            .collect();
        let Ok(rots) = rots else { return nan_residuals(n_res) };
        let mut out = Vec::with_capacity(n_res);
        for (d, sw, a, b) in &pairs {
            let ra = a.r.matrix();
            let rb = b.r.matrix();
            let rz = &rots[1 + d];
            match cost {
                CostKind::C1 => push_rot_diff(&mut out, *sw, &(ra * rots[0]), &(rz * rb)),
                CostKind::C2 => push_rot_diff(&mut out, *sw, ra, &(rz * rb * rots[0])),
            }
        }
        DVector::from_vec(out)
    };
    let run = |start: DVector<f64>| -> Result<(DVector<f64>, SolverReport)> {
        let lsq = LeastSquaresProblem::new(&residual_fn, start);
        let (params, report) = solve_lm(&lsq, options)?;
        check_convergence(&report, problem.n_poses())?;
        Ok((params, report))
    };
    let seeded = rotation_seed(problem, cost).map(|(first, rz)| {
        let start: Vec<f64> = std::iter::once(&first)
            .chain(&rz)
            .flat_map(|rot| rotation_params(kind, rot))
            .collect();
        run(DVector::from_vec(start))
    });
    let (params, report) = better(run(layout.identity()), seeded, |(_, rep)| rep.final_cost)?;
    let p = params.as_slice();
    let first = rotation_matrix(kind, &p[0..r])?;
    let rz = (0..layout.cameras)
        .map(|d| rotation_matrix(kind, &p[(1 + d) * r..(2 + d) * r]))
        .collect::<Result<Vec<_>>>()?;
    Ok((first, rz, params, report))
}

/// Stacked weighted linear system for the translation stage.
///
/// Unknowns are `[t_first, t_Z0, ..., t_Z(q-1)]`.
pub(crate) fn translation_system(
    problem: &CalibProblem,
    rz: &[Matrix3<f64>],
    cost: CostKind,
) -> (DMatrix<f64>, DVector<f64>) {
    let pairs = pairs(problem);
    let cols = 3 * (1 + rz.len());
    let mut m = DMatrix::zeros(3 * pairs.len(), cols);
    let mut rhs = DVector::zeros(3 * pairs.len());
    for (row, (d, sw, a, b)) in pairs.iter().enumerate() {
        let o = 3 * row;
        let zc = 3 * (1 + d);
        let ra = a.r.matrix();
        let (coef_first, coef_z, target) = match cost {
            // R_A t_X − t_Z = R_Z t_B − t_A
            CostKind::C1 => (*ra, -Matrix3::identity(), rz[*d] * b.t - a.t),
            // R_Z R_B t_X̃ + t_Z = t_A − R_Z t_B
            CostKind::C2 => (rz[*d] * b.r.matrix(), Matrix3::identity(), a.t - rz[*d] * b.t),
        };
        m.view_mut((o, 0), (3, 3)).copy_from(&(coef_first * *sw));
        m.view_mut((o, zc), (3, 3)).copy_from(&(coef_z * *sw));
        rhs.rows_mut(o, 3).copy_from(&(target * *sw));
    }
    (m, rhs)
}

/// Least-squares solve of the translation system by QR, after an SVD rank
/// check (`σ_min < 1e-8 σ_max` means the motion cannot fix the translations).
pub(crate) fn solve_translations(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let sv = m.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin >= DEGENERATE_RATIO * smax) || smax == 0.0 {
        return Err(Error::DegenerateMotion {
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let qr = m.clone().qr();
    let qtb = qr.q().tr_mul(rhs);
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or(Error::DegenerateMotion { ratio: smin / smax })
}

fn separable(
    problem: &CalibProblem,
    kind: RotationKind,
    cost: CostKind,
    options: &SolverOptions,
) -> Result<CalibResult> {
    problem.validate_algebraic()?;
    let (r_first, rz, rot_params, report) = separable_rotations(problem, kind, cost, options)?;
    let (m, rhs) = translation_system(problem, &rz, cost);
    let t = solve_translations(&m, &rhs)?;

    let first = Htm::new(Rotation3::from_matrix_unchecked(r_first), Vec3::new(t[0], t[1], t[2]));
    let z: Vec<Htm> = rz
        .iter()
        .enumerate()
        .map(|(d, r)| {
            let o = 3 * (1 + d);
            Htm::new(
                Rotation3::from_matrix_unchecked(*r),
                Vec3::new(t[o], t[o + 1], t[o + 2]),
            )
        })
        .collect();

    let r = kind.len();
    let mut params = Vec::with_capacity((r + 3) * (1 + z.len()));
    for s in 0..=z.len() {
        params.extend_from_slice(&rot_params.as_slice()[s * r..(s + 1) * r]);
        params.extend_from_slice(&t.as_slice()[3 * s..3 * s + 3]);
    }
    Ok(CalibResult {
        x: if cost == CostKind::C1 { first } else { first.inverse() },
        z,
        rotation_kind: kind,
        method: if cost == CostKind::C1 {
            Method::C1Sep
        } else {
            Method::C2Sep
        },
        report,
        params,
    })
}

/// Rotations first (`Σ ‖R_A R_X − R_Z R_B‖²`), then the translations from
/// the linear system `R_A t_X − t_Z = R_Z t_B − t_A`.
pub fn solve_c1_separable(problem: &CalibProblem, kind: RotationKind) -> Result<CalibResult> {
    solve_c1_separable_with(problem, kind, &SolverOptions::default())
}

pub fn solve_c1_separable_with(
    problem: &CalibProblem,
    kind: RotationKind,
    options: &SolverOptions,
) -> Result<CalibResult> {
    separable(problem, kind, CostKind::C1, options)
}

/// Rotations first (`Σ ‖R_A − R_Z R_B R_X̃‖²`), then the translations from
/// `R_Z R_B t_X̃ + t_Z = t_A − R_Z t_B`.
pub fn solve_c2_separable(problem: &CalibProblem, kind: RotationKind) -> Result<CalibResult> {
    solve_c2_separable_with(problem, kind, &SolverOptions::default())
}

pub fn solve_c2_separable_with(
    problem: &CalibProblem,
    kind: RotationKind,
    options: &SolverOptions,
) -> Result<CalibResult> {
    separable(problem, kind, CostKind::C2, options)
}

/// Weighted objective value of `c1` or `c2` at the given transforms.
pub fn evaluate_cost(x: &Htm, z: &[Htm], problem: &CalibProblem, which: CostKind) -> f64 {
    let x_inv = x.inverse();
    let w = problem.weights();
    let mut total = 0.0;
    for (d, cam) in problem.cameras.iter().enumerate() {
        for i in &cam.visibility {
            let a = &cam.a_poses[i];
            let b = &problem.b_poses[*i];
            let (l, r) = match which {
                CostKind::C1 => (a.compose(x).upper_3x4(), z[d].compose(b).upper_3x4()),
                CostKind::C2 => (a.upper_3x4(), z[d].compose(&b.compose(&x_inv)).upper_3x4()),
            };
            total += w[d] * l.iter().zip(&r).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CameraData;
    use crate::simulate::{generate, SimConfig, TranslationScale};

    fn sim(seed: u64) -> crate::simulate::SimDataset {
        generate(&SimConfig {
            n_poses: 25,
            translation_scale: TranslationScale::Unit,
            eta: 0.0,
            seed,
            trials: 1,
        })
        .unwrap()
    }

    fn identity_pose_problem() -> CalibProblem {
        let poses: Vec<Htm> = [(0.3, 1.0, 0.2), (-0.7, 0.1, 0.5), (1.2, -0.4, 0.3)]
            .iter()
            .map(|&(a, b, c)| Htm::new(Rotation3::about_axis(&Vec3::new(a, b, c), a + b), Vec3::new(c, a, b)))
            .collect();
        CalibProblem::from_pairs(poses.clone(), poses).unwrap()
    }

    #[test]
    fn identity_fixed_point() {
        let p = identity_pose_problem();
        for kind in RotationKind::ALL {
            let r = solve_c1_simultaneous(&p, kind).unwrap();
            assert!(r.report.final_cost < 1e-12);
            assert!((r.x.to_matrix4() - nalgebra::Matrix4::identity()).amax() < 1e-9);
            let r = solve_c2_simultaneous(&p, kind).unwrap();
            assert!(r.report.final_cost < 1e-12);
            assert!((r.z[0].to_matrix4() - nalgebra::Matrix4::identity()).amax() < 1e-9);
        }
    }

    #[test]
    fn pure_identity_motion_is_degenerate() {
        let p = CalibProblem::from_pairs(vec![Htm::identity(); 4], vec![Htm::identity(); 4]).unwrap();
        assert!(matches!(
            solve_c1_separable(&p, RotationKind::AxisAngle),
            Err(Error::DegenerateMotion { .. })
        ));
        assert!(matches!(
            solve_c2_separable(&p, RotationKind::Quaternion),
            Err(Error::DegenerateMotion { .. })
        ));
    }

    #[test]
    fn evaluate_cost_translation_offset_adds_n() {
        let ds = sim(3);
        let p = ds.to_problem();
        assert!(evaluate_cost(&ds.truth_x, &[ds.truth_z], &p, CostKind::C1) < 1e-20);
        assert!(evaluate_cost(&ds.truth_x, &[ds.truth_z], &p, CostKind::C2) < 1e-20);
        let mut x = ds.truth_x;
        x.t.x += 1.0;
        let c = evaluate_cost(&x, &[ds.truth_z], &p, CostKind::C1);
        assert!((c - 25.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn separable_translation_matches_lm_on_translation_cost() {
        // Stage two is linear; LM on the same residuals must land on the QR solution.
        let ds = generate(&SimConfig {
            eta: 0.1,
            ..SimConfig::default()
        })
        .unwrap();
        let p = ds.to_problem();
        let rz = vec![*ds.truth_z.r.matrix()];
        for cost in [CostKind::C1, CostKind::C2] {
            let (m, rhs) = translation_system(&p, &rz, cost);
            let t = solve_translations(&m, &rhs).unwrap();
            let m2 = m.clone();
            let rhs2 = rhs.clone();
            let lsq = LeastSquaresProblem::new(move |x: &DVector<f64>| &m2 * x - &rhs2, DVector::zeros(6));
            let (t_lm, _) = solve_lm(&lsq, &SolverOptions::default()).unwrap();
            assert!((&t - &t_lm).amax() < 1e-9, "{}", (&t - &t_lm).amax());
            // Normal equations hold at the QR solution.
            let grad = m.tr_mul(&(&m * &t - &rhs));
            assert!(grad.amax() < 1e-9);
        }
    }

    #[test]
    fn duplicated_camera_matches_single_camera() {
        let ds = generate(&SimConfig {
            eta: 0.05,
            seed: 11,
            ..SimConfig::default()
        })
        .unwrap();
        let single = ds.to_problem();
        let mut double = single.clone();
        double.cameras.push(double.cameras[0].clone());
        let a = solve_c1_simultaneous(&single, RotationKind::AxisAngle).unwrap();
        let b = solve_c1_simultaneous(&double, RotationKind::AxisAngle).unwrap();
        assert!((b.z[0].to_matrix4() - b.z[1].to_matrix4()).amax() < 1e-8);
        assert!((a.x.to_matrix4() - b.x.to_matrix4()).amax() < 1e-8);
    }

    #[test]
    fn partial_visibility_uses_weights() {
        let ds = sim(5);
        let mut p = ds.to_problem();
        let cam = &p.cameras[0];
        let subset: std::collections::BTreeMap<_, _> = cam
            .a_poses
            .iter()
            .filter(|(i, _)| *i % 2 == 0)
            .map(|(i, a)| (*i, *a))
            .collect();
        p.cameras.push(CameraData::from_a_poses(subset));
        assert_eq!(p.weights(), vec![13.0 / 25.0, 1.0]);
        let r = solve_c1_separable(&p, RotationKind::EulerXyz).unwrap();
        assert!((r.x.to_matrix4() - ds.truth_x.to_matrix4()).amax() < 1e-8);
    }
}
