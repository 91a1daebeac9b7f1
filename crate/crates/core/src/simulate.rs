//! Synthetic ground-truth datasets, quaternion noise and noise sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Open01, StandardNormal};
use rayon::prelude::*;

use crate::calib::{solve_algebraic, CalibProblem, CameraData, Method};
use crate::camera::{project, CameraIntrinsics, Observation, TargetModel, Vec2};
use crate::error::{Error, Result};
use crate::metrics::{sim_errors, SimErrors};
use crate::se3::{quaternion_from_rot, Htm, Rotation3, RotationKind, Vec3};

/// Number of noise levels in a sweep.
pub const ETA_STEPS: usize = 19;
/// Largest quaternion noise magnitude.
pub const ETA_MAX: f64 = 0.25;

const MAX_POSE_ATTEMPTS: usize = 1000;

/// Interval from which translation components are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TranslationScale {
    /// (0, 1)
    Unit,
    /// (0, 1000), i.e. millimetres on a desk-sized workspace.
    Millimeter,
}

impl TranslationScale {
    pub fn factor(self) -> f64 {
        match self {
            Self::Unit => 1.0,
            Self::Millimeter => 1000.0,
        }
    }
}

impl fmt::Display for TranslationScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unit => "unit",
            Self::Millimeter => "mm",
        })
    }
}

impl FromStr for TranslationScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unit" => Ok(Self::Unit),
            "mm" | "millimeter" => Ok(Self::Millimeter),
            other => Err(Error::Config(format!(
                "unknown translation scale '{other}' (expected unit or mm)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub n_poses: usize,
    pub translation_scale: TranslationScale,
    /// Quaternion noise magnitude applied to the `B_i` rotations.
    pub eta: f64,
    pub seed: u64,
    pub trials: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_poses: 25,
            translation_scale: TranslationScale::Unit,
            eta: 0.0,
            seed: 0,
            trials: 10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_poses < 3 {
            return Err(Error::Config(format!("need at least 3 poses, got {}", self.n_poses)));
        }
        if !(0.0..=ETA_MAX).contains(&self.eta) {
            return Err(Error::Config(format!(
                "eta must lie in [0, {ETA_MAX}], got {}",
                self.eta
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimDataset {
    pub a_poses: Vec<Htm>,
    pub b_poses: Vec<Htm>,
    pub truth_x: Htm,
    pub truth_z: Htm,
    pub config: SimConfig,
}

impl SimDataset {
    /// Single-camera problem with full visibility.
    pub fn to_problem(&self) -> CalibProblem {
        CalibProblem {
            b_poses: self.b_poses.clone(),
            cameras: vec![CameraData::from_a_poses(
                self.a_poses.iter().copied().enumerate().collect(),
            )],
            target: None,
        }
    }
}

/// Uniformly distributed rotation (normalized 4-D Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = Quaternion::new(q[0], q[1], q[2], q[3]);
        if q.norm() > 1e-9 {
            let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
            return Rotation3::from_matrix_unchecked(m);
        }
    }
}

fn random_translation<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| {
        let u: f64 = rng.sample(Open01);
        u * scale
    })
}

/// Perturbs a rotation by adding `Uniform(−η, η)` to each quaternion
/// component and renormalizing.
pub fn add_quaternion_noise<R: Rng + ?Sized>(r: &Rotation3, eta: f64, rng: &mut R) -> Rotation3 {
    if eta == 0.0 {
        return *r;
    }
    let [w, x, y, z] = quaternion_from_rot(r);
    loop {
        let mut u = [0.0; 4];
        for v in &mut u {
            *v = rng.random_range(-eta..=eta);
        }
        let q = Quaternion::new(w + u[0], x + u[1], y + u[2], z + u[3]);
        if q.norm() >= 1e-9 {
            let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
            return Rotation3::from_matrix_unchecked(m);
        }
    }
}

/// Generates `A_i`, `X`, `Z` at random, derives `B_i = Z⁻¹ A_i X` and then
/// perturbs the `B_i` rotations. Noise is drawn from a separate stream, so
/// datasets that differ only in `eta` share the same noise-free poses.
pub fn generate(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);
    let scale = config.translation_scale.factor();
    let draw = |rng: &mut ChaCha8Rng| Htm::new(random_rotation(rng), random_translation(rng, scale));

    let truth_x = draw(&mut rng);
    let truth_z = draw(&mut rng);
    let z_inv = truth_z.inverse();
    let a_poses: Vec<Htm> = (0..config.n_poses).map(|_| draw(&mut rng)).collect();
    let b_poses = a_poses
        .iter()
        .map(|a| {
            let b = z_inv.compose(&a.compose(&truth_x));
            Htm::new(add_quaternion_noise(&b.r, config.eta, &mut noise_rng), b.t)
        })
        .collect();
    Ok(SimDataset {
        a_poses,
        b_poses,
        truth_x,
        truth_z,
        config: *config,
    })
}

/// The sweep's noise levels: `0.25·k/19` for `k = 1..=19`.
pub fn eta_grid() -> Vec<f64> {
    (1..=ETA_STEPS).map(|k| ETA_MAX * k as f64 / ETA_STEPS as f64).collect()
}

/// One (solver, η, trial) cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub solver: Method,
    pub rotation: RotationKind,
    pub eta: f64,
    pub trial: usize,
    /// `None` when the solver failed on this cell.
    pub errors: Option<SimErrors>,
    pub time_s: f64,
    pub failure: Option<String>,
}

/// Trial mean for one (solver, rotation, η).
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub solver: Method,
    pub rotation: RotationKind,
    pub eta: f64,
    pub mean: SimErrors,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    /// Ordered by (η, trial, solver).
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: [&str; 9] = [
    "solver", "rotation", "eta", "trial", "e_RX", "e_RZ", "e_tX", "e_tZ", "time_s",
];

impl SweepReport {
    /// Per-(solver, rotation, η) means over the successful trials.
    pub fn mean_curves(&self) -> Vec<CurvePoint> {
        let mut out: Vec<CurvePoint> = Vec::new();
        for row in &self.rows {
            let idx = out
                .iter()
                .position(|c| c.solver == row.solver && c.rotation == row.rotation && c.eta == row.eta);
            let point = match idx {
                Some(i) => &mut out[i],
                None => {
                    out.push(CurvePoint {
                        solver: row.solver,
                        rotation: row.rotation,
                        eta: row.eta,
                        mean: SimErrors::default(),
                        successes: 0,
                        failures: 0,
                    });
                    out.last_mut().unwrap()
                }
            };
            match &row.errors {
                Some(e) => {
                    point.mean.e_rx += e.e_rx;
                    point.mean.e_rz += e.e_rz;
                    point.mean.e_tx += e.e_tx;
                    point.mean.e_tz += e.e_tz;
                    point.successes += 1;
                }
                None => point.failures += 1,
            }
        }
        for p in &mut out {
            let n = p.successes as f64;
            if p.successes == 0 {
                p.mean = SimErrors {
                    e_rx: f64::NAN,
                    e_rz: f64::NAN,
                    e_tx: f64::NAN,
                    e_tz: f64::NAN,
                };
            } else {
                p.mean.e_rx /= n;
                p.mean.e_rz /= n;
                p.mean.e_tx /= n;
                p.mean.e_tz /= n;
            }
        }
        out.sort_by(|a, b| {
            (a.solver, a.rotation.name())
                .cmp(&(b.solver, b.rotation.name()))
                .then(a.eta.total_cmp(&b.eta))
        });
        out
    }

    /// Writes one CSV row per cell; failed cells carry `NaN` errors.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SWEEP_CSV_HEADER)?;
        for row in &self.rows {
            let e = row.errors.unwrap_or(SimErrors {
                e_rx: f64::NAN,
                e_rz: f64::NAN,
                e_tx: f64::NAN,
                e_tz: f64::NAN,
            });
            w.write_record([
                row.solver.name().to_string(),
                row.rotation.name().to_string(),
                row.eta.to_string(),
                row.trial.to_string(),
                e.e_rx.to_string(),
                e.e_rz.to_string(),
                e.e_tx.to_string(),
                e.e_tz.to_string(),
                row.time_s.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv output>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Runs every solver on every (η, trial) dataset. Trial `t` uses seed
/// `config_base.seed ^ t`, shared across noise levels. Cells run in
/// parallel; rows come back in deterministic order.
pub fn run_sweep(config_base: &SimConfig, solvers: &[(Method, RotationKind)]) -> Result<SweepReport> {
    if solvers.is_empty() {
        return Err(Error::Config("a sweep needs at least one solver".into()));
    }
    if let Some((m, _)) = solvers.iter().find(|(m, _)| !m.is_algebraic()) {
        return Err(Error::Config(format!("{m} cannot run on simulated pose data")));
    }
    config_base.validate()?;
    let cells: Vec<(f64, usize)> = eta_grid()
        .into_iter()
        .flat_map(|eta| (0..config_base.trials).map(move |t| (eta, t)))
        .collect();
    let rows: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(eta, trial)| {
            let cfg = SimConfig {
                eta,
                seed: config_base.seed ^ trial as u64,
                ..*config_base
            };
            let ds = generate(&cfg)?;
            let problem = ds.to_problem();
            Ok(solvers
                .iter()
                .map(|&(solver, rotation)| {
                    let start = Instant::now();
                    let outcome = solve_algebraic(&problem, solver, rotation);
                    let time_s = start.elapsed().as_secs_f64();
                    let (errors, failure) = match outcome {
                        Ok(r) => (Some(sim_errors(&r.x, &r.z[0], &ds.truth_x, &ds.truth_z)), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    SweepRow {
                        solver,
                        rotation,
                        eta,
                        trial,
                        errors,
                        time_s,
                        failure,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        rows: rows.into_iter().flatten().collect(),
    })
}

/// Ground truth behind a synthetic camera dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraTruth {
    pub x: Htm,
    pub z: Htm,
    pub intrinsics: CameraIntrinsics,
    /// Noise-free world→camera transforms.
    pub a_poses: Vec<Htm>,
}

/// Default synthetic camera: 1280×960 with mild rational distortion.
pub fn default_synth_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 800.0,
        fy: 800.0,
        cx: 640.0,
        cy: 480.0,
        dist: [-0.12, 0.08, 0.0008, -0.0006, -0.02, 0.0, 0.0, 0.0],
    }
}

/// Fixed, well-conditioned `X` and `Z` (mm) for synthetic camera data.
pub fn default_synth_truth() -> (Htm, Htm) {
    let x = Htm::new(
        Rotation3::about_axis(&Vec3::new(0.2, -0.4, 1.0), 0.6),
        Vec3::new(400.0, -150.0, 80.0),
    );
    let z = Htm::new(
        Rotation3::about_axis(&Vec3::new(1.0, 0.3, -0.2), 1.1),
        Vec3::new(30.0, -20.0, 60.0),
    );
    (x, z)
}

/// Random camera pose looking at the target from within a 45° cone above
/// its plane, 250–450 mm away.
fn sample_camera_pose(rng: &mut ChaCha8Rng, target: &TargetModel) -> Htm {
    let centroid = target.centroid();
    let tilt = rng.random_range(0.0..std::f64::consts::FRAC_PI_4);
    let azimuth = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let dist = rng.random_range(250.0..450.0);
    let dir = Vec3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), tilt.cos());
    let center = centroid + dir * dist;
    let jitter = Vec3::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), 0.0);
    let z_axis = (centroid + jitter - center).normalize();
    let roll = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let helper = if z_axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let x0 = helper.cross(&z_axis).normalize();
    let y0 = z_axis.cross(&x0);
    let x_axis = x0 * roll.cos() + y0 * roll.sin();
    let y_axis = z_axis.cross(&x_axis);
    // Rows of the world→camera rotation are the camera axes in world frame.
    let r = Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), z_axis.transpose()]);
    let r = Rotation3::from_matrix_unchecked(r);
    Htm::new(r, -(r * center))
}

/// Builds a single-camera problem with image observations of `target`.
///
/// Camera poses are sampled around the target, then `B_i = Z⁻¹ A_i X`
/// (equivalently `A_i = Z B_i X⁻¹`). Every corner must project in front of
/// the camera and inside the `2cx × 2cy` image at every pose. Pixel noise
/// is isotropic Gaussian with standard deviation `pixel_noise_sigma`.
pub fn synth_camera_dataset(
    n_poses: usize,
    target: &TargetModel,
    k: &CameraIntrinsics,
    truth_x: &Htm,
    truth_z: &Htm,
    pixel_noise_sigma: f64,
    seed: u64,
) -> Result<(CalibProblem, CameraTruth)> {
    if n_poses < 3 {
        return Err(Error::Config(format!("need at least 3 poses, got {n_poses}")));
    }
    if !(pixel_noise_sigma >= 0.0 && pixel_noise_sigma.is_finite()) {
        return Err(Error::Config(format!("invalid pixel noise {pixel_noise_sigma}")));
    }
    k.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, pixel_noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (w, h) = (2.0 * k.cx, 2.0 * k.cy);
    let z_inv = truth_z.inverse();

    let mut a_poses = Vec::with_capacity(n_poses);
    let mut observations = Vec::with_capacity(n_poses * target.len());
    for i in 0..n_poses {
        let mut found = None;
        for _ in 0..MAX_POSE_ATTEMPTS {
            let a = sample_camera_pose(&mut rng, target);
            let pixels: Option<Vec<Vec2>> = target
                .points()
                .iter()
                .map(|p| {
                    project(k, &a.transform_point(p))
                        .ok()
                        .filter(|uv| uv.x >= 0.0 && uv.x <= w && uv.y >= 0.0 && uv.y <= h)
                })
                .collect();
            if let Some(px) = pixels {
                found = Some((a, px));
                break;
            }
        }
        let (a, pixels) = found.ok_or_else(|| {
            Error::GeometryError(format!(
                "no pose with the whole target in view after {MAX_POSE_ATTEMPTS} attempts (pose {i})"
            ))
        })?;
        for (j, uv) in pixels.into_iter().enumerate() {
            let noisy = if pixel_noise_sigma > 0.0 {
                uv + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                uv
            };
            observations.push(Observation {
                pose_index: i,
                point_index: j,
                uv: noisy,
            });
        }
        a_poses.push(a);
    }
    let b_poses: Vec<Htm> = a_poses.iter().map(|a| z_inv.compose(&a.compose(truth_x))).collect();
    let mut camera = CameraData::from_a_poses(a_poses.iter().copied().enumerate().collect());
    camera.intrinsics = Some(*k);
    camera.observations = observations;
    let problem = CalibProblem {
        b_poses,
        cameras: vec![camera],
        target: Some(target.clone()),
    };
    problem.validate()?;
    Ok((
        problem,
        CameraTruth {
            x: *truth_x,
            z: *truth_z,
            intrinsics: *k,
            a_poses,
        },
    ))
}
