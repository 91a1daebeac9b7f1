//! Runs a roster of (method, rotation) pairs on one problem and writes the
//! comparison report.
//!
//! Reprojection methods follow the initialization chain
//! c2-simultaneous → rp1 → rp2; intermediate results are shared with any
//! roster entries that ask for them. A chained method's `time_s` includes
//! its predecessors, so it is the cost of producing that result from
//! scratch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::calib::axzb::{
    solve_c1_separable_with, solve_c1_simultaneous_with, solve_c2_separable_with, solve_c2_simultaneous_with,
};
use crate::calib::reproj::{solve_rp1_from_with, solve_rp2_from_with};
use crate::calib::{CalibProblem, CalibResult, Method, ReprojResult};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::io::{intrinsics_to_text, write_htm, write_text};
use crate::metrics::{evaluate_all, MetricsReport};
use crate::nlls::SolverOptions;
use crate::se3::{Htm, RotationKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub rotations: Vec<RotationKind>,
    pub solver_options: SolverOptions,
    /// Where the report and transform files go; `None` keeps results in memory.
    pub output_dir: Option<PathBuf>,
    /// Run rotation kinds concurrently. Output order is unchanged.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            rotations: RotationKind::ALL.to_vec(),
            solver_options: SolverOptions::default(),
            output_dir: None,
            parallel: false,
        }
    }
}

impl RunConfig {
    /// Checks the roster against the data before anything is solved.
    pub fn validate(&self, problem: &CalibProblem) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.rotations.is_empty() {
            return Err(Error::Config("no rotation parameterizations requested".into()));
        }
        self.solver_options.validate()?;
        problem.validate()?;
        problem
            .validate_algebraic()
            .map_err(|e| Error::Config(format!("every method needs A poses: {e}")))?;
        if let Some(m) = self.methods.iter().find(|m| !m.is_algebraic()) {
            let mut missing = Vec::new();
            if problem.target.is_none() {
                missing.push("target_file".to_string());
            }
            for (d, cam) in problem.cameras.iter().enumerate() {
                if cam.intrinsics.is_none() {
                    missing.push(format!("camera {d} intrinsics_file"));
                }
                if cam.observations.is_empty() {
                    missing.push(format!("camera {d} observations_file"));
                }
            }
            if !missing.is_empty() {
                return Err(Error::Config(format!(
                    "{m} requires intrinsics, observations and a target; missing: {}",
                    missing.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// Everything produced for one (method, rotation) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodOutcome {
    pub x: Htm,
    pub z: Vec<Htm>,
    /// Refined intrinsics (rp2 only).
    pub intrinsics: Option<Vec<CameraIntrinsics>>,
    pub metrics: MetricsReport,
    pub result: CalibResult,
    /// Reprojection sum of squares at the solver's own parameters, for
    /// reprojection methods and their c2-simultaneous seed.
    pub rsse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub method: Method,
    pub rotation: RotationKind,
    pub time_s: f64,
    pub outcome: std::result::Result<MethodOutcome, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    /// One row per (method, rotation), methods outermost, in config order.
    pub rows: Vec<RunRow>,
    pub n_cameras: usize,
}

impl RunReport {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.outcome.is_err())
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["method", "rotation", "time_s", "e_r1", "e_r2_deg", "e_t_mm2", "e_c"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..self.n_cameras).map(|d| format!("rrmse_px_{d}")));
        h.extend(["rae_mm", "rae_sq_mm2", "status"].iter().map(|s| s.to_string()));
        h
    }

    /// The comparison table. Unavailable values are left empty; `status`
    /// is `ok` or the failure message.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_header())?;
        for row in &self.rows {
            let mut rec = vec![
                row.method.name().to_string(),
                row.rotation.name().to_string(),
                row.time_s.to_string(),
            ];
            match &row.outcome {
                Ok(o) => {
                    let m = &o.metrics;
                    rec.extend([m.e_r1, m.e_r2_deg, m.e_t_mm2, m.e_c].iter().map(f64::to_string));
                    for d in 0..self.n_cameras {
                        rec.push(m.rrmse_px.get(d).map(f64::to_string).unwrap_or_default());
                    }
                    rec.push(m.rae_mm.map(|v| v.to_string()).unwrap_or_default());
                    rec.push(m.rae_sq_mm2.map(|v| v.to_string()).unwrap_or_default());
                    rec.push("ok".into());
                }
                Err(msg) => {
                    rec.extend(std::iter::repeat_n(String::new(), 4 + self.n_cameras + 2));
                    rec.push(format!("failed: {msg}"));
                }
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<7} {:<11} {:>9} {:>12} {:>10} {:>12} {:>12} {:>10}  status\n",
            "method", "rotation", "time_s", "e_r1", "e_r2_deg", "e_t_mm2", "e_c", "rrmse_px"
        );
        for row in &self.rows {
            match &row.outcome {
                Ok(o) => {
                    let m = &o.metrics;
                    let rr = m
                        .rrmse_px
                        .iter()
                        .map(|v| format!("{v:.4}"))
                        .collect::<Vec<_>>()
                        .join("/");
                    let _ = writeln!(
                        s,
                        "{:<7} {:<11} {:>9.4} {:>12.4e} {:>10.4} {:>12.4e} {:>12.4e} {:>10}  ok",
                        row.method.name(),
                        row.rotation.name(),
                        row.time_s,
                        m.e_r1,
                        m.e_r2_deg,
                        m.e_t_mm2,
                        m.e_c,
                        if rr.is_empty() { "-".into() } else { rr }
                    );
                }
                Err(msg) => {
                    let _ = writeln!(
                        s,
                        "{:<7} {:<11} {:>9.4}  failed: {msg}",
                        row.method.name(),
                        row.rotation.name(),
                        row.time_s
                    );
                }
            }
        }
        s
    }

    /// Writes `report.csv` plus `<method>_<rotation>_X.txt`,
    /// `..._Z<d>.txt` and, for rp2, `..._intrinsics_<d>.txt`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_text(&dir.join("report.csv"), &self.to_csv()?)?;
        for row in &self.rows {
            let Ok(o) = &row.outcome else { continue };
            let stem = format!("{}_{}", row.method.name(), row.rotation.name());
            write_htm(&dir.join(format!("{stem}_X.txt")), &o.x)?;
            for (d, z) in o.z.iter().enumerate() {
                write_htm(&dir.join(format!("{stem}_Z{d}.txt")), z)?;
            }
            for (d, k) in o.intrinsics.iter().flatten().enumerate() {
                write_text(&dir.join(format!("{stem}_intrinsics_{d}.txt")), &intrinsics_to_text(k))?;
            }
        }
        Ok(())
    }
}

/// Results cached along one rotation kind's chain, with their cumulative times.
#[derive(Default)]
struct Chain {
    c2_sim: Option<(Result<CalibResult, String>, f64)>,
    rp1: Option<(Result<ReprojResult, String>, f64)>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T, String>, f64) {
    let start = Instant::now();
    let r = f().map_err(|e| e.to_string());
    (r, start.elapsed().as_secs_f64())
}

impl Chain {
    fn c2_sim(
        &mut self,
        p: &CalibProblem,
        kind: RotationKind,
        o: &SolverOptions,
    ) -> (Result<CalibResult, String>, f64) {
        self.c2_sim
            .get_or_insert_with(|| timed(|| solve_c2_simultaneous_with(p, kind, o)))
            .clone()
    }

    fn rp1(&mut self, p: &CalibProblem, kind: RotationKind, o: &SolverOptions) -> (Result<ReprojResult, String>, f64) {
        if self.rp1.is_none() {
            let (seed, t_seed) = self.c2_sim(p, kind, o);
            let entry = match seed {
                Ok(seed) => {
                    let (r, t) = timed(|| solve_rp1_from_with(p, &seed, o));
                    (r, t + t_seed)
                }
                Err(e) => (Err(format!("c2-sim seed failed: {e}")), t_seed),
            };
            self.rp1 = Some(entry);
        }
        self.rp1.clone().expect("just set")
    }

    fn rp2(&mut self, p: &CalibProblem, kind: RotationKind, o: &SolverOptions) -> (Result<ReprojResult, String>, f64) {
        let (seed, t_seed) = self.rp1(p, kind, o);
        match seed {
            Ok(seed) => {
                let (r, t) = timed(|| solve_rp2_from_with(p, &seed, o));
                (r, t + t_seed)
            }
            Err(e) => (Err(format!("rp1 seed failed: {e}")), t_seed),
        }
    }
}

fn outcome_from_calib(problem: &CalibProblem, r: CalibResult, runtime: f64) -> Result<MethodOutcome, String> {
    let metrics = evaluate_all(&r.x, &r.z, None, problem, runtime).map_err(|e| e.to_string())?;
    let rsse = matches!(r.method, Method::C2Sim | Method::C2Sep)
        .then(|| crate::calib::reproj::rsse_at_params(problem, &r).ok().map(|s| s.rsse))
        .flatten();
    Ok(MethodOutcome {
        x: r.x,
        z: r.z.clone(),
        intrinsics: None,
        metrics,
        result: r,
        rsse,
    })
}

fn outcome_from_reproj(problem: &CalibProblem, r: ReprojResult, runtime: f64) -> Result<MethodOutcome, String> {
    let metrics = evaluate_all(&r.base.x, &r.base.z, r.refined_intrinsics.as_deref(), problem, runtime)
        .map_err(|e| e.to_string())?;
    Ok(MethodOutcome {
        x: r.base.x,
        z: r.base.z.clone(),
        intrinsics: r.refined_intrinsics.clone(),
        metrics,
        rsse: Some(r.rsse),
        result: r.base,
    })
}

fn run_kind(problem: &CalibProblem, methods: &[Method], kind: RotationKind, o: &SolverOptions) -> Vec<RunRow> {
    let mut chain = Chain::default();
    methods
        .iter()
        .map(|&method| {
            let (outcome, time_s) = match method {
                Method::C2Sim => {
                    let (r, t) = chain.c2_sim(problem, kind, o);
                    (r.and_then(|r| outcome_from_calib(problem, r, t)), t)
                }
                Method::Rp1 => {
                    let (r, t) = chain.rp1(problem, kind, o);
                    (r.and_then(|r| outcome_from_reproj(problem, r, t)), t)
                }
                Method::Rp2 => {
                    let (r, t) = chain.rp2(problem, kind, o);
                    (r.and_then(|r| outcome_from_reproj(problem, r, t)), t)
                }
                Method::C1Sim | Method::C1Sep | Method::C2Sep => {
                    let (r, t) = timed(|| match method {
                        Method::C1Sim => solve_c1_simultaneous_with(problem, kind, o),
                        Method::C1Sep => solve_c1_separable_with(problem, kind, o),
                        _ => solve_c2_separable_with(problem, kind, o),
                    });
                    (r.and_then(|r| outcome_from_calib(problem, r, t)), t)
                }
            };
            RunRow {
                method,
                rotation: kind,
                time_s,
                outcome,
            }
        })
        .collect()
}

/// Validates the roster, runs every (method, rotation) pair and, when an
/// output directory is configured, writes the report and transforms.
/// Individual failures are recorded in their rows.
pub fn run(config: &RunConfig, problem: &CalibProblem) -> Result<RunReport> {
    config.validate(problem)?;
    let per_kind = |kind: &RotationKind| run_kind(problem, &config.methods, *kind, &config.solver_options);
    let by_kind: Vec<Vec<RunRow>> = if config.parallel {
        config.rotations.par_iter().map(per_kind).collect()
    } else {
        config.rotations.iter().map(per_kind).collect()
    };
    // Reorder to methods-outermost.
    let mut cells: BTreeMap<(usize, usize), RunRow> = BTreeMap::new();
    for (ki, rows) in by_kind.into_iter().enumerate() {
        for (mi, row) in rows.into_iter().enumerate() {
            cells.insert((mi, ki), row);
        }
    }
    let report = RunReport {
        rows: cells.into_values().collect(),
        n_cameras: problem.n_cameras(),
    };
    if let Some(dir) = &config.output_dir {
        report.write_outputs(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::make_chessboard;
    use crate::simulate::{default_synth_intrinsics, default_synth_truth, generate, synth_camera_dataset, SimConfig};

    fn camera_problem() -> CalibProblem {
        let board = make_chessboard(6, 8, 10.0).unwrap();
        let (x, z) = default_synth_truth();
        synth_camera_dataset(12, &board, &default_synth_intrinsics(), &x, &z, 0.3, 5)
            .unwrap()
            .0
    }

    #[test]
    fn noise_free_roster_is_exact() {
        let p = generate(&SimConfig {
            seed: 4,
            ..SimConfig::default()
        })
        .unwrap()
        .to_problem();
        let cfg = RunConfig {
            methods: vec![Method::C1Sim, Method::C1Sep, Method::C2Sim, Method::C2Sep],
            ..RunConfig::default()
        };
        let rep = run(&cfg, &p).unwrap();
        assert_eq!(rep.rows.len(), 12);
        for row in &rep.rows {
            let o = row.outcome.as_ref().unwrap();
            assert!(
                o.metrics.e_c < 1e-10,
                "{:?} {:?}: {}",
                row.method,
                row.rotation,
                o.metrics.e_c
            );
            assert!(o.metrics.rrmse_px.is_empty());
        }
        assert_eq!(rep.rows[1].method, Method::C1Sim);
        assert_eq!(rep.rows[1].rotation, RotationKind::AxisAngle);
    }

    #[test]
    fn reprojection_roster_needs_data() {
        let p = generate(&SimConfig::default()).unwrap().to_problem();
        let cfg = RunConfig {
            methods: vec![Method::C1Sim, Method::Rp2],
            ..RunConfig::default()
        };
        match run(&cfg, &p) {
            Err(Error::Config(m)) => assert!(m.contains("rp2") && m.contains("intrinsics"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chain_dominance_and_report_schema() {
        let p = camera_problem();
        let cfg = RunConfig {
            rotations: vec![RotationKind::Quaternion],
            ..RunConfig::default()
        };
        let rep = run(&cfg, &p).unwrap();
        let rsse = |m: Method| {
            rep.rows
                .iter()
                .find(|r| r.method == m)
                .and_then(|r| r.outcome.as_ref().unwrap().rsse)
                .unwrap()
        };
        assert!(rsse(Method::Rp2) <= rsse(Method::Rp1));
        assert!(rsse(Method::Rp1) <= rsse(Method::C2Sim));
        let csv = rep.to_csv().unwrap();
        assert!(
            csv.starts_with("method,rotation,time_s,e_r1,e_r2_deg,e_t_mm2,e_c,rrmse_px_0,rae_mm,rae_sq_mm2,status\n")
        );
        assert_eq!(csv.lines().count(), 1 + 6);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")));
    }

    #[test]
    fn parallel_matches_sequential() {
        let p = camera_problem();
        let mut cfg = RunConfig {
            methods: vec![Method::C2Sep, Method::Rp1],
            ..RunConfig::default()
        };
        let seq = run(&cfg, &p).unwrap();
        cfg.parallel = true;
        let par = run(&cfg, &p).unwrap();
        for (a, b) in seq.rows.iter().zip(&par.rows) {
            assert_eq!((a.method, a.rotation), (b.method, b.rotation));
            assert_eq!(a.outcome.as_ref().unwrap().x, b.outcome.as_ref().unwrap().x);
        }
    }

    #[test]
    fn outputs_are_written() {
        let p = generate(&SimConfig::default()).unwrap().to_problem();
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            methods: vec![Method::C1Sep],
            rotations: vec![RotationKind::EulerXyz],
            output_dir: Some(dir.path().to_path_buf()),
            ..RunConfig::default()
        };
        run(&cfg, &p).unwrap();
        for f in ["report.csv", "c1-sep_euler_X.txt", "c1-sep_euler_Z0.txt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
    }
}
