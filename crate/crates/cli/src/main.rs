//! `rwhec` — robot-world / hand-eye calibration from the command line.
//!
//! ```text
//! rwhec simulate --eta 0 --seed 1 --out data/
//! rwhec calibrate --manifest data/manifest.txt --methods c1-sim,c2-sep --out results/
//! rwhec sweep --solvers c1-sim,c2-sim --seed 7 --out sweep/
//! rwhec synth-camera --board 6x8x10 --noise-px 0.5 --out cam/
//! rwhec evaluate --manifest cam/manifest.txt --x results/rp1_euler_X.txt --z results/rp1_euler_Z0.txt
//! ```

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use rwhec::calib::Method;
use rwhec::camera::make_chessboard;
use rwhec::io::{dump_dataset, load_dataset, read_htm, read_intrinsics, write_text};
use rwhec::metrics::{evaluate_all, sim_errors};
use rwhec::pipeline::{run, RunConfig};
use rwhec::simulate::{
    default_synth_intrinsics, default_synth_truth, generate, run_sweep, synth_camera_dataset, SimConfig,
    TranslationScale,
};
use rwhec::{Error, Result, RotationKind, SolverOptions};

#[derive(Parser, Debug)]
#[command(name = "rwhec", version, about = "Robot-world / hand-eye calibration (AX = ZB)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate random pose datasets with known X and Z.
    Simulate(SimulateArgs),
    /// Run algebraic solvers over the 19-level quaternion noise grid.
    Sweep(SweepArgs),
    /// Calibrate a dataset described by a manifest.
    Calibrate(CalibrateArgs),
    /// Compute the metrics of a given X and Z on a dataset.
    Evaluate(EvaluateArgs),
    /// Generate a camera dataset with chessboard observations.
    SynthCamera(SynthCameraArgs),
}

/// Comma-separated list parsed element-wise.
#[derive(Clone, Debug)]
struct List<T>(Vec<T>);

impl<T: FromStr<Err = Error>> FromStr for List<T> {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let items = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| T::from_str(t).map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(List(items))
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Translation interval: unit (0,1) or mm (0,1000).
    #[arg(long, default_value = "unit")]
    scale: TranslationScale,
    /// Quaternion noise magnitude on the B rotations, in [0, 0.25].
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Number of robot poses per dataset.
    #[arg(long, default_value_t = 25)]
    poses: usize,
    /// More than one trial writes trial_NNNN subdirectories (seed ^ trial).
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Base RNG seed; equal seeds give identical data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Algebraic methods to run, e.g. c1-sim,c2-sep.
    #[arg(long, default_value = "c1-sim,c1-sep,c2-sim,c2-sep")]
    solvers: List<Method>,
    /// Rotation parameterizations to run.
    #[arg(long, default_value = "euler,axis-angle,quaternion")]
    rotations: List<RotationKind>,
    /// Translation interval: unit (0,1) or mm (0,1000).
    #[arg(long, default_value = "unit")]
    scale: TranslationScale,
    /// Number of robot poses per dataset.
    #[arg(long, default_value_t = 25)]
    poses: usize,
    /// Trials per noise level.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Base RNG seed; equal seeds give identical data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for sweep.csv and sweep_means.csv; CSV goes to stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Dataset manifest (key = value text file).
    #[arg(long)]
    manifest: PathBuf,
    /// Methods to run, in report order.
    #[arg(long, default_value = "c1-sim,c1-sep,c2-sim,c2-sep,rp1,rp2")]
    methods: List<Method>,
    /// Rotation parameterizations to run.
    #[arg(long, default_value = "euler,axis-angle,quaternion")]
    rotations: List<RotationKind>,
    /// Directory for report.csv and the estimated transforms.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run rotation parameterizations concurrently (timings become less faithful).
    #[arg(long)]
    parallel: bool,
    /// Cap on accepted LM steps per solve.
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Dataset manifest (key = value text file).
    #[arg(long)]
    manifest: PathBuf,
    /// HTM file with X.
    #[arg(long)]
    x: PathBuf,
    /// One HTM file per camera with Z_d.
    #[arg(long, num_args = 1.., required = true)]
    z: Vec<PathBuf>,
    /// Intrinsics to use instead of the manifest's (one per camera).
    #[arg(long, num_args = 1..)]
    intrinsics: Vec<PathBuf>,
    /// Directory for evaluation.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Board geometry `ROWSxCOLSxSQUARE_MM`.
#[derive(Clone, Copy, Debug)]
struct Board {
    rows: usize,
    cols: usize,
    square: f64,
}

impl FromStr for Board {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split('x').collect();
        let bad = || format!("board must look like 6x8x10 (rows x cols x square mm), got '{s}'");
        let [r, c, q] = parts.as_slice() else { return Err(bad()) };
        Ok(Board {
            rows: r.parse().map_err(|_| bad())?,
            cols: c.parse().map_err(|_| bad())?,
            square: q.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Args, Debug)]
struct SynthCameraArgs {
    /// Number of robot poses per dataset.
    #[arg(long, default_value_t = 25)]
    poses: usize,
    /// Chessboard corners as ROWSxCOLSxSQUARE_MM.
    #[arg(long, default_value = "6x8x10")]
    board: Board,
    /// Standard deviation of the Gaussian pixel noise.
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    /// Base RNG seed; equal seeds give identical data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale the fx written to the intrinsics file (the data keep the true fx).
    #[arg(long, default_value_t = 1.0)]
    fx_scale: f64,
    /// Omit A files so loading has to estimate the camera poses.
    #[arg(long)]
    no_a_files: bool,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    for trial in 0..args.trials {
        let cfg = SimConfig {
            n_poses: args.poses,
            translation_scale: args.scale,
            eta: args.eta,
            seed: args.seed ^ trial as u64,
            trials: 1,
        };
        let ds = generate(&cfg)?;
        let dir = if args.trials == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("trial_{trial:04}"))
        };
        let manifest = dump_dataset(&dir, &ds.to_problem(), Some(&ds.truth_x), Some(&[ds.truth_z]))?;
        println!("{}", manifest.display());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let solvers: Vec<(Method, RotationKind)> = args
        .solvers
        .0
        .iter()
        .flat_map(|m| args.rotations.0.iter().map(move |k| (*m, *k)))
        .collect();
    let base = SimConfig {
        n_poses: args.poses,
        translation_scale: args.scale,
        eta: 0.0,
        seed: args.seed,
        trials: args.trials,
    };
    let report = run_sweep(&base, &solvers)?;
    let failures = report.rows.iter().filter(|r| r.errors.is_none()).count();
    if failures > 0 {
        warn!("{failures} sweep cells failed; their errors are NaN in the CSV");
    }
    match args.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
                path: dir.clone(),
                source,
            })?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            write_text(&dir.join("sweep.csv"), &String::from_utf8_lossy(&buf))?;
            let mut means = String::from("solver,rotation,eta,e_RX,e_RZ,e_tX,e_tZ,failures\n");
            for c in report.mean_curves() {
                means.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    c.solver, c.rotation, c.eta, c.mean.e_rx, c.mean.e_rz, c.mean.e_tx, c.mean.e_tz, c.failures
                ));
            }
            write_text(&dir.join("sweep_means.csv"), &means)?;
            info!("wrote {} rows to {}", report.rows.len(), dir.display());
        }
        None => report.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<bool> {
    let dataset = load_dataset(&args.manifest)?;
    let mut options = SolverOptions::default();
    if let Some(n) = args.max_iterations {
        options.max_iterations = n;
    }
    let config = RunConfig {
        methods: args.methods.0,
        rotations: args.rotations.0,
        solver_options: options,
        output_dir: args.out,
        parallel: args.parallel,
    };
    if config.methods.contains(&Method::Rp2) {
        warn!(
            "rp2 refines all 12 intrinsics per camera without priors; with an already good \
             intrinsic calibration this can slightly increase the reconstruction error (rae)"
        );
    }
    let report = run(&config, &dataset.problem).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{msg} (manifest {})", args.manifest.display())),
        other => other,
    })?;
    print!("{}", report.to_table());
    if let (Some(tx), Some(tz)) = (&dataset.truth_x, &dataset.truth_z) {
        for row in &report.rows {
            if let Ok(o) = &row.outcome {
                let e = sim_errors(&o.x, &o.z[0], tx, &tz[0]);
                info!(
                    "{} {}: e_RX {:e} e_RZ {:e} e_tX {:e} e_tZ {:e}",
                    row.method, row.rotation, e.e_rx, e.e_rz, e.e_tx, e.e_tz
                );
            }
        }
    }
    if let Some(dir) = &config.output_dir {
        println!("wrote {}", dir.join("report.csv").display());
    }
    Ok(!report.all_failed())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    let problem = &dataset.problem;
    let x = read_htm(&args.x)?;
    let z = args.z.iter().map(|p| read_htm(p)).collect::<Result<Vec<_>>>()?;
    if z.len() != problem.n_cameras() {
        return Err(Error::Config(format!(
            "{} Z files given for {} cameras",
            z.len(),
            problem.n_cameras()
        )));
    }
    let intrinsics = args
        .intrinsics
        .iter()
        .map(|p| read_intrinsics(p))
        .collect::<Result<Vec<_>>>()?;
    if !intrinsics.is_empty() && intrinsics.len() != problem.n_cameras() {
        return Err(Error::Config("give one intrinsics file per camera".into()));
    }
    let k = (!intrinsics.is_empty()).then_some(intrinsics.as_slice());
    let m = evaluate_all(&x, &z, k, problem, 0.0)?;
    let mut header = vec!["e_r1".to_string(), "e_r2_deg".into(), "e_t_mm2".into(), "e_c".into()];
    let mut row = vec![
        m.e_r1.to_string(),
        m.e_r2_deg.to_string(),
        m.e_t_mm2.to_string(),
        m.e_c.to_string(),
    ];
    for (d, r) in m.rrmse_px.iter().enumerate() {
        header.push(format!("rrmse_px_{d}"));
        row.push(r.to_string());
    }
    header.extend(["rae_mm".to_string(), "rae_sq_mm2".into()]);
    row.push(m.rae_mm.map(|v| v.to_string()).unwrap_or_default());
    row.push(m.rae_sq_mm2.map(|v| v.to_string()).unwrap_or_default());
    let csv = format!("{}\n{}\n", header.join(","), row.join(","));
    print!("{csv}");
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        write_text(&dir.join("evaluation.csv"), &csv)?;
    }
    Ok(())
}

fn synth_camera(args: SynthCameraArgs) -> Result<()> {
    let board = make_chessboard(args.board.rows, args.board.cols, args.board.square)?;
    let k = default_synth_intrinsics();
    let (x, z) = default_synth_truth();
    let (mut problem, _) = synth_camera_dataset(args.poses, &board, &k, &x, &z, args.noise_px, args.seed)?;
    if args.fx_scale.is_nan() || args.fx_scale <= 0.0 {
        return Err(Error::Config("--fx-scale must be positive".into()));
    }
    for cam in &mut problem.cameras {
        if let Some(k) = &mut cam.intrinsics {
            k.fx *= args.fx_scale;
        }
        if args.no_a_files {
            cam.a_poses.clear();
        }
    }
    let manifest = dump_dataset(&args.out, &problem, Some(&x), Some(&[z]))?;
    println!("{}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::SynthCamera(a) => synth_camera(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: every method failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
