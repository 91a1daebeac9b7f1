//! Robot-world / hand-eye calibration (`A_i X = Z B_i`).
//!
//! Two solver families are provided: algebraic methods that minimize
//! `‖AX − ZB‖²_F` or `‖A − ZBX⁻¹‖²_F` (simultaneously or rotation-then-
//! translation), and reprojection methods that minimize pixel error over
//! observed calibration-target corners, optionally refining intrinsics.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod camera;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nlls;
pub mod pipeline;
pub mod pose;
pub mod se3;
pub mod simulate;

pub use calib::{CalibProblem, CalibResult, CameraData, Method, ReprojResult};
pub use camera::{CameraIntrinsics, Observation, TargetModel};
pub use error::{Error, Result};
pub use nlls::{solve_lm, LeastSquaresProblem, SolverOptions, SolverReport, Termination};
pub use se3::{Htm, Rotation3, RotationKind, Vec3};
