use std::path::PathBuf;

/// Errors produced anywhere in the calibration toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate rotation parameter: {0}")]
    DegenerateParameter(String),
    #[error("point is behind the camera (z = {z})")]
    PointBehindCamera { z: f64 },
    #[error("invalid camera or target model: {0}")]
    InvalidModel(String),
    #[error("residual is not finite at the initial point")]
    InvalidStart,
    #[error("finite-difference Jacobian column {column} is not finite")]
    NonFiniteJacobian { column: usize },
    #[error("solver failed to converge: {0}")]
    ConvergenceFailure(String),
    #[error("robot motion is degenerate: translation system has rank deficiency (sigma_min/sigma_max = {ratio:e})")]
    DegenerateMotion { ratio: f64 },
    #[error("invalid calibration problem: {0}")]
    InvalidProblem(String),
    #[error("refined focal length is not positive for camera {camera}")]
    NegativeFocal { camera: usize },
    #[error("point {point} has {views} view(s); at least 2 are required")]
    InsufficientViews { point: usize, views: usize },
    #[error("geometry error: {0}")]
    GeometryError(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("pose estimation failed for camera {camera}, pose {pose}: {message}")]
    Extrinsics {
        camera: usize,
        pose: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
