//! Pinhole camera with rational radial and tangential distortion, plus the
//! calibration-target geometry.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::se3::{Htm, Vec3};

pub type Vec2 = Vector2<f64>;

/// Number of intrinsic parameters per camera: fx, fy, cx, cy and eight
/// distortion coefficients.
pub const INTRINSICS_LEN: usize = 12;

const MIN_DEPTH: f64 = 1e-9;

/// Camera intrinsics.
///
/// `dist` holds `(k1, k2, p1, p2, k3, k4, k5, k6)`; the radial factor is the
/// rational `(1 + k1 r² + k2 r⁴ + k3 r⁶) / (1 + k4 r² + k5 r⁴ + k6 r⁶)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dist: [f64; 8],
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            dist: [0.0; 8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidModel(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite intrinsic parameter".into()));
        }
        Ok(())
    }

    /// `(fx, fy, cx, cy, k1, k2, p1, p2, k3, k4, k5, k6)`.
    pub fn to_array(&self) -> [f64; INTRINSICS_LEN] {
        let d = &self.dist;
        [
            self.fx, self.fy, self.cx, self.cy, d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7],
        ]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        assert_eq!(p.len(), INTRINSICS_LEN, "intrinsics need 12 values");
        Self {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            dist: [p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11]],
        }
    }

    /// Applies the distortion model to normalized coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, p1, p2, k3, k4, k5, k6] = self.dist;
        let r2 = x * x + y * y;
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        let radial = (1.0 + k1 * r2 + k2 * r4 + k3 * r6) / (1.0 + k4 * r2 + k5 * r4 + k6 * r6);
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        (xd, yd)
    }

    /// Maps a pixel back to normalized (undistorted) image coordinates by
    /// fixed-point iteration on the distortion model.
    pub fn undistort(&self, uv: &Vec2) -> (f64, f64) {
        let xd = (uv.x - self.cx) / self.fx;
        let yd = (uv.y - self.cy) / self.fy;
        let (mut x, mut y) = (xd, yd);
        for _ in 0..100 {
            let (dx, dy) = self.distort(x, y);
            let (ex, ey) = (dx - xd, dy - yd);
            x -= ex;
            y -= ey;
            if ex.abs().max(ey.abs()) < 1e-15 {
                break;
            }
        }
        (x, y)
    }
}

/// Projects a camera-frame point to pixels.
pub fn project(k: &CameraIntrinsics, point_cam: &Vec3) -> Result<Vec2> {
    if !(point_cam.z > MIN_DEPTH) {
        return Err(Error::PointBehindCamera { z: point_cam.z });
    }
    let (xd, yd) = k.distort(point_cam.x / point_cam.z, point_cam.y / point_cam.z);
    Ok(Vec2::new(k.fx * xd + k.cx, k.fy * yd + k.cy))
}

/// Projects a target point through `Z · B · X̃`.
pub fn project_chain(k: &CameraIntrinsics, z: &Htm, b: &Htm, x_tilde: &Htm, point: &Vec3) -> Result<Vec2> {
    let cam = z.compose(&b.compose(x_tilde));
    project(k, &cam.transform_point(point))
}

/// Known 3D points on the calibration object, in the world frame (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    points: Vec<Vec3>,
}

impl TargetModel {
    /// Requires at least four points that are not all collinear.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidModel(format!(
                "target needs at least 4 points, got {}",
                points.len()
            )));
        }
        let p0 = points[0];
        let scale = points.iter().map(|p| (p - p0).norm()).fold(0.0f64, f64::max);
        let dir = points
            .iter()
            .map(|p| p - p0)
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or_else(Vector3::zeros);
        let off_line = points
            .iter()
            .map(|p| (p - p0).cross(&dir).norm())
            .fold(0.0f64, f64::max);
        if scale == 0.0 || off_line <= 1e-9 * scale * scale {
            return Err(Error::InvalidModel("target points are collinear".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every point has `z = 0`.
    pub fn is_planar_z0(&self) -> bool {
        self.points.iter().all(|p| p.z == 0.0)
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }
}

/// A planar chessboard with `rows · cols` inner corners in row-major order:
/// corner `(r, c)` sits at `(c · square, r · square, 0)`.
pub fn make_chessboard(rows: usize, cols: usize, square_mm: f64) -> Result<TargetModel> {
    if rows < 2 || cols < 2 || !(square_mm > 0.0) {
        return Err(Error::InvalidModel(format!(
            "chessboard needs rows, cols >= 2 and a positive square size (got {rows}x{cols}x{square_mm})"
        )));
    }
    let points = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| Vec3::new(c as f64 * square_mm, r as f64 * square_mm, 0.0)))
        .collect();
    TargetModel::new(points)
}

/// One detected target corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub pose_index: usize,
    pub point_index: usize,
    pub uv: Vec2,
}
