//! Calibration problem definition and the two solver families.
//!
//! Conventions: `A_i` maps world to camera, `B_i` maps robot base to hand,
//! and the unknowns satisfy `A_i · X = Z · B_i` for every pose `i`. With
//! several cameras there is one `X` and one `Z_d` per camera.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::camera::{CameraIntrinsics, Observation, TargetModel, INTRINSICS_LEN};
use crate::error::{Error, Result};
use crate::nlls::SolverReport;
use crate::se3::{Htm, RotationKind};

pub mod axzb;
pub mod reproj;

pub use axzb::{
    evaluate_cost, solve_c1_separable, solve_c1_simultaneous, solve_c2_separable, solve_c2_simultaneous, CostKind,
};
pub use reproj::{
    compute_rsse, rsse_at_params, solve_rp1, solve_rp1_from, solve_rp2, solve_rp2_from, ReprojResult, RsseReport,
};

/// Everything known about one camera.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CameraData {
    /// World→camera transforms keyed by pose index.
    pub a_poses: BTreeMap<usize, Htm>,
    pub intrinsics: Option<CameraIntrinsics>,
    pub observations: Vec<Observation>,
    /// Sorted pose indices at which this camera sees the target.
    pub visibility: Vec<usize>,
}

impl CameraData {
    /// Camera whose visibility set is exactly the keys of `a_poses`.
    pub fn from_a_poses(a_poses: BTreeMap<usize, Htm>) -> Self {
        let visibility = a_poses.keys().copied().collect();
        Self {
            a_poses,
            visibility,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibProblem {
    /// Base→hand transforms, one per robot pose.
    pub b_poses: Vec<Htm>,
    pub cameras: Vec<CameraData>,
    pub target: Option<TargetModel>,
}

impl CalibProblem {
    /// Single-camera problem from paired `A_i`, `B_i` lists.
    pub fn from_pairs(a_poses: Vec<Htm>, b_poses: Vec<Htm>) -> Result<Self> {
        if a_poses.len() != b_poses.len() {
            return Err(Error::InvalidProblem(format!(
                "{} A poses but {} B poses",
                a_poses.len(),
                b_poses.len()
            )));
        }
        let problem = Self {
            b_poses,
            cameras: vec![CameraData::from_a_poses(a_poses.into_iter().enumerate().collect())],
            target: None,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn n_poses(&self) -> usize {
        self.b_poses.len()
    }

    pub fn n_cameras(&self) -> usize {
        self.cameras.len()
    }

    /// Structural checks shared by every method.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_poses();
        if n < 3 {
            return Err(Error::InvalidProblem(format!("need at least 3 robot poses, got {n}")));
        }
        if self.cameras.is_empty() {
            return Err(Error::InvalidProblem("no cameras".into()));
        }
        for (d, cam) in self.cameras.iter().enumerate() {
            if cam.visibility.len() < 3 {
                return Err(Error::InvalidProblem(format!(
                    "camera {d} sees the target from {} poses; at least 3 are required",
                    cam.visibility.len()
                )));
            }
            if cam.visibility.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidProblem(format!(
                    "camera {d} visibility must be sorted and unique"
                )));
            }
            if let Some(&i) = cam.visibility.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidProblem(format!(
                    "camera {d} visibility index {i} is out of range (n = {n})"
                )));
            }
            let visible: HashSet<usize> = cam.visibility.iter().copied().collect();
            let m = self.target.as_ref().map(TargetModel::len);
            let mut seen = HashSet::new();
            for obs in &cam.observations {
                if !visible.contains(&obs.pose_index) {
                    return Err(Error::InvalidProblem(format!(
                        "camera {d} has an observation at pose {} outside its visibility set",
                        obs.pose_index
                    )));
                }
                if let Some(m) = m {
                    if obs.point_index >= m {
                        return Err(Error::InvalidProblem(format!(
                            "camera {d} observation references point {} but the target has {m}",
                            obs.point_index
                        )));
                    }
                }
                if !seen.insert((obs.pose_index, obs.point_index)) {
                    return Err(Error::InvalidProblem(format!(
                        "camera {d} observes point {} at pose {} more than once",
                        obs.point_index, obs.pose_index
                    )));
                }
            }
            if let Some(k) = &cam.intrinsics {
                k.validate()?;
            }
        }
        Ok(())
    }

    /// Checks that every visible pose has an `A` transform.
    pub fn validate_algebraic(&self) -> Result<()> {
        self.validate()?;
        for (d, cam) in self.cameras.iter().enumerate() {
            if let Some(i) = cam.visibility.iter().find(|i| !cam.a_poses.contains_key(i)) {
                return Err(Error::InvalidProblem(format!(
                    "camera {d} is missing the A transform for visible pose {i}"
                )));
            }
        }
        Ok(())
    }

    /// Checks intrinsics, observations and target for reprojection methods.
    pub fn validate_reprojection(&self) -> Result<()> {
        self.validate()?;
        if self.target.is_none() {
            return Err(Error::InvalidProblem("reprojection methods need a target model".into()));
        }
        for (d, cam) in self.cameras.iter().enumerate() {
            if cam.intrinsics.is_none() {
                return Err(Error::InvalidProblem(format!("camera {d} has no intrinsics")));
            }
            if cam.observations.is_empty() {
                return Err(Error::InvalidProblem(format!("camera {d} has no observations")));
            }
        }
        Ok(())
    }

    /// Per-camera weights `w_d = min_s / |S_d|`.
    pub fn weights(&self) -> Vec<f64> {
        let min_s = self.cameras.iter().map(|c| c.visibility.len()).min().unwrap_or(0);
        self.cameras
            .iter()
            .map(|c| min_s as f64 / c.visibility.len() as f64)
            .collect()
    }

    pub fn intrinsics(&self) -> Result<Vec<CameraIntrinsics>> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(d, c)| {
                c.intrinsics
                    .ok_or_else(|| Error::InvalidProblem(format!("camera {d} has no intrinsics")))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    C1Sim,
    C1Sep,
    C2Sim,
    C2Sep,
    Rp1,
    Rp2,
}

impl Method {
    pub const ALL: [Method; 6] = [Self::C1Sim, Self::C1Sep, Self::C2Sim, Self::C2Sep, Self::Rp1, Self::Rp2];

    pub fn name(self) -> &'static str {
        match self {
            Self::C1Sim => "c1-sim",
            Self::C1Sep => "c1-sep",
            Self::C2Sim => "c2-sim",
            Self::C2Sep => "c2-sep",
            Self::Rp1 => "rp1",
            Self::Rp2 => "rp2",
        }
    }

    /// True for the methods that work on `A_i` transforms directly.
    pub fn is_algebraic(self) -> bool {
        matches!(self, Self::C1Sim | Self::C1Sep | Self::C2Sim | Self::C2Sep)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Runs one of the algebraic methods by name.
pub fn solve_algebraic(problem: &CalibProblem, method: Method, kind: RotationKind) -> Result<CalibResult> {
    match method {
        Method::C1Sim => solve_c1_simultaneous(problem, kind),
        Method::C1Sep => solve_c1_separable(problem, kind),
        Method::C2Sim => solve_c2_simultaneous(problem, kind),
        Method::C2Sep => solve_c2_separable(problem, kind),
        Method::Rp1 | Method::Rp2 => Err(Error::Config(format!(
            "{method} is a reprojection method and needs image observations"
        ))),
    }
}

/// Estimated transforms plus solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibResult {
    pub x: Htm,
    pub z: Vec<Htm>,
    pub rotation_kind: RotationKind,
    pub method: Method,
    pub report: SolverReport,
    /// Raw optimizer vector: `[p_X, t_X, p_Z0, t_Z0, ...]`. For c2 and
    /// reprojection methods the first block parameterizes `X⁻¹`.
    pub params: Vec<f64>,
}

/// Index arithmetic for the packed parameter vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub kind: RotationKind,
    pub cameras: usize,
    pub with_translation: bool,
    pub with_intrinsics: bool,
}

impl Layout {
    pub fn full(kind: RotationKind, cameras: usize) -> Self {
        Self {
            kind,
            cameras,
            with_translation: true,
            with_intrinsics: false,
        }
    }

    pub fn rotations_only(kind: RotationKind, cameras: usize) -> Self {
        Self {
            with_translation: false,
            ..Self::full(kind, cameras)
        }
    }

    pub fn block(&self) -> usize {
        self.kind.len() + if self.with_translation { 3 } else { 0 }
    }

    /// Offset of transform slot 0 (`X`) or `1 + d` (`Z_d`).
    pub fn slot(&self, s: usize) -> usize {
        s * self.block()
    }

    pub fn intrinsics_offset(&self, d: usize) -> usize {
        self.block() * (1 + self.cameras) + INTRINSICS_LEN * d
    }

    pub fn len(&self) -> usize {
        self.block() * (1 + self.cameras)
            + if self.with_intrinsics {
                INTRINSICS_LEN * self.cameras
            } else {
                0
            }
    }

    /// Identity rotations and zero translations.
    pub fn identity(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.len());
        for s in 0..=self.cameras {
            let o = self.slot(s);
            p.rows_mut(o, self.kind.len())
                .copy_from_slice(self.kind.identity_params());
        }
        p
    }

    pub fn htm(&self, p: &[f64], s: usize) -> Result<Htm> {
        let o = self.slot(s);
        let r = self.kind.len();
        let t: &[f64] = if self.with_translation {
            &p[o + r..o + r + 3]
        } else {
            &[0.0; 3]
        };
        Htm::from_params(self.kind, &p[o..o + r], t)
    }

    pub fn intrinsics(&self, p: &[f64], d: usize) -> CameraIntrinsics {
        let o = self.intrinsics_offset(d);
        CameraIntrinsics::from_slice(&p[o..o + INTRINSICS_LEN])
    }
}
