//! Plain-text dataset formats and the dataset manifest.
//!
//! * HTM files: four rows of four numbers, the last row `0 0 0 1`.
//! * Intrinsics: `fx fy cx cy` on one line, the eight distortion
//!   coefficients on the next.
//! * Target: point count `m`, then `m` lines of `x y z` (mm).
//! * Observations: CSV with header `camera,pose,point,u,v`; `camera` is the
//!   camera's position in the manifest.
//! * Manifest: `key = value` lines, `#` comments. File names are relative to
//!   the manifest's directory; pose patterns contain a run of `#` that is
//!   replaced by the zero-padded pose index (`B_####.txt` → `B_0007.txt`).
//!
//! ```text
//! n_poses = 25
//! b_pose_pattern = B_####.txt
//! target_file = target.txt
//! units = mm
//! truth_x_file = truth_X.txt
//! cameras = 1
//! camera.0.id = cam0
//! camera.0.intrinsics_file = intrinsics_0.txt
//! camera.0.a_pose_pattern = A_####.txt
//! camera.0.observations_file = observations.csv
//! camera.0.visibility = 0-24
//! camera.0.truth_z_file = truth_Z.txt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::calib::{CalibProblem, CameraData};
use crate::camera::{CameraIntrinsics, Observation, TargetModel, Vec2};
use crate::error::{Error, Result};
use crate::pose::estimate_planar_pose;
use crate::se3::{Htm, Vec3};

pub const OBSERVATIONS_HEADER: [&str; 5] = ["camera", "pose", "point", "u", "v"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_htm(path: &Path) -> Result<Htm> {
    Htm::parse_text(&read_text(path)?).map_err(|m| parse_err(path, m))
}

pub fn write_htm(path: &Path, h: &Htm) -> Result<()> {
    write_text(path, &h.to_text())
}

fn parse_numbers(path: &Path, line: &str, expected: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| parse_err(path, format!("bad number '{t}': {e}")))
        })
        .collect::<Result<_>>()?;
    if v.len() != expected {
        return Err(parse_err(
            path,
            format!("expected {expected} numbers, found {}", v.len()),
        ));
    }
    Ok(v)
}

fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_intrinsics(path: &Path, text: &str) -> Result<CameraIntrinsics> {
    let lines: Vec<&str> = content_lines(text).collect();
    if lines.len() != 2 {
        return Err(parse_err(
            path,
            "intrinsics need two lines: 'fx fy cx cy' and 8 distortion coefficients",
        ));
    }
    let pin = parse_numbers(path, lines[0], 4)?;
    let dist = parse_numbers(path, lines[1], 8)?;
    let k = CameraIntrinsics {
        fx: pin[0],
        fy: pin[1],
        cx: pin[2],
        cy: pin[3],
        dist: dist.try_into().expect("length checked"),
    };
    k.validate().map_err(|e| parse_err(path, e.to_string()))?;
    Ok(k)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    parse_intrinsics(path, &read_text(path)?)
}

pub fn intrinsics_to_text(k: &CameraIntrinsics) -> String {
    let d = k.dist;
    format!(
        "{} {} {} {}\n{} {} {} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]
    )
}

pub fn read_target(path: &Path) -> Result<TargetModel> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let m: usize = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty target file"))?
        .parse()
        .map_err(|e| parse_err(path, format!("bad point count: {e}")))?;
    let points: Vec<Vec3> = lines
        .map(|l| parse_numbers(path, l, 3).map(|v| Vec3::new(v[0], v[1], v[2])))
        .collect::<Result<_>>()?;
    if points.len() != m {
        return Err(parse_err(
            path,
            format!("header says {m} points, found {}", points.len()),
        ));
    }
    TargetModel::new(points).map_err(|e| parse_err(path, e.to_string()))
}

pub fn target_to_text(t: &TargetModel) -> String {
    let mut s = format!("{}\n", t.len());
    for p in t.points() {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

/// All rows of an observations file as `(camera, observation)`.
pub fn read_observations(path: &Path) -> Result<Vec<(usize, Observation)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => parse_err(path, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| parse_err(path, e.to_string()))?;
    if header.iter().ne(OBSERVATIONS_HEADER) {
        return Err(parse_err(
            path,
            format!("header must be '{}'", OBSERVATIONS_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let row = line + 2;
        let field = |i: usize| record.get(i).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|e| parse_err(path, format!("line {row}, column {}: {e}", OBSERVATIONS_HEADER[i])))
        };
        let real = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| parse_err(path, format!("line {row}, column {}: {e}", OBSERVATIONS_HEADER[i])))
        };
        out.push((
            int(0)?,
            Observation {
                pose_index: int(1)?,
                point_index: int(2)?,
                uv: Vec2::new(real(3)?, real(4)?),
            },
        ));
    }
    Ok(out)
}

pub fn observations_to_csv(problem: &CalibProblem) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(OBSERVATIONS_HEADER)?;
    for (d, cam) in problem.cameras.iter().enumerate() {
        for o in &cam.observations {
            w.write_record([
                d.to_string(),
                o.pose_index.to_string(),
                o.point_index.to_string(),
                o.uv.x.to_string(),
                o.uv.y.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

/// Expands the `#` run in `pattern` to the zero-padded index.
pub fn expand_pattern(pattern: &str, index: usize) -> Result<String> {
    let start = pattern
        .find('#')
        .ok_or_else(|| Error::Manifest(format!("pattern '{pattern}' has no '#' placeholder")))?;
    let width = pattern[start..].chars().take_while(|&c| c == '#').count();
    if pattern[start + width..].contains('#') {
        return Err(Error::Manifest(format!(
            "pattern '{pattern}' has more than one '#' run"
        )));
    }
    Ok(format!(
        "{}{index:0width$}{}",
        &pattern[..start],
        &pattern[start + width..]
    ))
}

/// Parses `0-4,7,9-10` style index lists.
pub fn parse_index_list(s: &str) -> Result<Vec<usize>> {
    let bad = |t: &str| Error::Manifest(format!("bad index list entry '{t}' in '{s}'"));
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad(tok))?;
                let b: usize = b.trim().parse().map_err(|_| bad(tok))?;
                if b < a {
                    return Err(bad(tok));
                }
                out.extend(a..=b);
            }
            None => out.push(tok.parse().map_err(|_| bad(tok))?),
        }
    }
    Ok(out)
}

/// Inverse of [`parse_index_list`], collapsing consecutive runs.
pub fn format_index_list(indices: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < indices.len() {
        let mut j = i;
        while j + 1 < indices.len() && indices[j + 1] == indices[j] + 1 {
            j += 1;
        }
        parts.push(if j > i {
            format!("{}-{}", indices[i], indices[j])
        } else {
            indices[i].to_string()
        });
        i = j + 1;
    }
    parts.join(",")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CameraEntry {
    pub id: String,
    pub intrinsics_file: Option<String>,
    pub a_pose_pattern: Option<String>,
    pub observations_file: Option<String>,
    /// `None` means every pose.
    pub visibility: Option<Vec<usize>>,
    pub truth_z_file: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    /// Directory that relative file names resolve against.
    pub root: PathBuf,
    pub n_poses: usize,
    pub b_pose_pattern: String,
    pub target_file: Option<String>,
    pub units: Option<String>,
    pub truth_x_file: Option<String>,
    pub cameras: Vec<CameraEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("line {}: expected key = value", ln + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Manifest(format!(
                    "line {}: duplicate key '{}'",
                    ln + 1,
                    k.trim()
                )));
            }
        }
        let mut take = |k: &str| kv.remove(k);
        let required = |v: Option<String>, k: &str| v.ok_or_else(|| Error::Manifest(format!("missing key '{k}'")));
        let parse_count = |v: String, k: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Manifest(format!("'{k}' must be a non-negative integer, got '{v}'")))
        };
        let n_poses = parse_count(required(take("n_poses"), "n_poses")?, "n_poses")?;
        let b_pose_pattern = required(take("b_pose_pattern"), "b_pose_pattern")?;
        let target_file = take("target_file");
        let units = take("units");
        let truth_x_file = take("truth_x_file");
        let n_cameras = parse_count(required(take("cameras"), "cameras")?, "cameras")?;
        if n_cameras == 0 {
            return Err(Error::Manifest("'cameras' must be at least 1".into()));
        }
        let mut cameras = Vec::with_capacity(n_cameras);
        for d in 0..n_cameras {
            let mut key = |name: &str| take(&format!("camera.{d}.{name}"));
            let visibility = key("visibility").map(|v| parse_index_list(&v)).transpose()?;
            cameras.push(CameraEntry {
                id: key("id").unwrap_or_else(|| d.to_string()),
                intrinsics_file: key("intrinsics_file"),
                a_pose_pattern: key("a_pose_pattern"),
                observations_file: key("observations_file"),
                visibility,
                truth_z_file: key("truth_z_file"),
            });
        }
        if let Some(k) = kv.keys().next() {
            return Err(Error::Manifest(format!("unknown key '{k}'")));
        }
        Ok(Self {
            root: root.to_path_buf(),
            n_poses,
            b_pose_pattern,
            target_file,
            units,
            truth_x_file,
            cameras,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::parse(&read_text(path)?, &root)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_poses = {}", self.n_poses);
        let _ = writeln!(s, "b_pose_pattern = {}", self.b_pose_pattern);
        let opt = |s: &mut String, k: &str, v: &Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v}");
            }
        };
        opt(&mut s, "target_file", &self.target_file);
        opt(&mut s, "units", &self.units);
        opt(&mut s, "truth_x_file", &self.truth_x_file);
        let _ = writeln!(s, "cameras = {}", self.cameras.len());
        for (d, c) in self.cameras.iter().enumerate() {
            let _ = writeln!(s, "camera.{d}.id = {}", c.id);
            opt(&mut s, &format!("camera.{d}.intrinsics_file"), &c.intrinsics_file);
            opt(&mut s, &format!("camera.{d}.a_pose_pattern"), &c.a_pose_pattern);
            opt(&mut s, &format!("camera.{d}.observations_file"), &c.observations_file);
            opt(
                &mut s,
                &format!("camera.{d}.visibility"),
                &c.visibility.as_deref().map(format_index_list),
            );
            opt(&mut s, &format!("camera.{d}.truth_z_file"), &c.truth_z_file);
        }
        s
    }

    fn resolve(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// A loaded dataset plus any ground truth it ships with.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub problem: CalibProblem,
    pub truth_x: Option<Htm>,
    /// Present only when every camera lists a truth file.
    pub truth_z: Option<Vec<Htm>>,
    pub manifest: DatasetManifest,
}

fn read_pose_series(
    manifest: &DatasetManifest,
    pattern: &str,
    indices: &[usize],
    what: &str,
) -> Result<BTreeMap<usize, Htm>> {
    indices
        .iter()
        .map(|&i| {
            let path = manifest.resolve(&expand_pattern(pattern, i)?);
            if !path.is_file() {
                return Err(Error::Manifest(format!(
                    "{what} pose file for index {i} not found: {}",
                    path.display()
                )));
            }
            Ok((i, read_htm(&path)?))
        })
        .collect()
}

/// Reads the manifest at `manifest_path` and everything it references.
///
/// Cameras without an `a_pose_pattern` get their `A_i` from single-view
/// pose estimation on their observations (planar targets only).
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let n = manifest.n_poses;
    let all: Vec<usize> = (0..n).collect();
    let b_map = read_pose_series(&manifest, &manifest.b_pose_pattern, &all, "B")?;
    let b_poses: Vec<Htm> = b_map.into_values().collect();
    let target = manifest
        .target_file
        .as_ref()
        .map(|f| read_target(&manifest.resolve(f)))
        .transpose()?;

    let mut obs_cache: BTreeMap<PathBuf, Vec<(usize, Observation)>> = BTreeMap::new();
    let mut cameras = Vec::with_capacity(manifest.cameras.len());
    for (d, entry) in manifest.cameras.iter().enumerate() {
        let visibility = entry.visibility.clone().unwrap_or_else(|| all.clone());
        if let Some(&i) = visibility.iter().find(|&&i| i >= n) {
            return Err(Error::Manifest(format!(
                "camera {d} visibility index {i} exceeds n_poses = {n}"
            )));
        }
        let intrinsics = entry
            .intrinsics_file
            .as_ref()
            .map(|f| read_intrinsics(&manifest.resolve(f)))
            .transpose()?;
        let observations: Vec<Observation> = match &entry.observations_file {
            Some(f) => {
                let path = manifest.resolve(f);
                if !obs_cache.contains_key(&path) {
                    let rows = read_observations(&path)?;
                    obs_cache.insert(path.clone(), rows);
                }
                obs_cache[&path]
                    .iter()
                    .filter(|(c, _)| *c == d)
                    .map(|(_, o)| *o)
                    .collect()
            }
            None => Vec::new(),
        };
        let a_poses = match &entry.a_pose_pattern {
            Some(pattern) => read_pose_series(&manifest, pattern, &visibility, "A")?,
            None => {
                let (Some(k), Some(t)) = (&intrinsics, &target) else {
                    return Err(Error::Manifest(format!(
                        "camera {d} has no a_pose_pattern and lacks intrinsics or target to estimate poses"
                    )));
                };
                if observations.is_empty() {
                    return Err(Error::Manifest(format!(
                        "camera {d} has no a_pose_pattern and no observations to estimate poses from"
                    )));
                }
                visibility
                    .iter()
                    .map(|&i| {
                        let pts: Vec<(usize, Vec2)> = observations
                            .iter()
                            .filter(|o| o.pose_index == i)
                            .map(|o| (o.point_index, o.uv))
                            .collect();
                        estimate_planar_pose(t, k, &pts)
                            .map(|a| (i, a))
                            .map_err(|e| Error::Extrinsics {
                                camera: d,
                                pose: i,
                                message: e.to_string(),
                            })
                    })
                    .collect::<Result<_>>()?
            }
        };
        cameras.push(CameraData {
            a_poses,
            intrinsics,
            observations,
            visibility,
        });
    }
    let problem = CalibProblem {
        b_poses,
        cameras,
        target,
    };
    problem.validate()?;

    let truth_x = manifest
        .truth_x_file
        .as_ref()
        .map(|f| read_htm(&manifest.resolve(f)))
        .transpose()?;
    let truth_z = manifest
        .cameras
        .iter()
        .map(|c| c.truth_z_file.as_ref().map(|f| read_htm(&manifest.resolve(f))))
        .collect::<Option<Result<Vec<_>>>>()
        .transpose()?;
    Ok(Dataset {
        problem,
        truth_x,
        truth_z,
        manifest,
    })
}

fn a_pattern(d: usize) -> String {
    if d == 0 {
        "A_####.txt".into()
    } else {
        format!("A_c{d}_####.txt")
    }
}

fn z_truth_name(d: usize) -> String {
    if d == 0 {
        "truth_Z.txt".into()
    } else {
        format!("truth_Z_{d}.txt")
    }
}

/// Writes `problem` (and optional truth) to `dir` with a manifest;
/// returns the manifest path. `A` files are written for every camera that
/// has them for all visible poses.
pub fn dump_dataset(
    dir: &Path,
    problem: &CalibProblem,
    truth_x: Option<&Htm>,
    truth_z: Option<&[Htm]>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let b_pattern = "B_####.txt".to_string();
    for (i, b) in problem.b_poses.iter().enumerate() {
        write_htm(&dir.join(expand_pattern(&b_pattern, i)?), b)?;
    }
    let target_file = match &problem.target {
        Some(t) => {
            write_text(&dir.join("target.txt"), &target_to_text(t))?;
            Some("target.txt".to_string())
        }
        None => None,
    };
    let truth_x_file = match truth_x {
        Some(x) => {
            write_htm(&dir.join("truth_X.txt"), x)?;
            Some("truth_X.txt".to_string())
        }
        None => None,
    };
    let has_obs = problem.cameras.iter().any(|c| !c.observations.is_empty());
    if has_obs {
        write_text(&dir.join("observations.csv"), &observations_to_csv(problem)?)?;
    }
    let mut cameras = Vec::new();
    for (d, cam) in problem.cameras.iter().enumerate() {
        let full_a = cam.visibility.iter().all(|i| cam.a_poses.contains_key(i));
        let a_pose_pattern = if full_a {
            for i in &cam.visibility {
                write_htm(&dir.join(expand_pattern(&a_pattern(d), *i)?), &cam.a_poses[i])?;
            }
            Some(a_pattern(d))
        } else {
            None
        };
        let intrinsics_file = match &cam.intrinsics {
            Some(k) => {
                let name = format!("intrinsics_{d}.txt");
                write_text(&dir.join(&name), &intrinsics_to_text(k))?;
                Some(name)
            }
            None => None,
        };
        let truth_z_file = match truth_z.and_then(|z| z.get(d)) {
            Some(z) => {
                write_htm(&dir.join(z_truth_name(d)), z)?;
                Some(z_truth_name(d))
            }
            None => None,
        };
        cameras.push(CameraEntry {
            id: format!("cam{d}"),
            intrinsics_file,
            a_pose_pattern,
            observations_file: (!cam.observations.is_empty()).then(|| "observations.csv".to_string()),
            visibility: Some(cam.visibility.clone()),
            truth_z_file,
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        n_poses: problem.n_poses(),
        b_pose_pattern: b_pattern,
        target_file,
        units: Some("mm".into()),
        truth_x_file,
        cameras,
    };
    let path = dir.join("manifest.txt");
    write_text(&path, &manifest.to_text())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::make_chessboard;
    use crate::se3::rotation_angle;
    use crate::simulate::{default_synth_intrinsics, default_synth_truth, generate, synth_camera_dataset, SimConfig};

    #[test]
    fn pattern_expansion() {
        assert_eq!(expand_pattern("B_####.txt", 7).unwrap(), "B_0007.txt");
        assert_eq!(expand_pattern("p#.txt", 12).unwrap(), "p12.txt");
        assert!(expand_pattern("B.txt", 1).is_err());
        assert!(expand_pattern("#_#", 1).is_err());
    }

    #[test]
    fn index_lists_round_trip() {
        let v = parse_index_list("0-3, 5,7-8").unwrap();
        assert_eq!(v, vec![0, 1, 2, 3, 5, 7, 8]);
        assert_eq!(format_index_list(&v), "0-3,5,7-8");
        assert!(parse_index_list("4-2").is_err());
        assert!(parse_index_list("x").is_err());
    }

    #[test]
    fn simulated_dataset_round_trips() {
        let ds = generate(&SimConfig {
            eta: 0.05,
            seed: 3,
            ..SimConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let problem = ds.to_problem();
        let path = dump_dataset(dir.path(), &problem, Some(&ds.truth_x), Some(&[ds.truth_z])).unwrap();
        for f in ["A_0000.txt", "B_0024.txt", "truth_X.txt", "truth_Z.txt", "manifest.txt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.problem, problem);
        assert_eq!(loaded.truth_x, Some(ds.truth_x));
        assert_eq!(loaded.truth_z, Some(vec![ds.truth_z]));

        // dump → load → dump is byte-identical.
        let dir2 = tempfile::tempdir().unwrap();
        dump_dataset(
            dir2.path(),
            &loaded.problem,
            loaded.truth_x.as_ref(),
            loaded.truth_z.as_deref(),
        )
        .unwrap();
        for entry in fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(dir.path().join(&name)).unwrap(),
                fs::read(dir2.path().join(&name)).unwrap(),
                "{name:?}"
            );
        }
    }

    #[test]
    fn missing_b_file_names_the_index() {
        let ds = generate(&SimConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dump_dataset(dir.path(), &ds.to_problem(), None, None).unwrap();
        fs::remove_file(dir.path().join("B_0007.txt")).unwrap();
        match load_dataset(&path) {
            Err(Error::Manifest(m)) => assert!(m.contains("index 7"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("nope.txt")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn manifest_rejects_unknown_and_missing_keys() {
        let root = Path::new(".");
        assert!(matches!(
            DatasetManifest::parse("n_poses = 3\nb_pose_pattern = B_#.txt\ncameras = 1\nbogus = 1\n", root),
            Err(Error::Manifest(_))
        ));
        assert!(matches!(
            DatasetManifest::parse("cameras = 1\n", root),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn camera_dataset_round_trips_and_reconstructs_poses() {
        let board = make_chessboard(6, 8, 10.0).unwrap();
        let k = default_synth_intrinsics();
        let (x, z) = default_synth_truth();
        let (problem, truth) = synth_camera_dataset(8, &board, &k, &x, &z, 0.0, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dump_dataset(dir.path(), &problem, Some(&x), Some(&[z])).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.problem, problem);

        // Without A files the poses come from the observations.
        let mut m = loaded.manifest.clone();
        m.cameras[0].a_pose_pattern = None;
        write_text(&path, &m.to_text()).unwrap();
        for i in 0..8 {
            fs::remove_file(dir.path().join(format!("A_{i:04}.txt"))).unwrap();
        }
        let rebuilt = load_dataset(&path).unwrap();
        for (i, a) in truth.a_poses.iter().enumerate() {
            let est = rebuilt.problem.cameras[0].a_poses[&i];
            assert!(rotation_angle(&(a.r.transpose() * est.r)) < 1e-6);
        }
    }

    #[test]
    fn bad_observation_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        fs::write(&p, "cam,pose,point,u,v\n0,0,0,1,2\n").unwrap();
        assert!(matches!(read_observations(&p), Err(Error::Parse { .. })));
        fs::write(&p, "camera,pose,point,u,v\n0,0,x,1,2\n").unwrap();
        assert!(matches!(read_observations(&p), Err(Error::Parse { .. })));
    }
}
