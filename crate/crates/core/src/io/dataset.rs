use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::calibration::{intrinsics_values, parse_intrinsics, parse_rotation};
use super::{fmt_f64, read_corners_csv, read_depth_pgm, read_text, write_atomic, write_corners_csv, write_depth_pgm, KeyValueDoc};
use crate::calib::{BoardSpec, Frame};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, NoiseModel, Plane, RigidTransform, Vec3};
use crate::synth::SceneParams;

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const GROUND_TRUTH_NAME: &str = "ground_truth.txt";
const DATASET_VERSION: u32 = 1;

/// One frame line of a manifest. Test frames carry the measured wall
/// distance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub id: usize,
    pub depth_file: String,
    pub corners_file: String,
    pub true_distance: Option<f64>,
}

impl FrameEntry {
    pub fn is_test(&self) -> bool {
        self.true_distance.is_some()
    }
}

/// Dataset description: sensors, board, a rough extrinsic and the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub board: BoardSpec,
    pub intr_rgb: CameraIntrinsics,
    /// Initial guess of the depth intrinsics.
    pub intr_depth: CameraIntrinsics,
    /// Initial guess of the camera-to-depth transform.
    pub extrinsic_guess: RigidTransform,
    /// Expected corner accuracy (pixels).
    pub sigma_c: f64,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# dataset manifest\n");
        let _ = writeln!(s, "version {DATASET_VERSION}");
        let b = &self.board;
        let _ = writeln!(s, "board {} {} {}", b.rows(), b.cols(), fmt_f64(b.square()));
        let _ = writeln!(s, "rgb_intrinsics {}", intrinsics_values(&self.intr_rgb));
        let _ = writeln!(s, "depth_intrinsics {}", intrinsics_values(&self.intr_depth));
        write_transform(&mut s, "extrinsic", &self.extrinsic_guess);
        let _ = writeln!(s, "sigma_c {}", fmt_f64(self.sigma_c));
        for f in &self.frames {
            let _ = write!(s, "frame {} {} {}", f.id, f.depth_file, f.corners_file);
            if let Some(d) = f.true_distance {
                let _ = write!(s, " {}", fmt_f64(d));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc = KeyValueDoc::parse(text, path);
        check_version(&doc)?;
        let b = doc.one("board")?;
        if b.values.len() != 3 {
            return Err(doc.error(format!("line {}: `board` expects rows cols square", b.line)));
        }
        let rc = doc.parse_all::<usize>(b, &b.values[..2])?;
        let board = BoardSpec::new(rc[0], rc[1], doc.parse_all::<f64>(b, &b.values[2..])?[0])?;
        let mut frames = Vec::new();
        let mut ids = HashSet::new();
        for line in doc.all("frame") {
            if !(3..=4).contains(&line.values.len()) {
                return Err(doc.error(format!(
                    "line {}: `frame` expects id depth_file corners_file [true_distance]",
                    line.line
                )));
            }
            let id: usize = doc.parse_all(line, &line.values[..1])?[0];
            if !ids.insert(id) {
                return Err(doc.error(format!("line {}: frame id {id} repeated", line.line)));
            }
            let true_distance = match line.values.get(3) {
                Some(_) => Some(doc.parse_all::<f64>(line, &line.values[3..])?[0]),
                None => None,
            };
            frames.push(FrameEntry {
                id,
                depth_file: line.values[1].clone(),
                corners_file: line.values[2].clone(),
                true_distance,
            });
        }
        Ok(Self {
            board,
            intr_rgb: parse_intrinsics(&doc, "rgb_intrinsics")?,
            intr_depth: parse_intrinsics(&doc, "depth_intrinsics")?,
            extrinsic_guess: read_transform(&doc, "extrinsic")?,
            sigma_c: doc.scalar("sigma_c")?,
            frames,
        })
    }
}

fn check_version(doc: &KeyValueDoc) -> Result<()> {
    let v: u32 = doc.scalar("version")?;
    if v != DATASET_VERSION {
        return Err(doc.error(format!("unsupported version {v}")));
    }
    Ok(())
}

fn write_transform(s: &mut String, prefix: &str, t: &RigidTransform) {
    let tr = t.translation();
    let _ = writeln!(s, "{prefix}_translation {} {} {}", fmt_f64(tr.x), fmt_f64(tr.y), fmt_f64(tr.z));
    let q = t.wxyz().map(fmt_f64);
    let _ = writeln!(s, "{prefix}_rotation {}", q.join(" "));
}

fn read_transform(doc: &KeyValueDoc, prefix: &str) -> Result<RigidTransform> {
    let t = doc.floats::<3>(&format!("{prefix}_translation"))?;
    Ok(RigidTransform::new(parse_rotation(doc, &format!("{prefix}_rotation"))?, Vec3::from(t)))
}

/// A frame loaded from disk with its manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub entry: FrameEntry,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<DatasetFrame>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &DatasetFrame> {
        self.frames.iter().filter(|f| !f.entry.is_test())
    }

    pub fn test(&self) -> impl Iterator<Item = &DatasetFrame> {
        self.frames.iter().filter(|f| f.entry.is_test())
    }
}

/// Writes the manifest plus one PGM and one corners CSV per frame. Frame
/// ids come from `frames`; `true_distances[k]` marks frame `k` as a test
/// frame.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, frames: &[Frame], true_distances: &[Option<f64>]) -> Result<DatasetManifest> {
    if frames.len() != true_distances.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} distances", frames.len()),
            got: format!("{}", true_distances.len()),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut m = manifest.clone();
    m.frames.clear();
    for (f, &true_distance) in frames.iter().zip(true_distances) {
        let entry = FrameEntry {
            id: f.id,
            depth_file: format!("depth_{:04}.pgm", f.id),
            corners_file: format!("corners_{:04}.csv", f.id),
            true_distance,
        };
        write_depth_pgm(&dir.join(&entry.depth_file), &f.depth)?;
        write_corners_csv(&dir.join(&entry.corners_file), &f.corners)?;
        m.frames.push(entry);
    }
    write_atomic(&dir.join(MANIFEST_NAME), m.to_text().as_bytes())?;
    Ok(m)
}

/// Reads a dataset directory; every referenced file must exist and match
/// the declared sensors and board.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_NAME);
    let manifest = DatasetManifest::parse(&read_text(&mpath)?, &mpath)?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let resolve = |name: &str| -> Result<PathBuf> {
            let p = dir.join(name);
            if !p.is_file() {
                return Err(Error::format(&mpath, format!("frame {} references missing file {name}", entry.id)));
            }
            Ok(p)
        };
        let depth = read_depth_pgm(&resolve(&entry.depth_file)?)?;
        let d = &manifest.intr_depth;
        if (depth.width(), depth.height()) != (d.width, d.height) {
            return Err(Error::format(
                dir.join(&entry.depth_file),
                format!("image is {}x{}, manifest says {}x{}", depth.width(), depth.height(), d.width, d.height),
            ));
        }
        let cpath = resolve(&entry.corners_file)?;
        let corners = read_corners_csv(&cpath)?;
        corners
            .validate(&manifest.board, &manifest.intr_rgb)
            .map_err(|e| Error::format(&cpath, e.to_string()))?;
        frames.push(DatasetFrame {
            entry: entry.clone(),
            frame: Frame {
                id: entry.id,
                depth,
                corners,
            },
        });
    }
    Ok(Dataset { manifest, frames })
}

/// Generator-side truth kept next to a synthetic dataset. Calibration never
/// reads it; evaluation may.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub extrinsic: RigidTransform,
    pub intr_depth: CameraIntrinsics,
    /// Global bias correction `true = s x + q x^2`.
    pub bias: (f64, f64),
    pub noise: bool,
    /// True wall plane in the depth frame, per frame id.
    pub walls: Vec<(usize, Plane)>,
}

impl GroundTruth {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# synthetic ground truth\n");
        let _ = writeln!(s, "version {DATASET_VERSION}");
        write_transform(&mut s, "extrinsic", &self.extrinsic);
        let _ = writeln!(s, "depth_intrinsics {}", intrinsics_values(&self.intr_depth));
        let _ = writeln!(s, "bias {} {}", fmt_f64(self.bias.0), fmt_f64(self.bias.1));
        let _ = writeln!(s, "noise {}", u8::from(self.noise));
        for (id, p) in &self.walls {
            let n = p.normal();
            let _ = writeln!(
                s,
                "wall {id} {} {} {} {}",
                fmt_f64(n.x),
                fmt_f64(n.y),
                fmt_f64(n.z),
                fmt_f64(p.offset())
            );
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc = KeyValueDoc::parse(text, path);
        check_version(&doc)?;
        let bias = doc.floats::<2>("bias")?;
        let mut walls = Vec::new();
        for line in doc.all("wall") {
            if line.values.len() != 5 {
                return Err(doc.error(format!("line {}: `wall` expects id nx ny nz d", line.line)));
            }
            let id: usize = doc.parse_all(line, &line.values[..1])?[0];
            let v = doc.parse_all::<f64>(line, &line.values[1..])?;
            walls.push((id, Plane::new(Vec3::new(v[0], v[1], v[2]), v[3])?));
        }
        Ok(Self {
            extrinsic: read_transform(&doc, "extrinsic")?,
            intr_depth: parse_intrinsics(&doc, "depth_intrinsics")?,
            bias: (bias[0], bias[1]),
            noise: parse_flag(&doc, "noise")?,
            walls,
        })
    }

    pub fn wall(&self, id: usize) -> Option<&Plane> {
        self.walls.iter().find(|(i, _)| *i == id).map(|(_, p)| p)
    }
}

fn parse_flag(doc: &KeyValueDoc, key: &str) -> Result<bool> {
    match doc.get::<String>(key, 1)?[0].as_str() {
        "1" | "true" | "on" => Ok(true),
        "0" | "false" | "off" => Ok(false),
        other => Err(doc.error(format!("`{key}` expects 0 or 1, found `{other}`"))),
    }
}

pub fn write_ground_truth(dir: &Path, gt: &GroundTruth) -> Result<()> {
    write_atomic(&dir.join(GROUND_TRUTH_NAME), gt.to_text().as_bytes())
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let p = dir.join(GROUND_TRUTH_NAME);
    GroundTruth::parse(&read_text(&p)?, &p)
}

/// Scene description: every key is optional and overrides the default
/// scene.
pub fn parse_scene(text: &str, path: &Path) -> Result<SceneParams> {
    let doc = KeyValueDoc::parse(text, path);
    let mut p = SceneParams::default();
    let known = [
        "version",
        "depth_intrinsics",
        "rgb_intrinsics",
        "extrinsic_translation",
        "extrinsic_rotation",
        "guess_translation",
        "guess_rotation",
        "board",
        "floor_distance",
        "distortion_rms",
        "distortion_depth",
        "distortion_bin",
        "distortion_tilt",
        "bias",
        "noise",
        "noise_model",
        "sigma_c",
        "max_range",
        "n_train",
        "n_test",
        "train_range",
        "test_range",
        "max_angle_deg",
        "seed",
    ];
    if let Some(l) = doc.lines().iter().find(|l| !known.contains(&l.key.as_str())) {
        return Err(doc.error(format!("line {}: unknown key `{}`", l.line, l.key)));
    }
    let has = |k: &str| doc.find(k).is_some();
    if has("version") {
        check_version(&doc)?;
    }
    if has("depth_intrinsics") {
        p.intr_depth = parse_intrinsics(&doc, "depth_intrinsics")?;
    }
    if has("rgb_intrinsics") {
        p.intr_rgb = parse_intrinsics(&doc, "rgb_intrinsics")?;
    }
    if has("extrinsic_translation") || has("extrinsic_rotation") {
        p.extrinsic = read_transform(&doc, "extrinsic")?;
    }
    if has("guess_translation") || has("guess_rotation") {
        p.extrinsic_guess = read_transform(&doc, "guess")?;
    }
    if let Some(b) = doc.find("board") {
        let v = doc.values::<f64>(b, 3)?;
        let rc = doc.parse_all::<usize>(b, &b.values[..2])?;
        p.board = BoardSpec::new(rc[0], rc[1], v[2])?;
    }
    if let Some(l) = doc.find("floor_distance") {
        p.floor_distance = match doc.values::<String>(l, 1)?[0].as_str() {
            "none" => None,
            _ => Some(doc.values::<f64>(l, 1)?[0]),
        };
    }
    let scalar = |k: &str, dst: &mut f64| -> Result<()> {
        if has(k) {
            *dst = doc.scalar(k)?;
        }
        Ok(())
    };
    scalar("distortion_rms", &mut p.distortion_rms)?;
    scalar("distortion_depth", &mut p.distortion_depth)?;
    scalar("sigma_c", &mut p.sigma_c)?;
    scalar("max_range", &mut p.max_range)?;
    scalar("max_angle_deg", &mut p.max_angle_deg)?;
    let pair = |k: &str, dst: &mut (f64, f64)| -> Result<()> {
        if has(k) {
            let v = doc.floats::<2>(k)?;
            *dst = (v[0], v[1]);
        }
        Ok(())
    };
    pair("distortion_tilt", &mut p.distortion_tilt)?;
    pair("bias", &mut p.bias)?;
    pair("train_range", &mut p.train_range)?;
    pair("test_range", &mut p.test_range)?;
    if has("distortion_bin") {
        p.distortion_bin = doc.scalar("distortion_bin")?;
    }
    if has("n_train") {
        p.n_train = doc.scalar("n_train")?;
    }
    if has("n_test") {
        p.n_test = doc.scalar("n_test")?;
    }
    if has("seed") {
        p.seed = doc.scalar("seed")?;
    }
    if has("noise") {
        p.noise = parse_flag(&doc, "noise")?;
    }
    if let Some(l) = doc.find("noise_model") {
        if l.values.is_empty() {
            return Err(doc.error(format!("line {}: `noise_model` needs coefficients", l.line)));
        }
        p.noise_model = NoiseModel::new(doc.parse_all(l, &l.values)?);
    }
    Ok(p)
}

pub fn render_scene(p: &SceneParams) -> String {
    let mut s = String::from("# synthetic scene\n");
    let f = fmt_f64;
    let _ = writeln!(s, "version {DATASET_VERSION}");
    let _ = writeln!(s, "depth_intrinsics {}", intrinsics_values(&p.intr_depth));
    let _ = writeln!(s, "rgb_intrinsics {}", intrinsics_values(&p.intr_rgb));
    write_transform(&mut s, "extrinsic", &p.extrinsic);
    write_transform(&mut s, "guess", &p.extrinsic_guess);
    let _ = writeln!(s, "board {} {} {}", p.board.rows(), p.board.cols(), f(p.board.square()));
    match p.floor_distance {
        Some(h) => {
            let _ = writeln!(s, "floor_distance {}", f(h));
        }
        None => s.push_str("floor_distance none\n"),
    }
    let _ = writeln!(s, "distortion_rms {}", f(p.distortion_rms));
    let _ = writeln!(s, "distortion_depth {}", f(p.distortion_depth));
    let _ = writeln!(s, "distortion_bin {}", p.distortion_bin);
    let _ = writeln!(s, "distortion_tilt {} {}", f(p.distortion_tilt.0), f(p.distortion_tilt.1));
    let _ = writeln!(s, "bias {} {}", f(p.bias.0), f(p.bias.1));
    let _ = writeln!(s, "noise {}", u8::from(p.noise));
    let nm: Vec<String> = p.noise_model.coeffs().iter().map(|&c| f(c)).collect();
    let _ = writeln!(s, "noise_model {}", nm.join(" "));
    let _ = writeln!(s, "sigma_c {}", f(p.sigma_c));
    let _ = writeln!(s, "max_range {}", f(p.max_range));
    let _ = writeln!(s, "n_train {}", p.n_train);
    let _ = writeln!(s, "n_test {}", p.n_test);
    let _ = writeln!(s, "train_range {} {}", f(p.train_range.0), f(p.train_range.1));
    let _ = writeln!(s, "test_range {} {}", f(p.test_range.0), f(p.test_range.1));
    let _ = writeln!(s, "max_angle_deg {}", f(p.max_angle_deg));
    let _ = writeln!(s, "seed {}", p.seed);
    s
}

pub fn read_scene(path: &Path) -> Result<SceneParams> {
    parse_scene(&read_text(path)?, path)
}

pub fn write_scene(path: &Path, p: &SceneParams) -> Result<()> {
    write_atomic(path, render_scene(p).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CornerGrid;
    use crate::geometry::{DepthImage, Vec2};

    fn manifest() -> DatasetManifest {
        let p = SceneParams::default();
        DatasetManifest {
            board: BoardSpec::new(3, 4, 0.05).unwrap(),
            intr_rgb: p.intr_rgb,
            intr_depth: CameraIntrinsics::pinhole(30.0, 30.0, 3.5, 2.5, 8, 6).unwrap(),
            extrinsic_guess: p.extrinsic_guess,
            sigma_c: 0.2,
            frames: Vec::new(),
        }
    }

    fn frame(id: usize) -> Frame {
        let depth = DepthImage::new(8, 6, (0..48).map(|k| if k % 7 == 0 { 0.0 } else { 1.0 + k as f64 * 1e-3 }).collect()).unwrap();
        let corners = CornerGrid::new(3, 4, (0..12).map(|k| Vec2::new(100.0 + k as f64 * 10.25, 200.0 + id as f64)).collect()).unwrap();
        Frame { id, depth, corners }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![frame(0), frame(1), frame(7)];
        let m = write_dataset(dir.path(), &manifest(), &frames, &[None, None, Some(2.5)]).unwrap();
        assert_eq!(m.frames.len(), 3);
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        assert_eq!(ds.frames.iter().map(|f| f.frame.clone()).collect::<Vec<_>>(), frames);
        assert_eq!(ds.train().count(), 2);
        assert_eq!(ds.test().next().unwrap().entry.true_distance, Some(2.5));
    }

    #[test]
    fn missing_files_and_repeated_ids() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &manifest(), &[frame(0), frame(1)], &[None, None]).unwrap();
        fs::remove_file(dir.path().join("corners_0001.csv")).unwrap();
        let e = read_dataset(dir.path()).unwrap_err();
        assert!(e.to_string().contains("missing file"), "{e}");

        let mut m = manifest();
        let entry = FrameEntry {
            id: 3,
            depth_file: "a.pgm".into(),
            corners_file: "a.csv".into(),
            true_distance: None,
        };
        m.frames = vec![entry.clone(), entry];
        assert!(DatasetManifest::parse(&m.to_text(), Path::new("m")).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let p = SceneParams::default();
        let gt = GroundTruth {
            extrinsic: p.extrinsic,
            intr_depth: p.intr_depth,
            bias: p.bias,
            noise: true,
            walls: vec![(4, Plane::new(Vec3::new(0.1, -0.2, 0.97).normalize(), 2.25).unwrap())],
        };
        let dir = tempfile::tempdir().unwrap();
        write_ground_truth(dir.path(), &gt).unwrap();
        let back = read_ground_truth(dir.path()).unwrap();
        assert_eq!(back, gt);
        assert!(back.wall(4).is_some() && back.wall(5).is_none());
    }

    #[test]
    fn scene_overrides_and_round_trip() {
        let p = parse_scene("n_train 12\nnoise 0\nfloor_distance 1.3\nbias 1 0\n", Path::new("s")).unwrap();
        assert_eq!((p.n_train, p.noise, p.floor_distance, p.bias), (12, false, Some(1.3), (1.0, 0.0)));
        assert_eq!(p.n_test, SceneParams::default().n_test);
        assert!(parse_scene("colour red\n", Path::new("s")).is_err());
        let mut q = SceneParams::default();
        q.distortion_tilt = (0.1, -1.0 / 3.0);
        assert_eq!(parse_scene(&render_scene(&q), Path::new("s")).unwrap(), q);
    }
}
