//! File formats: 16-bit PGM depth images, corner CSV files, line-oriented
//! `key value...` text files (calibration, manifest, scene, ground truth),
//! ASCII PLY clouds and CSV reports.
//!
//! Every writer goes through a temporary file that is renamed into place, so
//! a failed write never leaves a partial file behind.

mod calibration;
mod corners;
mod dataset;
mod keyvalue;
mod pgm;
mod ply;

pub use calibration::{read_calibration, write_calibration, Calibration, CALIBRATION_VERSION};
pub use corners::{parse_corners_csv, read_corners_csv, render_corners_csv, write_corners_csv};
pub use dataset::{
    parse_scene, read_dataset, read_ground_truth, read_scene, render_scene, write_dataset, write_ground_truth,
    write_scene, Dataset, DatasetFrame, DatasetManifest, FrameEntry, GroundTruth, GROUND_TRUTH_NAME, MANIFEST_NAME,
};
pub use keyvalue::{KeyValueDoc, KeyValueLine};
pub use pgm::{decode_depth_pgm, encode_depth_pgm, read_depth_pgm, write_depth_pgm};
pub use ply::{render_ply, write_ply};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))
}

/// Float with 17 significant digits; parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV report: a header line and one line per row.
pub fn render_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, render_csv(header, rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-17, 1e300, 285.0, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/a.txt"), b"x").is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn csv_layout() {
        let s = render_csv(&["a", "b"], &[vec!["1".into(), "2".into()]]);
        assert_eq!(s, "a,b\n1,2\n");
    }
}
