//! File formats: 16-bit PGM images, pose tables, scenario configs, result tables
//! and the dataset directory that ties them together.
//!
//! All writers go through [`write_atomic`], so a failed write never leaves a
//! partial file at the destination.

mod dataset;
mod pgm;
mod poses;
mod scenario;
mod tables;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use dataset::{read_dataset, write_dataset, Dataset};
pub use pgm::{decode_pgm16, encode_pgm16, read_pgm16, write_pgm16};
pub use poses::{read_poses_csv, write_poses_csv, PoseRow};
pub use scenario::{read_scenario, scenario_from_json, write_scenario, BoundsDeg, ScenarioConfig, SfpDeg};
pub use tables::{format_sig, write_model_report_csv, write_sweep_csv, write_trace_csv, SweepRow, SweepTable};

/// Writes `path` via a temporary sibling file renamed into place on success.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".savo-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(path, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, |w| w.write_all(b"hello")).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");

        let failed = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            Err(std::io::Error::other("boom"))
        });
        assert!(failed.is_err());
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
