//! Pose tables: `image_id,x,y,z,qw,qx,qy,qz`, one camera per row.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{rotation_from_wxyz, CameraPose, Vec3};

pub const POSE_HEADER: [&str; 8] = ["image_id", "x", "y", "z", "qw", "qx", "qy", "qz"];

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRow {
    pub image_id: String,
    pub pose: CameraPose,
}

/// Numbers are written in shortest round-trip form, so reading back is exact.
pub fn write_poses_csv(path: &Path, rows: &[PoseRow]) -> Result<()> {
    super::write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(POSE_HEADER)?;
        for r in rows {
            let p = &r.pose.position;
            let q = r.pose.rotation.quaternion();
            let nums = [p.x, p.y, p.z, q.w, q.i, q.j, q.k].map(|v| v.to_string());
            out.write_record(std::iter::once(r.image_id.as_str()).chain(nums.iter().map(String::as_str)))?;
        }
        out.flush()
    })
}

pub fn read_poses_csv(path: &Path) -> Result<Vec<PoseRow>> {
    let bytes = super::read_file(path)?;
    parse_poses(&bytes, path)
}

pub(crate) fn parse_poses(bytes: &[u8], path: &Path) -> Result<Vec<PoseRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, "row 1", e.to_string()))?
        .clone();
    for (k, name) in POSE_HEADER.iter().enumerate() {
        match header.get(k) {
            Some(h) if h == *name => {}
            Some(h) => {
                return Err(Error::parse(path, "row 1", format!("column {} is '{h}', expected '{name}'", k + 1)))
            }
            None => return Err(Error::parse(path, "row 1", format!("missing column '{name}'"))),
        }
    }
    if header.len() > POSE_HEADER.len() {
        return Err(Error::parse(path, "row 1", format!("unexpected extra column '{}'", &header[POSE_HEADER.len()])));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, format!("row {line}"), e.to_string())
        })?;
        let row = rec.position().map_or(0, |p| p.line());
        let at = format!("row {row}");
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(path, at, "empty image_id"));
        }
        let mut nums = [0.0; 7];
        for (k, v) in nums.iter_mut().enumerate() {
            let field = &rec[k + 1];
            *v = field
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, at.clone(), format!("{} = '{field}' is not a finite number", POSE_HEADER[k + 1])))?;
        }
        let [x, y, z, qw, qx, qy, qz] = nums;
        let rotation = rotation_from_wxyz(qw, qx, qy, qz).map_err(|e| Error::parse(path, at.clone(), e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::parse(path, at, format!("duplicate image_id '{id}'")));
        }
        rows.push(PoseRow {
            image_id: id,
            pose: CameraPose::new(Vec3::new(x, y, z), rotation),
        });
    }
    Ok(rows)
}
