//! Dataset directories:
//!
//! ```text
//! dataset.json       intrinsics and synthetic aperture origin
//! poses.csv          one row per recording, in integration order
//! images/<id>.pgm    16-bit recordings
//! scenario.json      present for simulated data; enables ground truth
//! ```

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::poses::{read_poses_csv, write_poses_csv, PoseRow};
use super::scenario::{read_scenario, write_scenario, ScenarioConfig};
use super::{read_pgm16, write_pgm16};
use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics, SfpParams, Vec3};
use crate::integrator::{integrate, GridSpec, IntegralImage, SfpGrid};
use crate::metrics::Roi;
use crate::scene::{generate_poses, ground_truth_on, render_view, ThermalImage};

const META_FILE: &str = "dataset.json";
const POSES_FILE: &str = "poses.csv";
const IMAGES_DIR: &str = "images";
const SCENARIO_FILE: &str = "scenario.json";

/// Posed thermal recordings sharing one camera. Record `k` is
/// `(image_ids[k], poses[k], images[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: Intrinsics,
    pub sap_origin: Vec3,
    pub image_ids: Vec<String>,
    pub poses: Vec<CameraPose>,
    pub images: Vec<ThermalImage>,
    /// The generating scenario of simulated data.
    pub scenario: Option<ScenarioConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    intrinsics: Intrinsics,
    sap_origin: [f64; 3],
}

impl Dataset {
    /// Renders every recording of `cfg`.
    pub fn simulate(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let poses = generate_poses(&cfg.aperture)?;
        let images = poses
            .iter()
            .map(|p| render_view(&cfg.scene, p, &cfg.intrinsics))
            .collect::<Result<Vec<_>>>()?;
        let width = poses.len().to_string().len().max(4);
        let ds = Self {
            intrinsics: cfg.intrinsics,
            sap_origin: cfg.aperture.sap_origin(),
            image_ids: (0..poses.len()).map(|k| format!("img{k:0width$}")).collect(),
            poses,
            images,
            scenario: Some(cfg.clone()),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Empty("dataset has no recordings".into()));
        }
        if self.images.len() != self.poses.len() || self.images.len() != self.image_ids.len() {
            return Err(Error::invalid(format!(
                "{} ids, {} poses and {} images",
                self.image_ids.len(),
                self.poses.len(),
                self.images.len()
            )));
        }
        self.intrinsics.validate()?;
        let mut seen = HashSet::new();
        for (id, img) in self.image_ids.iter().zip(&self.images) {
            check_id(id)?;
            if !seen.insert(id) {
                return Err(Error::invalid(format!("duplicate image id '{id}'")));
            }
            if (img.width, img.height) != (self.intrinsics.width as usize, self.intrinsics.height as usize) {
                return Err(Error::invalid(format!(
                    "image '{id}' is {}x{}, camera is {}x{}",
                    img.width, img.height, self.intrinsics.width, self.intrinsics.height
                )));
            }
        }
        Ok(())
    }

    pub fn integrate(&self, sfp: &SfpParams, grid: &GridSpec) -> Result<IntegralImage> {
        integrate(&self.images, &self.poses, &self.intrinsics, &self.sap_origin, sfp, grid)
    }

    /// Occlusion-free reference on the focal plane of `img`, for simulated data.
    pub fn ground_truth(&self, img: &IntegralImage) -> Option<Result<ThermalImage>> {
        let cfg = self.scenario.as_ref()?;
        Some(
            SfpGrid::for_sfp(&img.grid, &img.sfp, &self.sap_origin)
                .and_then(|grid| ground_truth_on(&cfg.scene, &grid)),
        )
    }

    /// `1 - MSE` against the ground truth over covered pixels of `roi`.
    pub fn true_visibility(&self, img: &IntegralImage, roi: &Roi) -> Option<Result<f64>> {
        let truth = self.ground_truth(img)?;
        Some(truth.and_then(|t| crate::metrics::visibility_against(img, &t, roi)))
    }
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"_-.".contains(&b));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "image id '{id}' must be a plain file name of letters, digits, '_', '-' or '.'"
        )))
    }
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let images_dir = dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    ds.image_ids
        .par_iter()
        .zip(&ds.images)
        .try_for_each(|(id, img)| write_pgm16(&images_dir.join(format!("{id}.pgm")), img))?;
    let rows: Vec<PoseRow> = ds
        .image_ids
        .iter()
        .zip(&ds.poses)
        .map(|(id, pose)| PoseRow {
            image_id: id.clone(),
            pose: *pose,
        })
        .collect();
    write_poses_csv(&dir.join(POSES_FILE), &rows)?;
    if let Some(cfg) = &ds.scenario {
        write_scenario(&dir.join(SCENARIO_FILE), cfg)?;
    }
    let meta = Meta {
        intrinsics: ds.intrinsics,
        sap_origin: [ds.sap_origin.x, ds.sap_origin.y, ds.sap_origin.z],
    };
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    super::write_atomic(&dir.join(META_FILE), |w| w.write_all(text.as_bytes()))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let meta_path = dir.join(META_FILE);
    let bytes = super::read_file(&meta_path)?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let meta: Meta = serde_path_to_error::deserialize(de).map_err(|e| {
        let at = super::scenario::json_pointer(e.path());
        Error::parse(&meta_path, at, e.into_inner().to_string())
    })?;
    meta.intrinsics
        .validate()
        .map_err(|e| Error::parse(&meta_path, "/intrinsics", e.to_string()))?;
    if meta.sap_origin.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(&meta_path, "/sap_origin", "non-finite coordinate"));
    }

    let poses_path = dir.join(POSES_FILE);
    let rows = read_poses_csv(&poses_path)?;
    if rows.is_empty() {
        return Err(Error::parse(&poses_path, "row 2", "no recordings listed"));
    }
    for (k, r) in rows.iter().enumerate() {
        check_id(&r.image_id).map_err(|e| Error::parse(&poses_path, format!("row {}", k + 2), e.to_string()))?;
    }
    let (w, h) = (meta.intrinsics.width as usize, meta.intrinsics.height as usize);
    let images = rows
        .par_iter()
        .map(|r| {
            let path = dir.join(IMAGES_DIR).join(format!("{}.pgm", r.image_id));
            let img = read_pgm16(&path)?;
            if (img.width, img.height) != (w, h) {
                return Err(Error::parse(
                    &path,
                    "byte 3",
                    format!("image is {}x{}, camera is {w}x{h}", img.width, img.height),
                ));
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let scenario_path = dir.join(SCENARIO_FILE);
    let scenario = if scenario_path.exists() {
        Some(read_scenario(&scenario_path)?)
    } else {
        None
    };
    let ds = Dataset {
        intrinsics: meta.intrinsics,
        sap_origin: Vec3::from(meta.sap_origin),
        image_ids: rows.iter().map(|r| r.image_id.clone()).collect(),
        poses: rows.iter().map(|r| r.pose).collect(),
        images,
        scenario,
    };
    Ok(ds)
}
