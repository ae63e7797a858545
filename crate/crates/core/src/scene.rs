//! Procedural occluded thermal scenes and posed single-camera renders.
//!
//! Everything here is a pure function of the configuration: ground texture and
//! occluder occupancy come from stateless 64-bit hashes of cell indices, so any
//! point of an unbounded scene can be queried in O(1) without stored maps.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics, Vec3};
use crate::integrator::{GridSpec, SfpGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetShape {
    Disk { radius: f64 },
    Rectangle { half_extents: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub shape: TargetShape,
    pub center: [f64; 2],
    pub value: f64,
}

impl Target {
    pub fn disk(center: [f64; 2], radius: f64, value: f64) -> Self {
        Self {
            shape: TargetShape::Disk { radius },
            center,
            value,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        match self.shape {
            TargetShape::Disk { radius } => dx * dx + dy * dy <= radius * radius,
            TargetShape::Rectangle { half_extents } => {
                dx.abs() <= half_extents[0] && dy.abs() <= half_extents[1]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            TargetShape::Disk { radius } => radius > 0.0,
            TargetShape::Rectangle { half_extents } => half_extents[0] > 0.0 && half_extents[1] > 0.0,
        };
        if !ok {
            return Err(Error::invalid("target size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.value) {
            return Err(Error::invalid(format!("target value {} outside [0, 1]", self.value)));
        }
        Ok(())
    }
}

/// A thin horizontal layer of square occluder cells, each independently
/// occupied with probability `density`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderLayer {
    pub height: f64,
    pub density: f64,
    pub cell_size: f64,
    pub value_mean: f64,
    pub value_stddev: f64,
    pub seed: u64,
}

impl OccluderLayer {
    pub fn validate(&self) -> Result<()> {
        match self.invalid_field() {
            Some((_, msg)) => Err(Error::invalid(msg)),
            None => Ok(()),
        }
    }

    /// The first out-of-domain field and what is wrong with it.
    pub(crate) fn invalid_field(&self) -> Option<(&'static str, String)> {
        if !(0.0..=1.0).contains(&self.density) {
            return Some(("density", format!("occluder density {} outside [0, 1]", self.density)));
        }
        if !(self.cell_size > 0.0) {
            return Some(("cell_size", "occluder cell size must be positive".into()));
        }
        if !(self.height > 0.0) {
            return Some(("height", "occluder layer must be above ground".into()));
        }
        if !(0.0..=1.0).contains(&self.value_mean) {
            return Some(("value_mean", "occluder value mean must lie in [0, 1]".into()));
        }
        if !(self.value_stddev >= 0.0) {
            return Some(("value_stddev", "occluder value stddev must be non-negative".into()));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub ground_background: f64,
    #[serde(default)]
    pub ground_noise_stddev: f64,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub layers: Vec<OccluderLayer>,
    #[serde(default)]
    pub seed: u64,
}

impl SceneConfig {
    /// Flat ground with no targets and no occluders.
    pub fn uniform(value: f64) -> Self {
        Self {
            ground_background: value,
            ground_noise_stddev: 0.0,
            targets: Vec::new(),
            layers: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ground_background) {
            return Err(Error::invalid("ground background outside [0, 1]"));
        }
        if !(self.ground_noise_stddev >= 0.0) {
            return Err(Error::invalid("ground noise stddev must be non-negative"));
        }
        for t in &self.targets {
            t.validate()?;
        }
        for l in &self.layers {
            l.validate()?;
        }
        Ok(())
    }

    /// Probability that a ray to the ground passes at least one occluder when
    /// layers are independent.
    pub fn total_occlusion_density(&self) -> f64 {
        1.0 - self.layers.iter().map(|l| 1.0 - l.density).product::<f64>()
    }

    pub fn max_layer_height(&self) -> f64 {
        self.layers.iter().map(|l| l.height).fold(0.0, f64::max)
    }
}

/// Single-channel thermal frame, row-major, normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl ThermalImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("image contains non-finite pixels"));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

// Stateless hashing. Each (cell, seed, stream) triple maps to an independent
// 64-bit value; streams separate occupancy from value draws.

const STREAM_OCCUPANCY: u64 = 1;
const STREAM_VALUE_A: u64 = 2;
const STREAM_VALUE_B: u64 = 3;
const STREAM_GROUND_A: u64 = 4;
const STREAM_GROUND_B: u64 = 5;
const STREAM_JITTER: u64 = 6;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn hash_cell(ix: i64, iy: i64, seed: u64, stream: u64) -> u64 {
    let mut h = mix64(seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    h = mix64(h ^ (ix as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix64(h ^ (iy as u64).wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Uniform deviate in `[0, 1)` with 53 random bits.
#[inline]
pub(crate) fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal deviate from two hashes (Box-Muller).
#[inline]
fn gaussian_from(h1: u64, h2: u64) -> f64 {
    let u1 = 1.0 - unit_f64(h1); // (0, 1]
    let u2 = unit_f64(h2);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

#[inline]
fn floor_index(v: f64) -> i64 {
    v.floor() as i64
}

/// Occlusion-free signal at ground position `(x, y)`.
pub fn ground_signal_at(scene: &SceneConfig, x: f64, y: f64) -> f64 {
    if let Some(t) = scene.targets.iter().rev().find(|t| t.contains(x, y)) {
        return t.value;
    }
    let mut v = scene.ground_background;
    if scene.ground_noise_stddev > 0.0 {
        let (ix, iy) = (floor_index(x), floor_index(y));
        let z = gaussian_from(
            hash_cell(ix, iy, scene.seed, STREAM_GROUND_A),
            hash_cell(ix, iy, scene.seed, STREAM_GROUND_B),
        );
        v += scene.ground_noise_stddev * z;
    }
    v.clamp(0.0, 1.0)
}

/// Value of the occluder cell containing `(x, y)`, or `None` when the cell is empty.
#[inline]
pub fn occluder_sample(layer: &OccluderLayer, x: f64, y: f64) -> Option<f64> {
    let ix = floor_index(x / layer.cell_size);
    let iy = floor_index(y / layer.cell_size);
    let u = unit_f64(hash_cell(ix, iy, layer.seed, STREAM_OCCUPANCY));
    if u >= layer.density {
        return None;
    }
    let mut v = layer.value_mean;
    if layer.value_stddev > 0.0 {
        let z = gaussian_from(
            hash_cell(ix, iy, layer.seed, STREAM_VALUE_A),
            hash_cell(ix, iy, layer.seed, STREAM_VALUE_B),
        );
        v += layer.value_stddev * z;
    }
    Some(v.clamp(0.0, 1.0))
}

/// Renders what a posed pinhole camera sees: the first occupied occluder
/// cell along each pixel ray, else the ground signal where the ray meets `z = 0`.
pub fn render_view(scene: &SceneConfig, pose: &CameraPose, intr: &Intrinsics) -> Result<ThermalImage> {
    let origin = pose.position;
    if origin.z <= scene.max_layer_height() {
        return Err(Error::Geometry(format!(
            "camera at z={} is not above every occluder layer",
            origin.z
        )));
    }
    let mut layers: Vec<&OccluderLayer> = scene.layers.iter().collect();
    layers.sort_by(|a, b| b.height.total_cmp(&a.height));

    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut pixels = vec![0f32; w * h];
    pixels
        .par_chunks_mut(w)
        .enumerate()
        .try_for_each(|(row, out)| -> Result<()> {
            let my = (row as f64 - intr.cy) / intr.fy;
            for (col, px) in out.iter_mut().enumerate() {
                let mx = (col as f64 - intr.cx) / intr.fx;
                // Unnormalized direction is enough for horizontal-plane hits.
                let dir = pose.rotation * Vec3::new(mx, my, 1.0);
                if dir.z >= 0.0 {
                    return Err(Error::Geometry(format!(
                        "pixel ({col}, {row}) looks upward or level; pose is misconfigured"
                    )));
                }
                let mut value = None;
                for layer in &layers {
                    let t = (layer.height - origin.z) / dir.z;
                    let v = occluder_sample(layer, origin.x + t * dir.x, origin.y + t * dir.y);
                    if v.is_some() {
                        value = v;
                        break;
                    }
                }
                let value = value.unwrap_or_else(|| {
                    let t = -origin.z / dir.z;
                    ground_signal_at(scene, origin.x + t * dir.x, origin.y + t * dir.y)
                });
                *px = value as f32;
            }
            Ok(())
        })?;
    Ok(ThermalImage {
        width: w,
        height: h,
        pixels,
    })
}

/// Occlusion-free reference on a level ground grid.
pub fn render_ground_truth(scene: &SceneConfig, grid: &GridSpec) -> Result<ThermalImage> {
    ground_truth_on(scene, &SfpGrid::ground(grid)?)
}

/// Occlusion-free reference sampled at the vertical projection of each grid point.
pub fn ground_truth_on(scene: &SceneConfig, grid: &SfpGrid) -> Result<ThermalImage> {
    let (w, h) = (grid.width, grid.height);
    let mut pixels = vec![0f32; w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        for (i, px) in row.iter_mut().enumerate() {
            let p = grid.world_point(i, j);
            *px = ground_signal_at(scene, p.x, p.y) as f32;
        }
    });
    ThermalImage::new(w, h, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosePattern {
    /// Row-major lattice.
    Grid,
    /// Lattice flown boustrophedon: odd rows reversed.
    Serpentine,
}

/// Sampling layout of the synthetic aperture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApertureSpec {
    pub count: usize,
    /// Area of the square aperture in m^2.
    pub area: f64,
    pub altitude: f64,
    #[serde(default = "default_pattern")]
    pub pattern: PosePattern,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub jitter_seed: u64,
}

fn default_pattern() -> PosePattern {
    PosePattern::Grid
}

impl ApertureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("aperture needs at least one pose"));
        }
        if !(self.area > 0.0) || !(self.altitude > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::invalid(
                "aperture area and altitude must be positive, jitter non-negative",
            ));
        }
        Ok(())
    }

    pub fn side(&self) -> f64 {
        self.area.sqrt()
    }

    /// Center of the synthetic aperture plane.
    pub fn sap_origin(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.altitude)
    }
}

/// Nadir poses on a lattice filling the square aperture centered at the
/// origin, optionally jittered by up to `jitter` meters per axis.
pub fn generate_poses(spec: &ApertureSpec) -> Result<Vec<CameraPose>> {
    spec.validate()?;
    let n = spec.count;
    let side = spec.side();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (dx, dy) = (side / cols as f64, side / rows as f64);
    let half = side / 2.0;

    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let r = k / cols;
        let mut c = k % cols;
        if spec.pattern == PosePattern::Serpentine && r % 2 == 1 {
            c = cols - 1 - c;
        }
        let mut x = -half + (c as f64 + 0.5) * dx;
        // first row is the northern edge
        let mut y = half - (r as f64 + 0.5) * dy;
        if spec.jitter > 0.0 {
            let jx = unit_f64(hash_cell(k as i64, 0, spec.jitter_seed, STREAM_JITTER));
            let jy = unit_f64(hash_cell(k as i64, 1, spec.jitter_seed, STREAM_JITTER));
            x = (x + spec.jitter * (2.0 * jx - 1.0)).clamp(-half, half);
            y = (y + spec.jitter * (2.0 * jy - 1.0)).clamp(-half, half);
        }
        poses.push(CameraPose::nadir(Vec3::new(x, y, spec.altitude)));
    }
    Ok(poses)
}
