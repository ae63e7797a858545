//! Synthetic-aperture integration onto a synthetic focal plane.
//!
//! The kernel gathers: every grid point on the focal plane is projected into
//! every recording and the in-bounds bilinear samples are averaged. Work is
//! split over bands of grid rows; inside a band the cameras are visited in
//! ascending index order, so each pixel's sum is accumulated in the same order
//! whatever the number of workers and the result is bit-reproducible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sfp_plane, CameraPose, Intrinsics, Plane, SfpParams, Vec3, MIN_DEPTH};
use crate::metrics::Roi;
use crate::scene::ThermalImage;

/// Discretization of a focal plane: `extent` meters around `center` (in the
/// plane's own axes) at `resolution` meters per pixel. Image rows run from the
/// plane's +y side to its -y side so level grids display north-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub center: [f64; 2],
    pub extent: [f64; 2],
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            extent: [30.0, 30.0],
            resolution: 0.06,
        }
    }
}

impl GridSpec {
    pub fn new(center: [f64; 2], extent: [f64; 2], resolution: f64) -> Result<Self> {
        let g = Self {
            center,
            extent,
            resolution,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return Err(Error::invalid("grid extent must be positive"));
        }
        Ok(())
    }

    /// Pixel dimensions `(width, height)`: extent / resolution, rounded.
    pub fn dims(&self) -> (usize, usize) {
        (
            (self.extent[0] / self.resolution).round() as usize,
            (self.extent[1] / self.resolution).round() as usize,
        )
    }

    /// In-plane coordinates of the center of pixel `(i, j)`.
    #[inline]
    pub fn local_coords(&self, i: usize, j: usize) -> (f64, f64) {
        let (w, h) = self.dims();
        let a = self.center[0] + (i as f64 + 0.5 - w as f64 / 2.0) * self.resolution;
        let b = self.center[1] - (j as f64 + 0.5 - h as f64 / 2.0) * self.resolution;
        (a, b)
    }

    /// The sub-grid covering `roi` with the same pixel pitch.
    pub fn crop(&self, roi: &Roi) -> Result<Self> {
        let (w, h) = self.dims();
        roi.check_within(w, h)?;
        let (rw, rh) = (roi.width(), roi.height());
        let res = self.resolution;
        Ok(Self {
            center: [
                self.center[0] + (roi.x0 as f64 + rw as f64 / 2.0 - w as f64 / 2.0) * res,
                self.center[1] - (roi.y0 as f64 + rh as f64 / 2.0 - h as f64 / 2.0) * res,
            ],
            extent: [rw as f64 * res, rh as f64 * res],
            resolution: res,
        })
    }
}

/// A grid laid out on a concrete plane in world coordinates: pixel `(i, j)`
/// sits at `origin + i * step_i + j * step_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfpGrid {
    pub width: usize,
    pub height: usize,
    pub origin: Vec3,
    pub step_i: Vec3,
    pub step_j: Vec3,
}

impl SfpGrid {
    pub fn on_plane(grid: &GridSpec, plane: &Plane) -> Result<Self> {
        grid.validate()?;
        let (width, height) = grid.dims();
        if width == 0 || height == 0 {
            return Err(Error::Empty(format!(
                "grid {:?} m at {} m/px resolves to zero pixels",
                grid.extent, grid.resolution
            )));
        }
        let (ex, ey) = plane.in_plane_axes();
        let (a, b) = grid.local_coords(0, 0);
        Ok(Self {
            width,
            height,
            origin: plane.point + ex * a + ey * b,
            step_i: ex * grid.resolution,
            step_j: -ey * grid.resolution,
        })
    }

    pub fn for_sfp(grid: &GridSpec, sfp: &SfpParams, sap_origin: &Vec3) -> Result<Self> {
        Self::on_plane(grid, &sfp_plane(sfp, sap_origin))
    }

    /// Level grid on the ground plane `z = 0`, centered at the world origin.
    pub fn ground(grid: &GridSpec) -> Result<Self> {
        Self::on_plane(grid, &Plane::new(Vec3::zeros(), Vec3::z())?)
    }

    #[inline]
    pub fn world_point(&self, i: usize, j: usize) -> Vec3 {
        self.origin + self.step_i * i as f64 + self.step_j * j as f64
    }

    /// Image coordinates of grid pixel `(i, j)` in one recording, computed
    /// exactly as the integration kernel does.
    pub fn camera_pixel(&self, pose: &CameraPose, intr: &Intrinsics, i: usize, j: usize) -> Option<(f64, f64)> {
        let map = CameraMap::new(self, pose, intr);
        let (row, _) = map.row(j);
        map.pixel(&row, i as f64)
    }
}

/// Per-camera affine map from grid indices to camera-frame coordinates.
#[derive(Debug, Clone, Copy)]
struct CameraMap {
    base: [f64; 3],
    di: [f64; 3],
    dj: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl CameraMap {
    fn new(grid: &SfpGrid, pose: &CameraPose, intr: &Intrinsics) -> Self {
        let base = pose.world_to_camera(&grid.origin);
        let di = pose.rotation.inverse_transform_vector(&grid.step_i);
        let dj = pose.rotation.inverse_transform_vector(&grid.step_j);
        Self {
            base: base.into(),
            di: di.into(),
            dj: dj.into(),
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
        }
    }

    /// Camera-frame start of row `j` and the per-column increment.
    #[inline]
    fn row(&self, j: usize) -> ([f64; 3], [f64; 3]) {
        let jf = j as f64;
        (
            [
                self.base[0] + jf * self.dj[0],
                self.base[1] + jf * self.dj[1],
                self.base[2] + jf * self.dj[2],
            ],
            self.di,
        )
    }

    /// `pixel` for up to `CHUNK` columns starting at `start`, split into a
    /// projection pass the compiler can vectorize. The returned flags mark
    /// columns in front of the camera.
    #[inline(always)]
    fn project_run(&self, row: &[f64; 3], start: f64, u: &mut [f64], v: &mut [f64]) -> [bool; CHUNK] {
        let mut in_front = [false; CHUNK];
        for (k, ((u, v), front)) in u.iter_mut().zip(v.iter_mut()).zip(in_front.iter_mut()).enumerate() {
            let i = start + k as f64;
            let z = row[2] + i * self.di[2];
            let x = row[0] + i * self.di[0];
            let y = row[1] + i * self.di[1];
            let inv = 1.0 / z;
            *u = self.fx * x * inv + self.cx;
            *v = self.fy * y * inv + self.cy;
            *front = z > MIN_DEPTH;
        }
        in_front
    }

    #[inline(always)]
    fn pixel(&self, row: &[f64; 3], i: f64) -> Option<(f64, f64)> {
        let z = row[2] + i * self.di[2];
        if z <= MIN_DEPTH {
            return None;
        }
        let x = row[0] + i * self.di[0];
        let y = row[1] + i * self.di[1];
        let inv = 1.0 / z;
        Some((self.fx * x * inv + self.cx, self.fy * y * inv + self.cy))
    }
}

/// Bilinear interpolation with pixel centers at integer coordinates;
/// `None` outside `[0, width-1] x [0, height-1]`.
#[inline]
pub fn sample_bilinear(img: &ThermalImage, u: f64, v: f64) -> Option<f64> {
    bilinear(&img.pixels, img.width, img.height, u, v)
}

#[inline(always)]
fn bilinear(px: &[f32], w: usize, h: usize, u: f64, v: f64) -> Option<f64> {
    Sampler::new(px, w, h).at(u, v)
}

/// Bilinear lookup into one image with the bounds precomputed.
#[derive(Clone, Copy)]
struct Sampler<'a> {
    px: &'a [f32],
    w: usize,
    h: usize,
    umax: f64,
    vmax: f64,
    // last valid stencil origin; i32 converts to and from f64 in one instruction
    x_last: i32,
    y_last: i32,
}

impl<'a> Sampler<'a> {
    #[inline(always)]
    fn new(px: &'a [f32], w: usize, h: usize) -> Self {
        Self {
            px,
            w,
            h,
            umax: (w - 1) as f64,
            vmax: (h - 1) as f64,
            x_last: w.saturating_sub(2) as i32,
            y_last: h.saturating_sub(2) as i32,
        }
    }

    #[inline(always)]
    fn at(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0 && u <= self.umax && v <= self.vmax) {
            return None;
        }
        if self.w < 2 || self.h < 2 {
            return Some(self.at_degenerate(u, v));
        }
        // clamping to the last stencil origin keeps the 2x2 stencil inside; t is 1 there
        let x0 = (u as i32).min(self.x_last);
        let y0 = (v as i32).min(self.y_last);
        let tx = u - x0 as f64;
        let ty = v - y0 as f64;
        let k = y0 as usize * self.w + x0 as usize;
        let quad = &self.px[k..k + self.w + 2];
        let (a, b) = (quad[0] as f64, quad[1] as f64);
        let (c, d) = (quad[self.w] as f64, quad[self.w + 1] as f64);
        // (1 - t) * p + t * q is exact at t = 0 and t = 1
        let upper = (1.0 - tx) * a + tx * b;
        let lower = (1.0 - tx) * c + tx * d;
        Some((1.0 - ty) * upper + ty * lower)
    }

    #[cold]
    fn at_degenerate(&self, u: f64, v: f64) -> f64 {
        let x0 = (u as usize).min(self.w.saturating_sub(2));
        let y0 = (v as usize).min(self.h.saturating_sub(2));
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let tx = u - x0 as f64;
        let ty = v - y0 as f64;
        let p = |x: usize, y: usize| self.px[y * self.w + x] as f64;
        let upper = (1.0 - tx) * p(x0, y0) + tx * p(x1, y0);
        let lower = (1.0 - tx) * p(x0, y1) + tx * p(x1, y1);
        (1.0 - ty) * upper + ty * lower
    }
}

/// Per-pixel average of all recordings that see each focal-plane grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage {
    pub width: usize,
    pub height: usize,
    /// Average value; 0 where `count` is 0.
    pub mean: Vec<f64>,
    pub count: Vec<u32>,
    pub grid: GridSpec,
    pub sfp: SfpParams,
}

impl IntegralImage {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.count[self.index(x, y)] > 0
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.mean[self.index(x, y)]
    }

    pub fn max_count(&self) -> u32 {
        self.count.iter().copied().max().unwrap_or(0)
    }

    /// The average as a displayable image, invalid pixels set to 0.
    pub fn to_thermal(&self) -> ThermalImage {
        ThermalImage {
            width: self.width,
            height: self.height,
            pixels: self.mean.iter().map(|&m| m.clamp(0.0, 1.0) as f32).collect(),
        }
    }

    /// Sample counts scaled by `1 / n`.
    pub fn count_map(&self, n: usize) -> ThermalImage {
        let scale = 1.0 / n.max(1) as f64;
        ThermalImage {
            width: self.width,
            height: self.height,
            pixels: self
                .count
                .iter()
                .map(|&c| (c as f64 * scale).min(1.0) as f32)
                .collect(),
        }
    }
}

const ROWS_PER_TASK: usize = 4;
/// Columns projected per vectorized pass.
const CHUNK: usize = 64;

/// Integrates `images` (recorded from `poses`) on the focal plane `sfp`.
/// Runs on the current rayon pool.
pub fn integrate(
    images: &[ThermalImage],
    poses: &[CameraPose],
    intr: &Intrinsics,
    sap_origin: &Vec3,
    sfp: &SfpParams,
    grid: &GridSpec,
) -> Result<IntegralImage> {
    if images.is_empty() {
        return Err(Error::Empty("no recordings to integrate".into()));
    }
    if images.len() != poses.len() {
        return Err(Error::invalid(format!(
            "{} images but {} poses",
            images.len(),
            poses.len()
        )));
    }
    let (iw, ih) = (intr.width as usize, intr.height as usize);
    if let Some(bad) = images.iter().position(|im| im.width != iw || im.height != ih) {
        return Err(Error::invalid(format!(
            "image {bad} is {}x{}, intrinsics say {iw}x{ih}",
            images[bad].width, images[bad].height
        )));
    }
    let sg = SfpGrid::for_sfp(grid, sfp, sap_origin)?;
    let maps: Vec<CameraMap> = poses.iter().map(|p| CameraMap::new(&sg, p, intr)).collect();

    let (w, h) = (sg.width, sg.height);
    let mut mean = vec![0f64; w * h];
    let mut count = vec![0u32; w * h];
    mean.par_chunks_mut(w * ROWS_PER_TASK)
        .zip(count.par_chunks_mut(w * ROWS_PER_TASK))
        .enumerate()
        .for_each(|(band, (sums, counts))| {
            let j0 = band * ROWS_PER_TASK;
            let rows = sums.len() / w;
            for (map, img) in maps.iter().zip(images) {
                if band_outside(map, j0, rows, w, iw, ih) {
                    continue;
                }
                let sampler = Sampler::new(&img.pixels, iw, ih);
                for (r, (sums, counts)) in sums.chunks_exact_mut(w).zip(counts.chunks_exact_mut(w)).enumerate() {
                    let (row, _) = map.row(j0 + r);
                    for ((sums, counts), start) in sums
                        .chunks_mut(CHUNK)
                        .zip(counts.chunks_mut(CHUNK))
                        .zip((0..).step_by(CHUNK))
                    {
                        let mut u = [0f64; CHUNK];
                        let mut v = [0f64; CHUNK];
                        let n = sums.len();
                        let in_front = map.project_run(&row, start as f64, &mut u[..n], &mut v[..n]);
                        for (k, (sum, count)) in sums.iter_mut().zip(counts.iter_mut()).enumerate() {
                            if !in_front[k] {
                                continue;
                            }
                            if let Some(s) = sampler.at(u[k], v[k]) {
                                *sum += s;
                                *count += 1;
                            }
                        }
                    }
                }
            }
            for (s, &c) in sums.iter_mut().zip(counts.iter()) {
                if c > 0 {
                    *s /= c as f64;
                }
            }
        });

    Ok(IntegralImage {
        width: w,
        height: h,
        mean,
        count,
        grid: *grid,
        sfp: *sfp,
    })
}

/// True when the band's corner points all project beyond the same image edge.
/// The band is a planar quad in front of the camera in that case, so its
/// image is the convex hull of the corners.
fn band_outside(map: &CameraMap, j0: usize, rows: usize, w: usize, iw: usize, ih: usize) -> bool {
    let corners = [(0, j0), (w - 1, j0), (0, j0 + rows - 1), (w - 1, j0 + rows - 1)];
    let (mut left, mut right, mut top, mut bottom) = (true, true, true, true);
    for (i, j) in corners {
        let (row, _) = map.row(j);
        let Some((u, v)) = map.pixel(&row, i as f64) else { return false };
        left &= u < 0.0;
        right &= u > (iw - 1) as f64;
        top &= v < 0.0;
        bottom &= v > (ih - 1) as f64;
    }
    left || right || top || bottom
}

/// Population statistics of valid pixels inside `roi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiStats {
    pub mean: f64,
    pub variance: f64,
    pub valid_fraction: f64,
}

pub fn roi_stats(img: &IntegralImage, roi: &Roi) -> Result<RoiStats> {
    roi.check_within(img.width, img.height)?;
    let valid = || {
        (roi.y0..roi.y1)
            .flat_map(move |y| (roi.x0..roi.x1).map(move |x| (x, y)))
            .filter(|&(x, y)| img.is_valid(x, y))
            .map(|(x, y)| img.value(x, y))
    };
    // shifting by the first value keeps constant regions at exactly zero variance
    let Some(shift) = valid().next() else {
        return Err(Error::Roi(format!("{roi:?} contains no covered pixels")));
    };
    let (n, sum) = valid().fold((0usize, 0.0), |(n, s), v| (n + 1, s + (v - shift)));
    let offset = sum / n as f64;
    let ss: f64 = valid().map(|v| (v - shift - offset).powi(2)).sum();
    Ok(RoiStats {
        mean: shift + offset,
        variance: ss / n as f64,
        valid_fraction: n as f64 / roi.area() as f64,
    })
}
