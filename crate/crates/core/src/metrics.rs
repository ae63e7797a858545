//! Focus metrics over integral images.
//!
//! Gray-level variance is the optimization objective; the others are one fast
//! and one robust representative of the gradient, Laplacian and wavelet
//! families. Pixels nobody recorded (`count == 0`) are skipped, and so is every
//! kernel window that touches one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{roi_stats, IntegralImage};
use crate::scene::ThermalImage;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Roi(format!("empty rectangle [{x0},{x1})x[{y0},{y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    /// Centered rectangle spanning `fraction` of each dimension.
    pub fn central(width: usize, height: usize, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Roi(format!("fraction {fraction} outside (0, 1]")));
        }
        let mx = ((width as f64 * (1.0 - fraction)) / 2.0).floor() as usize;
        let my = ((height as f64 * (1.0 - fraction)) / 2.0).floor() as usize;
        Self::new(mx, my, width - mx, height - my)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(Error::Roi(format!("{self:?} is empty")));
        }
        if self.x1 > width || self.y1 > height {
            return Err(Error::Roi(format!(
                "{self:?} exceeds image bounds {width}x{height}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Glv,
    NormalizedVariance,
    SquaredGradient,
    Tenengrad,
    LaplacianEnergy,
    ModifiedLaplacian,
    HaarDetailEnergy,
}

impl MetricId {
    pub const ALL: [MetricId; 7] = [
        MetricId::Glv,
        MetricId::NormalizedVariance,
        MetricId::SquaredGradient,
        MetricId::Tenengrad,
        MetricId::LaplacianEnergy,
        MetricId::ModifiedLaplacian,
        MetricId::HaarDetailEnergy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricId::Glv => "glv",
            MetricId::NormalizedVariance => "normalized_variance",
            MetricId::SquaredGradient => "squared_gradient",
            MetricId::Tenengrad => "tenengrad",
            MetricId::LaplacianEnergy => "laplacian_energy",
            MetricId::ModifiedLaplacian => "modified_laplacian",
            MetricId::HaarDetailEnergy => "haar_detail_energy",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric '{s}'")))
    }
}

/// Population variance of the covered pixels in `roi`.
pub fn glv(img: &IntegralImage, roi: &Roi) -> Result<f64> {
    let (_, var) = mean_and_variance(img, roi)?;
    Ok(var)
}

/// `1 - MSE` between `img` and the occlusion-free `truth` sampled on the same
/// grid, over the covered pixels of `roi`.
pub fn visibility_against(img: &IntegralImage, truth: &ThermalImage, roi: &Roi) -> Result<f64> {
    if (truth.width, truth.height) != (img.width, img.height) {
        return Err(Error::invalid(format!(
            "reference is {}x{}, integral is {}x{}",
            truth.width, truth.height, img.width, img.height
        )));
    }
    roi.check_within(img.width, img.height)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for y in roi.y0..roi.y1 {
        for x in roi.x0..roi.x1 {
            if img.is_valid(x, y) {
                sum += (img.value(x, y) - f64::from(truth.get(x, y))).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Roi(format!("{roi:?} has no covered pixels")));
    }
    Ok(1.0 - sum / n as f64)
}

fn mean_and_variance(img: &IntegralImage, roi: &Roi) -> Result<(f64, f64)> {
    let stats = roi_stats(img, roi)?;
    let n = (stats.valid_fraction * roi.area() as f64).round() as usize;
    if n < 2 {
        return Err(Error::Roi(format!(
            "variance needs at least 2 covered pixels, {roi:?} has {n}"
        )));
    }
    Ok((stats.mean, stats.variance))
}

pub fn focus_metric(id: MetricId, img: &IntegralImage, roi: &Roi) -> Result<f64> {
    roi.check_within(img.width, img.height)?;
    match id {
        MetricId::Glv => glv(img, roi),
        MetricId::NormalizedVariance => {
            let (mean, var) = mean_and_variance(img, roi)?;
            if mean <= 1e-12 {
                return Err(Error::Roi(format!(
                    "normalized variance undefined for mean {mean}"
                )));
            }
            Ok(var / mean)
        }
        MetricId::SquaredGradient => {
            require_size(roi, 2, 1, id)?;
            window_sum(img, roi, (0, 0, 1, 0), |p| {
                let d = p(1, 0) - p(0, 0);
                d * d
            })
        }
        MetricId::Tenengrad => {
            require_size(roi, 3, 3, id)?;
            window_sum(img, roi, (1, 1, 1, 1), |p| {
                let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                gx * gx + gy * gy
            })
        }
        MetricId::LaplacianEnergy => {
            require_size(roi, 3, 3, id)?;
            window_sum(img, roi, (1, 1, 1, 1), |p| {
                let l = p(0, -1) + p(-1, 0) + p(1, 0) + p(0, 1) - 4.0 * p(0, 0);
                l * l
            })
        }
        MetricId::ModifiedLaplacian => {
            require_size(roi, 3, 3, id)?;
            window_sum(img, roi, (1, 1, 1, 1), |p| {
                let c = 2.0 * p(0, 0);
                (c - p(-1, 0) - p(1, 0)).abs() + (c - p(0, -1) - p(0, 1)).abs()
            })
        }
        MetricId::HaarDetailEnergy => haar_detail_energy(img, roi),
    }
}

fn require_size(roi: &Roi, w: usize, h: usize, id: MetricId) -> Result<()> {
    if roi.width() < w || roi.height() < h {
        return Err(Error::Roi(format!(
            "{id} needs a region of at least {w}x{h}, got {}x{}",
            roi.width(),
            roi.height()
        )));
    }
    Ok(())
}

/// Sums `f` over every window position inside `roi` whose whole window is
/// covered. `reach = (left, up, right, down)` is the window extent around the
/// center pixel; `f` reads pixels relative to the center.
fn window_sum<F>(img: &IntegralImage, roi: &Roi, reach: (usize, usize, usize, usize), f: F) -> Result<f64>
where
    F: Fn(&dyn Fn(isize, isize) -> f64) -> f64,
{
    let (l, u, r, d) = reach;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y in roi.y0 + u..roi.y1 - d {
        'x: for x in roi.x0 + l..roi.x1 - r {
            for wy in y - u..=y + d {
                for wx in x - l..=x + r {
                    if !img.is_valid(wx, wy) {
                        continue 'x;
                    }
                }
            }
            let p = |dx: isize, dy: isize| {
                img.value((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            total += f(&p);
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(Error::Roi(format!("{roi:?} has no fully covered kernel window")));
    }
    Ok(total)
}

/// Sum of squared level-1 Haar detail coefficients over complete 2x2 blocks
/// tiled from the region's top-left corner.
fn haar_detail_energy(img: &IntegralImage, roi: &Roi) -> Result<f64> {
    require_size(roi, 2, 2, MetricId::HaarDetailEnergy)?;
    let mut total = 0.0;
    let mut blocks = 0usize;
    for y in (roi.y0..roi.y1 - 1).step_by(2) {
        for x in (roi.x0..roi.x1 - 1).step_by(2) {
            if !(img.is_valid(x, y) && img.is_valid(x + 1, y) && img.is_valid(x, y + 1) && img.is_valid(x + 1, y + 1)) {
                continue;
            }
            let (a, b) = (img.value(x, y), img.value(x + 1, y));
            let (c, d) = (img.value(x, y + 1), img.value(x + 1, y + 1));
            let horizontal = (a - b + c - d) / 2.0;
            let vertical = (a + b - c - d) / 2.0;
            let diagonal = (a - b - c + d) / 2.0;
            total += horizontal * horizontal + vertical * vertical + diagonal * diagonal;
            blocks += 1;
        }
    }
    if blocks == 0 {
        return Err(Error::Roi(format!("{roi:?} has no fully covered 2x2 block")));
    }
    Ok(total)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("spearman needs two equally long series of length >= 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid("spearman undefined for a constant series"));
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        let rank = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            out[i] = rank;
        }
        k = e + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SfpParams;
    use crate::integrator::GridSpec;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, values: &[f64]) -> IntegralImage {
        IntegralImage {
            width: w,
            height: h,
            mean: values.to_vec(),
            count: vec![1; w * h],
            grid: GridSpec::default(),
            sfp: SfpParams::level(1.0).unwrap(),
        }
    }

    fn metric(id: MetricId, im: &IntegralImage) -> f64 {
        focus_metric(id, im, &Roi::full(im.width, im.height)).unwrap()
    }

    #[test]
    fn glv_examples() {
        assert_eq!(metric(MetricId::Glv, &img(3, 3, &[0.7; 9])), 0.0);
        assert_eq!(metric(MetricId::Glv, &img(2, 2, &[0.0, 1.0, 0.0, 1.0])), 0.25);
        let mut one = img(2, 1, &[0.0, 1.0]);
        one.count[1] = 0;
        assert!(glv(&one, &Roi::full(2, 1)).is_err());
    }

    #[test]
    fn hand_computed_kernels() {
        let bottom_row = img(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(metric(MetricId::Tenengrad, &bottom_row), 16.0);

        let spike = img(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(metric(MetricId::LaplacianEnergy, &spike), 16.0);
        assert_eq!(metric(MetricId::ModifiedLaplacian, &spike), 4.0);

        assert_eq!(metric(MetricId::HaarDetailEnergy, &img(2, 2, &[0.0, 1.0, 0.0, 1.0])), 1.0);
        assert_eq!(metric(MetricId::SquaredGradient, &img(3, 1, &[0.0, 1.0, 3.0])), 5.0);
    }

    #[test]
    fn normalized_variance_needs_positive_mean() {
        assert_eq!(metric(MetricId::NormalizedVariance, &img(2, 1, &[0.0, 1.0])), 0.5);
        let zero = img(2, 2, &[0.0; 4]);
        assert!(focus_metric(MetricId::NormalizedVariance, &zero, &Roi::full(2, 2)).is_err());
    }

    #[test]
    fn small_regions_rejected() {
        let im = img(3, 3, &[0.1; 9]);
        let thin = Roi::new(0, 0, 3, 2).unwrap();
        for id in [MetricId::Tenengrad, MetricId::LaplacianEnergy, MetricId::ModifiedLaplacian] {
            assert!(focus_metric(id, &im, &thin).is_err());
        }
        let col = Roi::new(0, 0, 1, 3).unwrap();
        assert!(focus_metric(MetricId::SquaredGradient, &im, &col).is_err());
        assert!(focus_metric(MetricId::HaarDetailEnergy, &im, &col).is_err());
    }

    #[test]
    fn uncovered_windows_are_skipped() {
        // the 5x1 row has a hole at x=2; gradients touching it are dropped
        let mut im = img(5, 1, &[0.0, 1.0, 9.0, 1.0, 3.0]);
        im.count[2] = 0;
        assert_eq!(metric(MetricId::SquaredGradient, &im), 1.0 + 4.0);
        assert_eq!(metric(MetricId::Glv, &im), glv(&img(4, 1, &[0.0, 1.0, 1.0, 3.0]), &Roi::full(4, 1)).unwrap());

        let mut im = img(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        im.count[0] = 0;
        // the Sobel window covers the corner, the cross-shaped kernels do not read it,
        // but windows are excluded whole
        assert!(focus_metric(MetricId::Tenengrad, &im, &Roi::full(3, 3)).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        for id in MetricId::ALL {
            assert_eq!(id.as_str().parse::<MetricId>().unwrap(), id);
            assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{}\"", id.as_str()));
        }
        assert!("sharpness".parse::<MetricId>().is_err());
    }

    #[test]
    fn central_roi() {
        assert_eq!(Roi::central(500, 500, 0.5).unwrap(), Roi::new(125, 125, 375, 375).unwrap());
        assert_eq!(Roi::central(7, 5, 1.0).unwrap(), Roi::full(7, 5));
        assert!(Roi::central(7, 5, 0.0).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // ties take the average rank: ranks (1.5, 1.5, 3) vs (1, 2, 3)
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    fn arb_image() -> impl Strategy<Value = IntegralImage> {
        (4usize..9, 4usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0..1.0f64, w * h).prop_map(move |v| img(w, h, &v))
        })
    }

    const SCALE_COVARIANT: [MetricId; 5] = [
        MetricId::Glv,
        MetricId::Tenengrad,
        MetricId::LaplacianEnergy,
        MetricId::SquaredGradient,
        MetricId::HaarDetailEnergy,
    ];

    proptest! {
        #[test]
        fn shift_invariance(im in arb_image(), c in -0.5..0.5f64) {
            let mut shifted = im.clone();
            shifted.mean.iter_mut().for_each(|v| *v += c);
            for id in MetricId::ALL {
                if id == MetricId::NormalizedVariance {
                    continue;
                }
                let (a, b) = (metric(id, &im), metric(id, &shifted));
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{id}: {a} vs {b}");
            }
            let mu = im.mean.iter().sum::<f64>() / im.mean.len() as f64;
            if mu + c > 0.01 {
                let nv = metric(MetricId::NormalizedVariance, &im);
                let nv_shifted = metric(MetricId::NormalizedVariance, &shifted);
                let expected = nv * mu / (mu + c);
                prop_assert!((nv_shifted - expected).abs() <= 1e-9 * expected.abs().max(1e-12));
            }
        }

        #[test]
        fn scale_covariance(im in arb_image(), s in 0.1..10.0f64) {
            let mut scaled = im.clone();
            scaled.mean.iter_mut().for_each(|v| *v *= s);
            for id in SCALE_COVARIANT {
                let (a, b) = (metric(id, &im), metric(id, &scaled));
                prop_assert!((b - s * s * a).abs() <= 1e-9 * (s * s * a).abs().max(1e-12), "{id}");
            }
        }
    }
}
