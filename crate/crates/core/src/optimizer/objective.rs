use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::SfpParams;
use crate::integrator::GridSpec;
use crate::io::Dataset;
use crate::metrics::{focus_metric, MetricId, Roi};

/// Focus of the integral image as a function of the focal plane.
///
/// Only the region of interest is integrated: the grid is cropped to `roi`
/// once, and the metric covers the whole crop.
pub struct SfpObjective<'a> {
    dataset: &'a Dataset,
    metric: MetricId,
    crop: GridSpec,
    counter: Arc<AtomicUsize>,
}

pub fn make_sfp_objective<'a>(dataset: &'a Dataset, metric: MetricId, grid: &GridSpec, roi: &Roi) -> Result<SfpObjective<'a>> {
    if dataset.is_empty() {
        return Err(Error::Empty("objective needs at least one recording".into()));
    }
    grid.validate()?;
    let crop = grid.crop(roi)?;
    Ok(SfpObjective {
        dataset,
        metric,
        crop,
        counter: Arc::new(AtomicUsize::new(0)),
    })
}

impl SfpObjective<'_> {
    pub fn eval(&self, params: &SfpParams) -> Result<f64> {
        self.counter.fetch_add(1, Ordering::Relaxed);
        let img = self.dataset.integrate(params, &self.crop)?;
        focus_metric(self.metric, &img, &Roi::full(img.width, img.height))
    }

    /// Evaluates at `[d, theta, phi]` in meters and radians.
    pub fn eval_x(&self, x: &[f64]) -> Result<f64> {
        match *x {
            [d, theta, phi] => self.eval(&SfpParams::with_theta_bound(d, theta, phi, FRAC_PI_2)?),
            _ => Err(Error::invalid(format!("expected (d, theta, phi), got {} values", x.len()))),
        }
    }

    /// Closure form for the optimizers.
    pub fn as_fn(&self) -> impl FnMut(&[f64]) -> Result<f64> + '_ {
        move |x| self.eval_x(x)
    }

    pub fn evals(&self) -> usize {
        self.counter.load(Ordering::Relaxed)
    }

    /// Shared handle on the evaluation counter.
    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.counter)
    }

    pub fn metric(&self) -> MetricId {
        self.metric
    }

    pub fn grid(&self) -> &GridSpec {
        &self.crop
    }
}
