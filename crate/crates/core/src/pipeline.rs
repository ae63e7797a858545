//! Whole-dataset operations built from the modules above: focal-plane sweeps
//! and integration timing.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::geometry::SfpParams;
use crate::integrator::GridSpec;
use crate::io::{Dataset, SfpDeg, SweepRow, SweepTable};
use crate::metrics::{focus_metric, MetricId, Roi};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    D,
    Theta,
    Phi,
}

impl SweepVar {
    /// CSV column name; angles are in degrees.
    pub fn column(self) -> &'static str {
        match self {
            SweepVar::D => "d",
            SweepVar::Theta => "theta_deg",
            SweepVar::Phi => "phi_deg",
        }
    }

    fn apply(self, at: SfpDeg, v: f64) -> SfpDeg {
        let mut p = at;
        match self {
            SweepVar::D => p.d = v,
            SweepVar::Theta => p.theta_deg = v,
            SweepVar::Phi => p.phi_deg = v,
        }
        p
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" => Ok(SweepVar::D),
            "theta" => Ok(SweepVar::Theta),
            "phi" => Ok(SweepVar::Phi),
            _ => Err(Error::invalid(format!("unknown sweep variable '{s}', expected d, theta or phi"))),
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVar::D => "d",
            SweepVar::Theta => "theta",
            SweepVar::Phi => "phi",
        })
    }
}

/// `start, start + step, ...` up to `stop` inclusive. `stop` is hit exactly when
/// it lies on the lattice up to rounding.
pub fn range_values(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && stop.is_finite() && step > 0.0 && step.is_finite()) || stop < start {
        return Err(Error::invalid(format!(
            "range {start}:{stop}:{step} needs start <= stop and a positive step"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(Error::invalid("range has more than a million points"));
    }
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

/// Integrates the region of interest at every value of `var` (meters or
/// degrees), the other parameters fixed at `at`, and evaluates `metrics`.
/// Simulated datasets also get the true visibility of each integral.
pub fn sweep(
    ds: &Dataset,
    var: SweepVar,
    values: &[f64],
    at: SfpDeg,
    metrics: &[MetricId],
    grid: &GridSpec,
    roi: &Roi,
) -> Result<SweepTable> {
    let crop = grid.crop(roi)?;
    let mut table = SweepTable {
        var_names: vec![var.column().to_string()],
        metrics: metrics.to_vec(),
        with_truth: ds.scenario.is_some(),
        rows: Vec::with_capacity(values.len()),
    };
    for &v in values {
        let p = var.apply(at, v);
        let sfp = SfpParams::from_degrees(p.d, p.theta_deg, p.phi_deg)?;
        let img = ds.integrate(&sfp, &crop)?;
        let full = Roi::full(img.width, img.height);
        let values = metrics
            .iter()
            .map(|m| focus_metric(*m, &img, &full))
            .collect::<Result<Vec<_>>>()?;
        let true_visibility = ds.true_visibility(&img, &full).transpose()?;
        table.rows.push(SweepRow {
            vars: vec![v],
            metrics: values,
            true_visibility,
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub samples: Vec<Duration>,
    pub min: Duration,
    pub median: Duration,
    pub p95: Duration,
}

/// Times `repeats` full-grid integrations on the current rayon pool.
pub fn benchmark_integration(ds: &Dataset, sfp: &SfpParams, grid: &GridSpec, repeats: usize) -> Result<LatencyStats> {
    if repeats == 0 {
        return Err(Error::invalid("benchmark needs at least one repeat"));
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        let img = ds.integrate(sfp, grid)?;
        samples.push(t.elapsed());
        std::hint::black_box(img);
    }
    let mut sorted = samples.clone();
    sorted.sort();
    // nearest-rank percentiles
    let rank = |q: f64| sorted[((q * repeats as f64).ceil() as usize).clamp(1, repeats) - 1];
    Ok(LatencyStats {
        min: sorted[0],
        median: rank(0.5),
        p95: rank(0.95),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_range_has_33_points() {
        let v = range_values(22.0, 38.0, 0.5).unwrap();
        assert_eq!(v.len(), 33);
        assert_eq!(v[0], 22.0);
        assert_eq!(*v.last().unwrap(), 38.0);
        assert_eq!(range_values(1.0, 1.0, 0.1).unwrap(), vec![1.0]);
        assert_eq!(range_values(0.0, 1.0, 0.1).unwrap().len(), 11);
        assert!(range_values(2.0, 1.0, 0.1).is_err());
        assert!(range_values(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn sweep_var_names() {
        assert_eq!("theta".parse::<SweepVar>().unwrap(), SweepVar::Theta);
        assert!("x".parse::<SweepVar>().is_err());
        assert_eq!(SweepVar::Phi.column(), "phi_deg");
    }
}
