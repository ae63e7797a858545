use super::{Bounds, OptResult, Recorder};
use crate::error::{Error, Result};

/// Exhaustive lattice search with `steps[k]` evenly spaced values of variable
/// `k`, endpoints included; a single step evaluates the midpoint. Variable 0
/// varies slowest. Ties keep the earliest lattice point.
pub fn grid_search<F>(f: &mut F, bounds: &Bounds, steps: &[usize]) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    bounds.validate()?;
    if steps.len() != bounds.dim() || steps.contains(&0) {
        return Err(Error::invalid(format!(
            "need one positive step count per variable ({}), got {steps:?}",
            bounds.dim()
        )));
    }
    let axes: Vec<Vec<f64>> = steps
        .iter()
        .enumerate()
        .map(|(k, &n)| lattice_axis(bounds.lower[k], bounds.upper[k], n))
        .collect();
    let total = steps.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let total = total.ok_or_else(|| Error::invalid("lattice too large"))?;

    let mut rec = Recorder::new(f, total);
    let mut idx = vec![0usize; steps.len()];
    let outcome = (|| {
        for _ in 0..total {
            let x: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect();
            rec.eval(&x)?;
            // odometer increment, last variable fastest
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < steps[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(true)
    })();
    rec.finish(outcome)
}

fn lattice_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo + 0.5 * (hi - lo)];
    }
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            // exact endpoints
            let t = i as f64 / last;
            (1.0 - t) * lo + t * hi
        })
        .collect()
}
