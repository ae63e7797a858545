//! Box-constrained maximization of focus objectives.
//!
//! Every optimizer evaluates the objective through a [`Recorder`], which counts
//! evaluations, enforces the budget and keeps the trace, so `evals` in a result
//! is exactly the number of objective calls made.

mod grid;
mod objective;
mod scatter;
mod sqp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SfpParams;

pub use grid::grid_search;
pub use objective::{make_sfp_objective, SfpObjective};
pub use scatter::scatter_search;
pub use sqp::sqp_local;

/// Per-variable box. For focal-plane searches the variables are
/// `[d (m), theta (rad), phi (rad)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Bounds on `(d, theta, phi)` given in meters and degrees.
    pub fn sfp_degrees(lower: [f64; 3], upper: [f64; 3]) -> Result<Self> {
        Self::new(
            vec![lower[0], lower[1].to_radians(), lower[2].to_radians()],
            vec![upper[0], upper[1].to_radians(), upper[2].to_radians()],
        )
    }

    /// Wide search box for scatter search without a prior: `d` from 5 m to
    /// twice the flight altitude, tilt up to 45 degrees, any azimuth.
    pub fn wide_sfp(altitude: f64) -> Result<Self> {
        Self::sfp_degrees([5.0, -45.0, -180.0], [2.0 * altitude, 45.0, 180.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::invalid(format!(
                "bounds need matching non-empty lower/upper vectors, got {} and {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (k, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::invalid(format!(
                    "bounds for variable {k} must be finite with lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + 0.5 * (u - l))
            .collect()
    }

    /// Maps unit-box coordinates to the box, clamping away rounding excursions.
    pub(crate) fn from_unit(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(k, &t)| ((1.0 - t) * self.lower[k] + t * self.upper[k]).clamp(self.lower[k], self.upper[k]))
            .collect()
    }

    pub(crate) fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| ((v - self.lower[k]) / self.width(k)).clamp(0.0, 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptOptions {
    pub max_evals: usize,
    /// Finite-difference step per variable in the variable's own units.
    /// Empty means `1e-6` of each box width.
    pub fd_steps: Vec<f64>,
    /// Stop when a step moves less than this fraction of every box width.
    pub xtol: f64,
    /// Stop when the objective improves by less than this fraction of its magnitude.
    pub ftol: f64,
    /// Scatter search: size of the initial diverse population.
    pub population: usize,
    /// Scatter search: size of the reference set.
    pub ref_set: usize,
    /// Scatter search: evaluation cap of each local refinement.
    pub local_max_evals: usize,
    pub seed: u64,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self {
            max_evals: 10_000,
            fd_steps: Vec::new(),
            xtol: 1e-10,
            ftol: 1e-15,
            population: 30,
            ref_set: 10,
            local_max_evals: 200,
            seed: 0,
        }
    }
}

impl OptOptions {
    /// Settings for `(d, theta, phi)` focus searches: 0.1 m and 0.25 degree
    /// difference steps, tolerances matched to the integrator's resolution.
    pub fn sfp() -> Self {
        Self {
            max_evals: 5_000,
            fd_steps: vec![0.1, 0.25f64.to_radians(), 0.25f64.to_radians()],
            xtol: 1e-4,
            ftol: 1e-6,
            local_max_evals: 150,
            ..Self::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_evals == 0 || self.population == 0 || self.ref_set < 2 || self.local_max_evals == 0 {
            return Err(Error::invalid(
                "max_evals, population and local_max_evals must be positive, ref_set at least 2",
            ));
        }
        if self.ref_set > self.population {
            return Err(Error::invalid(format!(
                "reference set ({}) larger than population ({})",
                self.ref_set, self.population
            )));
        }
        if !(self.xtol > 0.0 && self.ftol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !self.fd_steps.is_empty()
            && (self.fd_steps.len() != dim || self.fd_steps.iter().any(|h| !(*h > 0.0)))
        {
            return Err(Error::invalid(format!(
                "need {dim} positive finite-difference steps, got {:?}",
                self.fd_steps
            )));
        }
        Ok(())
    }

    /// Finite-difference steps in unit-box coordinates.
    pub(crate) fn unit_steps(&self, bounds: &Bounds) -> Vec<f64> {
        (0..bounds.dim())
            .map(|k| match self.fd_steps.get(k) {
                Some(h) => (h / bounds.width(k)).min(0.25),
                None => 1e-6,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub evals: usize,
    pub converged: bool,
    /// Every evaluation in call order.
    pub trace: Vec<TraceEntry>,
}

impl OptResult {
    /// The optimum as focal-plane parameters; needs a three-variable problem.
    pub fn best_params(&self) -> Result<SfpParams> {
        match self.best_x[..] {
            [d, theta, phi] => SfpParams::with_theta_bound(d, theta, phi, std::f64::consts::FRAC_PI_2),
            _ => Err(Error::invalid(format!(
                "result has {} variables, focal-plane parameters need 3",
                self.best_x.len()
            ))),
        }
    }
}

/// Counts and records every objective evaluation.
pub(crate) struct Recorder<'f, F> {
    f: &'f mut F,
    trace: Vec<TraceEntry>,
    best: Option<usize>,
    max_evals: usize,
    /// Temporary cap below `max_evals`, used for nested local searches.
    limit: usize,
}

impl<'f, F> Recorder<'f, F>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    pub(crate) fn new(f: &'f mut F, max_evals: usize) -> Self {
        Self {
            f,
            trace: Vec::new(),
            best: None,
            max_evals,
            limit: max_evals,
        }
    }

    pub(crate) fn eval(&mut self, x: &[f64]) -> Result<f64> {
        if self.trace.len() >= self.limit {
            return Err(Error::Budget(self.limit));
        }
        let value = (self.f)(x)?;
        if !value.is_finite() {
            return Err(Error::invalid(format!("objective returned {value} at {x:?}")));
        }
        self.trace.push(TraceEntry {
            x: x.to_vec(),
            value,
        });
        if self.best.map_or(true, |b| value > self.trace[b].value) {
            self.best = Some(self.trace.len() - 1);
        }
        Ok(value)
    }

    pub(crate) fn evals(&self) -> usize {
        self.trace.len()
    }

    pub(crate) fn trace_since(&self, start: usize) -> impl Iterator<Item = &TraceEntry> {
        self.trace[start..].iter()
    }

    /// Runs `body` with at most `extra` further evaluations.
    pub(crate) fn capped<T>(&mut self, extra: usize, body: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let saved = self.limit;
        self.limit = self.max_evals.min(self.trace.len().saturating_add(extra));
        let out = body(self);
        self.limit = saved;
        out
    }

    pub(crate) fn finish(self, outcome: Result<bool>) -> Result<OptResult> {
        let converged = match outcome {
            Ok(c) => c,
            Err(Error::Budget(_)) => false,
            Err(e) => return Err(e),
        };
        let best = self
            .best
            .ok_or_else(|| Error::Budget(self.max_evals))?;
        Ok(OptResult {
            best_x: self.trace[best].x.clone(),
            best_value: self.trace[best].value,
            evals: self.trace.len(),
            converged,
            trace: self.trace,
        })
    }
}

pub(crate) fn is_budget(e: &Error) -> bool {
    matches!(e, Error::Budget(_))
}
