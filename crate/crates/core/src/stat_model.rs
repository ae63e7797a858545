//! Closed-form visibility model for random occlusion and a Monte Carlo
//! simulation of the underlying sampling process.
//!
//! A pixel of the integral averages `N` samples. Each sample is blocked with
//! probability `D`; a blocked sample reads occluder signal `F`, an unblocked
//! one reads the target signal `S`. The mean squared deviation of that
//! average from `S` is
//!
//! ```text
//! MSE = (D^2 + D(1-D)/N) (var_S + (mu_F - mu_S)^2) + (D/N) var_F
//! ```
//!
//! and visibility is `1 - MSE`.

use rand::distributions::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trials per independently seeded substream of the Monte Carlo oracle.
const CHUNK_TRIALS: u64 = 1 << 14;

/// Distribution family used for both the target and the occluder signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    /// Uniform on `mu ± sqrt(3) sigma`.
    Uniform,
    /// `mu ± sigma` with equal probability.
    TwoPoint,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gaussian, Family::Uniform, Family::TwoPoint];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Uniform => "uniform",
            Family::TwoPoint => "two_point",
        }
    }

    fn sample<R: Rng>(&self, mean: f64, var: f64, rng: &mut R) -> f64 {
        if var == 0.0 {
            return mean;
        }
        let sd = var.sqrt();
        match self {
            Family::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Family::Uniform => mean + 3f64.sqrt() * sd * (2.0 * rng.gen::<f64>() - 1.0),
            Family::TwoPoint => {
                if rng.gen::<bool>() {
                    mean + sd
                } else {
                    mean - sd
                }
            }
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown distribution family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionModelParams {
    /// Occlusion density in `[0, 1]`.
    pub d: f64,
    /// Samples per integral pixel.
    pub n: u32,
    pub mu_s: f64,
    pub var_s: f64,
    pub mu_f: f64,
    pub var_f: f64,
    pub family: Family,
}

impl OcclusionModelParams {
    /// Binary target (0) under uniform occluders (1): the setting in which the
    /// extended model collapses to `1 - D^2 - D(1-D)/N`.
    pub fn binary(d: f64, n: u32) -> Self {
        Self {
            d,
            n,
            mu_s: 0.0,
            var_s: 0.0,
            mu_f: 1.0,
            var_f: 0.0,
            family: Family::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_density(self.d, self.n)?;
        for (name, v) in [
            ("mu_s", self.mu_s),
            ("var_s", self.var_s),
            ("mu_f", self.mu_f),
            ("var_f", self.var_f),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.var_s < 0.0 || self.var_f < 0.0 {
            return Err(Error::invalid(format!(
                "variances must be non-negative, got var_s={} var_f={}",
                self.var_s, self.var_f
            )));
        }
        Ok(())
    }
}

fn check_density(d: f64, n: u32) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::invalid(format!("occlusion density {d} outside [0, 1]")));
    }
    if n < 1 {
        return Err(Error::invalid("sample count N must be at least 1"));
    }
    Ok(())
}

/// Occlusion factor `D^2 + D(1-D)/N` multiplying the target-side variance.
pub fn occlusion_factor(d: f64, n: u32) -> f64 {
    d * d + d * (1.0 - d) / n as f64
}

pub fn visibility_simple(d: f64, n: u32) -> Result<f64> {
    check_density(d, n)?;
    Ok(1.0 - occlusion_factor(d, n))
}

pub fn mse_closed_form(p: &OcclusionModelParams) -> Result<f64> {
    p.validate()?;
    let contrast = p.mu_f - p.mu_s;
    Ok(occlusion_factor(p.d, p.n) * (p.var_s + contrast * contrast) + p.d / p.n as f64 * p.var_f)
}

pub fn visibility_extended(p: &OcclusionModelParams) -> Result<f64> {
    Ok(1.0 - mse_closed_form(p)?)
}

/// Running mean and sum of squared deviations, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64,
        }
    }
}

/// Monte Carlo estimate of the MSE and its standard error.
///
/// Trials are split into fixed-size chunks, each with its own ChaCha stream,
/// and merged in chunk order, so the result does not depend on how many
/// threads run the chunks.
pub fn mse_monte_carlo(p: &OcclusionModelParams, trials: u64, seed: u64) -> Result<(f64, f64)> {
    p.validate()?;
    if trials < 2 {
        return Err(Error::invalid(format!("need at least 2 trials, got {trials}")));
    }
    let blocked = Bernoulli::new(p.d).map_err(|e| Error::invalid(e.to_string()))?;
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let count = CHUNK_TRIALS.min(trials - k * CHUNK_TRIALS);
            let mut acc = Moments::default();
            for _ in 0..count {
                let s = p.family.sample(p.mu_s, p.var_s, &mut rng);
                // X - S = (1/N) sum Z_i (F_i - S); F_i only matters when Z_i = 1
                let mut dev = 0.0;
                for _ in 0..p.n {
                    if blocked.sample(&mut rng) {
                        dev += p.family.sample(p.mu_f, p.var_f, &mut rng) - s;
                    }
                }
                let err = dev / p.n as f64;
                acc.push(err * err);
            }
            acc
        })
        .collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let variance = total.m2 / (total.n - 1) as f64;
    Ok((total.mean, (variance / total.n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelCheckReport {
    pub closed_form_mse: f64,
    pub mc_mse: f64,
    pub mc_stderr: f64,
    pub trials: u64,
    pub pass: bool,
}

/// Compares the closed form against the Monte Carlo oracle at 4 standard errors.
pub fn model_check(p: &OcclusionModelParams, trials: u64, seed: u64) -> Result<ModelCheckReport> {
    check_against(mse_closed_form(p)?, p, trials, seed)
}

/// Like [`model_check`] but against an arbitrary claimed MSE value.
pub fn check_against(
    closed: f64,
    p: &OcclusionModelParams,
    trials: u64,
    seed: u64,
) -> Result<ModelCheckReport> {
    let (mc, stderr) = mse_monte_carlo(p, trials, seed)?;
    Ok(ModelCheckReport {
        closed_form_mse: closed,
        mc_mse: mc,
        mc_stderr: stderr,
        trials,
        pass: (closed - mc).abs() <= 4.0 * stderr,
    })
}

/// The 3x3x2 validation grid: D in {0.25, 0.5, 0.75}, N in {1, 10, 100},
/// gaussian and two-point families, with a mid-gray target and slightly
/// warmer, slightly noisy occluders.
pub fn default_validation_grid() -> Vec<OcclusionModelParams> {
    let mut grid = Vec::with_capacity(18);
    for d in [0.25, 0.5, 0.75] {
        for n in [1, 10, 100] {
            for family in [Family::Gaussian, Family::TwoPoint] {
                grid.push(OcclusionModelParams {
                    d,
                    n,
                    mu_s: 0.2,
                    var_s: 0.04,
                    mu_f: 0.35,
                    var_f: 0.0025,
                    family,
                });
            }
        }
    }
    grid
}
