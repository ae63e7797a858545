//! Experiment configuration as strict JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::integrator::GridSpec;
use crate::metrics::{MetricId, Roi};
use crate::optimizer::Bounds;
use crate::scene::{ApertureSpec, OccluderLayer, PosePattern, SceneConfig, Target};

/// A point in focal-plane parameter space with angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfpDeg {
    pub d: f64,
    pub theta_deg: f64,
    pub phi_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDeg {
    pub lower: SfpDeg,
    pub upper: SfpDeg,
}

impl Default for BoundsDeg {
    fn default() -> Self {
        Self {
            lower: SfpDeg {
                d: 22.0,
                theta_deg: -10.0,
                phi_deg: -180.0,
            },
            upper: SfpDeg {
                d: 38.0,
                theta_deg: 10.0,
                phi_deg: 180.0,
            },
        }
    }
}

impl BoundsDeg {
    pub fn to_bounds(&self) -> Result<Bounds> {
        let (l, u) = (self.lower, self.upper);
        Bounds::sfp_degrees([l.d, l.theta_deg, l.phi_deg], [u.d, u.theta_deg, u.phi_deg])
    }

    fn check(&self) -> std::result::Result<(), (String, String)> {
        let (l, u) = (self.lower, self.upper);
        for (name, lo, hi) in [("d", l.d, u.d), ("theta_deg", l.theta_deg, u.theta_deg), ("phi_deg", l.phi_deg, u.phi_deg)] {
            if !(lo < hi) {
                return Err((format!("/bounds/lower/{name}"), format!("lower {lo} must be below upper {hi}")));
            }
        }
        if !(l.d > 0.0) {
            return Err(("/bounds/lower/d".into(), "focal distance must be positive".into()));
        }
        for (side, b) in [("lower", l), ("upper", u)] {
            if b.theta_deg.abs() > 45.0 {
                return Err((format!("/bounds/{side}/theta_deg"), "tilt limited to 45 degrees".into()));
            }
            if b.phi_deg.abs() > 180.0 {
                return Err((format!("/bounds/{side}/phi_deg"), "azimuth must lie in [-180, 180]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scene: SceneConfig,
    pub aperture: ApertureSpec,
    #[serde(default = "default_intrinsics")]
    pub intrinsics: Intrinsics,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub bounds: BoundsDeg,
    #[serde(default = "default_metric")]
    pub metric: MetricId,
    /// Side fraction of the central region the objective is evaluated on.
    #[serde(default = "default_roi_fraction")]
    pub roi_fraction: f64,
    /// Seed of the stochastic optimizers.
    #[serde(default)]
    pub optimizer_seed: u64,
}

fn default_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 110.0,
        fy: 110.0,
        cx: 159.5,
        cy: 127.5,
        width: 320,
        height: 256,
    }
}

fn default_metric() -> MetricId {
    MetricId::Glv
}

fn default_roi_fraction() -> f64 {
    0.5
}

impl ScenarioConfig {
    /// Built-in forest scene: three warm disks under a canopy that occludes
    /// half of all ground rays, flown at 30 m with 340 recordings over 900 m^2.
    ///
    /// The canopy is eleven thin layers spread over 10 to 20 m whose combined
    /// density is 0.5. A single dense layer would itself be a sharp focal
    /// target and pull focus searches away from the ground.
    pub fn conifer_sim() -> Self {
        let n = 11;
        let density = 1.0 - 0.5f64.powf(1.0 / n as f64);
        let layers = (0..n)
            .map(|k| OccluderLayer {
                height: 10.0 + k as f64,
                density,
                cell_size: 0.25,
                value_mean: 0.35,
                value_stddev: 0.05,
                seed: 100 + k as u64,
            })
            .collect();
        Self {
            scene: SceneConfig {
                ground_background: 0.2,
                ground_noise_stddev: 0.05,
                targets: vec![
                    Target::disk([-3.5, 2.5], 0.5, 0.9),
                    Target::disk([1.5, -4.0], 0.5, 0.9),
                    Target::disk([4.5, 3.0], 0.5, 0.9),
                ],
                layers,
                seed: 7,
            },
            aperture: ApertureSpec {
                count: 340,
                area: 900.0,
                altitude: 30.0,
                pattern: PosePattern::Grid,
                jitter: 0.3,
                jitter_seed: 1,
            },
            intrinsics: default_intrinsics(),
            grid: GridSpec::default(),
            bounds: BoundsDeg::default(),
            metric: MetricId::Glv,
            roi_fraction: default_roi_fraction(),
            optimizer_seed: 0,
        }
    }

    /// Central evaluation region of the integral grid.
    pub fn roi(&self) -> Result<Roi> {
        let (w, h) = self.grid.dims();
        Roi::central(w, h, self.roi_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(pointer, msg)| Error::invalid(format!("{pointer}: {msg}")))
    }

    fn check(&self) -> std::result::Result<(), (String, String)> {
        fn at(p: &'static str) -> impl Fn(Error) -> (String, String) {
            move |e| (p.to_string(), e.to_string())
        }
        for (k, layer) in self.scene.layers.iter().enumerate() {
            if let Some((field, msg)) = layer.invalid_field() {
                return Err((format!("/scene/layers/{k}/{field}"), msg));
            }
        }
        self.scene.validate().map_err(at("/scene"))?;
        self.aperture.validate().map_err(at("/aperture"))?;
        self.intrinsics.validate().map_err(at("/intrinsics"))?;
        self.grid.validate().map_err(at("/grid"))?;
        self.bounds.check()?;
        if self.scene.max_layer_height() >= self.aperture.altitude {
            return Err((
                "/aperture/altitude".into(),
                format!(
                    "altitude {} must exceed the highest occluder layer ({})",
                    self.aperture.altitude,
                    self.scene.max_layer_height()
                ),
            ));
        }
        if !(self.roi_fraction > 0.0 && self.roi_fraction <= 1.0) {
            return Err(("/roi_fraction".into(), "must lie in (0, 1]".into()));
        }
        self.roi().map_err(at("/roi_fraction"))?;
        Ok(())
    }
}

pub fn read_scenario(path: &Path) -> Result<ScenarioConfig> {
    scenario_from_json(&super::read_file(path)?, path)
}

/// Parses and validates; `path` only labels errors, whose location is a JSON pointer.
pub fn scenario_from_json(bytes: &[u8], path: &Path) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        Error::parse(path, pointer, e.into_inner().to_string())
    })?;
    cfg.check()
        .map_err(|(pointer, msg)| Error::parse(path, pointer, msg))?;
    Ok(cfg)
}

/// Writes with every default spelled out.
pub fn write_scenario(path: &Path, cfg: &ScenarioConfig) -> Result<()> {
    cfg.validate()?;
    let mut text = serde_json::to_string_pretty(cfg).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    super::write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub(crate) fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        scenario_from_json(text.as_bytes(), Path::new("s.json"))
    }

    const MINIMAL: &str = r#"{
        "scene": {"ground_background": 0.2},
        "aperture": {"count": 4, "area": 100, "altitude": 30}
    }"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.metric, MetricId::Glv);
        assert_eq!(cfg.bounds, BoundsDeg::default());
        assert_eq!(cfg.aperture.pattern, PosePattern::Grid);
    }

    #[test]
    fn unknown_key_error_has_pointer() {
        let text = MINIMAL.replace("\"altitude\": 30", "\"altitude\": 30, \"altitdue\": 3");
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("/aperture") && e.contains("altitdue"), "{e}");
        let text = r#"{"scene": {"ground_background": 0.2, "layers": [{"height": 1, "density": "x"}]},
                       "aperture": {"count": 4, "area": 100, "altitude": 30}}"#;
        let e = parse(text).unwrap_err().to_string();
        assert!(e.contains("/scene/layers/0/density"), "{e}");
    }

    #[test]
    fn inverted_bounds_rejected() {
        let text = MINIMAL.replace(
            "\"aperture\"",
            r#""bounds": {"lower": {"d": 38, "theta_deg": -1, "phi_deg": -1},
                          "upper": {"d": 22, "theta_deg": 1, "phi_deg": 1}}, "aperture""#,
        );
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("/bounds/lower/d"), "{e}");
    }

    #[test]
    fn canopy_below_drone() {
        let mut cfg = ScenarioConfig::conifer_sim();
        assert!(cfg.validate().is_ok());
        assert!((cfg.scene.total_occlusion_density() - 0.5).abs() < 1e-12);
        cfg.aperture.altitude = 18.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn roi_is_central_half() {
        let roi = ScenarioConfig::conifer_sim().roi().unwrap();
        assert_eq!((roi.x0, roi.y0, roi.x1, roi.y1), (125, 125, 375, 375));
    }
}
