//! JSON run configuration and `--set key=value` overrides.

use std::fmt;
use std::path::Path;

use aoi_lab_core::aoi::GenerationSchedule;
use aoi_lab_core::gauss::{
    calibrate_kappa, calibrate_marginal, CalibrationTarget, CorrelationMode, DelayModel, LinkFunction, LinkKind,
};
use aoi_lab_core::grid::uniform_grid;
use aoi_lab_core::orthant::QuadratureSpec;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::CliError;

/// Time constant `c` in seconds; `0` routes to iid and `inf` to frozen delays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConstant(pub f64);

impl Serialize for TimeConstant {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for TimeConstant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = TimeConstant;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<TimeConstant, E> {
                if v >= 0.0 {
                    Ok(TimeConstant(v))
                } else {
                    Err(E::custom(format!("time constant must be non-negative, got {v}")))
                }
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<TimeConstant, E> {
                Ok(TimeConstant(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<TimeConstant, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<TimeConstant, E> {
                match v.trim() {
                    "inf" | "infinity" | "Infinity" => Ok(TimeConstant(f64::INFINITY)),
                    other => other
                        .parse::<f64>()
                        .map_err(|_| E::custom(format!("invalid time constant {other:?}")))
                        .and_then(|x| self.visit_f64(x)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub kind: LinkKind,
    pub x_min: f64,
    /// target mean and standard deviation of the delay
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// direct link parameters, used instead of calibration
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_hat: Option<f64>,
}

/// Either a time constant `c` (calibrated to κ) or a direct `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<TimeConstant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridRange {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        uniform_grid(self.start, self.stop, self.step).map_err(CliError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// sample paths written by `simulate`
    pub export_paths: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 1,
            export_paths: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// OU rates checked for monotone grids, besides the iid and frozen ends
    pub kappas: Vec<f64>,
    pub z_limit: f64,
    pub min_fraction: f64,
    pub dominance_tol: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            kappas: vec![0.05, 0.1, 0.5],
            z_limit: 3.0,
            min_fraction: 0.99,
            dominance_tol: 1e-6,
        }
    }
}

/// Value lists for `sweep`; an empty list keeps the base configuration value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub c: Vec<TimeConstant>,
    pub tau: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub link: LinkConfig,
    pub correlation: CorrelationConfig,
    pub tau: f64,
    pub t_grid: GridRange,
    pub x_grid: GridRange,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default = "default_phase_nodes")]
    pub phase_nodes: usize,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_delta() -> f64 {
    0.02
}

fn default_phase_nodes() -> usize {
    64
}

impl Default for RunConfig {
    /// Calibrated shifted-lognormal delays with mean 1, lower bound 0.5.
    fn default() -> Self {
        Self {
            link: LinkConfig {
                kind: LinkKind::ShiftedLognormal,
                x_min: 0.5,
                mu: Some(1.0),
                s: Some(0.75),
                mu_hat: None,
                s_hat: None,
            },
            correlation: CorrelationConfig {
                c: Some(TimeConstant(10.0)),
                kappa: None,
            },
            tau: 2.0,
            t_grid: GridRange {
                start: 0.0,
                stop: 20.0,
                step: 0.1,
            },
            x_grid: GridRange {
                start: 0.0,
                stop: 20.0,
                step: 0.02,
            },
            delta: default_delta(),
            quadrature: QuadratureSpec::default(),
            simulation: SimulationConfig::default(),
            phase_nodes: default_phase_nodes(),
            compare: CompareConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Result of resolving the configuration into model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub link: LinkFunction,
    pub kappa: Option<f64>,
}

impl RunConfig {
    /// Reads a JSON file (or the defaults) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid JSON in {}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default()).expect("default config serializes"),
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let l = &self.link;
        let calibrated = l.mu.is_some() && l.s.is_some();
        let direct = l.mu_hat.is_some() && l.s_hat.is_some();
        let partial = [l.mu, l.s, l.mu_hat, l.s_hat].iter().filter(|v| v.is_some()).count() != 2;
        if calibrated == direct || partial {
            return Err(CliError::Usage(
                "link needs either (mu, s) or (mu_hat, s_hat), not both".into(),
            ));
        }
        if self.correlation.c.is_some() == self.correlation.kappa.is_some() {
            return Err(CliError::Usage("correlation needs exactly one of c or kappa".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(CliError::Usage(format!("tau must be positive, got {}", self.tau)));
        }
        if self.phase_nodes < 8 {
            return Err(CliError::Usage("phase_nodes must be at least 8".into()));
        }
        self.quadrature.validate()?;
        Ok(())
    }

    fn link_with(&self, s: Option<f64>) -> Result<LinkFunction, CliError> {
        let l = &self.link;
        match (l.mu_hat, l.s_hat) {
            (Some(mu_hat), Some(s_hat)) => {
                if s.is_some() {
                    return Err(CliError::Usage("sweeping s needs a calibrated link (mu, s)".into()));
                }
                Ok(LinkFunction::new(l.kind, l.x_min, mu_hat, s_hat)?)
            }
            _ => {
                let target = CalibrationTarget {
                    mu: l.mu.expect("validated"),
                    s: s.or(l.s).expect("validated"),
                    x_min: l.x_min,
                    c: None,
                };
                let (mu_hat, s_hat) = calibrate_marginal(&target, l.kind)?;
                Ok(LinkFunction::new(l.kind, l.x_min, mu_hat, s_hat)?)
            }
        }
    }

    /// Link and OU rate for the base configuration with optional sweep overrides.
    pub fn calibrate(&self, c: Option<TimeConstant>, s: Option<f64>) -> Result<Calibration, CliError> {
        let link = self.link_with(s)?;
        let kappa = match (c.or(self.correlation.c), self.correlation.kappa) {
            (Some(TimeConstant(c)), _) if c == 0.0 || c.is_infinite() => None,
            (Some(TimeConstant(c)), _) => Some(calibrate_kappa(&link, c)?),
            (None, Some(k)) => Some(k),
            (None, None) => unreachable!("validated"),
        };
        Ok(Calibration { link, kappa })
    }

    pub fn model(&self) -> Result<DelayModel, CliError> {
        self.model_with(None, None, None)
    }

    pub fn model_with(
        &self,
        c: Option<TimeConstant>,
        tau: Option<f64>,
        s: Option<f64>,
    ) -> Result<DelayModel, CliError> {
        let cal = self.calibrate(c, s)?;
        let c = c.or(self.correlation.c).map(|c| c.0);
        let correlation = match (c, cal.kappa) {
            (Some(0.0), _) => CorrelationMode::Iid,
            (Some(c), _) if c.is_infinite() => CorrelationMode::Frozen,
            (c, Some(kappa)) => CorrelationMode::Ou { kappa, c },
            (_, None) => unreachable!("finite c yields a rate"),
        };
        let schedule = GenerationSchedule::new(tau.unwrap_or(self.tau))?;
        Ok(DelayModel::new(cal.link, correlation, schedule))
    }
}

/// Sets `key` (dot-separated path) in a JSON object. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!("override {item:?} has an empty key")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("cannot set {key}: {part} is not an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("cannot set {key}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
