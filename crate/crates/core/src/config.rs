//! Run configuration: one TOML document holding every tunable, with
//! `section.key=value` overrides applied before validation.

use serde::{Deserialize, Serialize};

use crate::body::SkeletonDef;
use crate::energy::{EnergyModel, Kernels, ScaleMode};
use crate::error::ConfigError;
use crate::optimizer::{Problem, StageSchedule};
use crate::synth::ScenarioConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scale_mode: ScaleMode,
    pub kernels: Kernels,
    pub lambda_beta: f64,
    pub lambda_theta: f64,
    /// Adds two seat contact points under the pelvis.
    pub seat_points: bool,
    /// Pose prior mean, flattened axis-angles; the rest pose when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rest_pose: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scale_mode: ScaleMode::Camera,
            kernels: Kernels::default(),
            lambda_beta: 0.01,
            lambda_theta: 0.1,
            seat_points: false,
            rest_pose: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    pub schedule: StageSchedule,
    /// Custom joint table; the built-in table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonDef>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioConfig::default(),
            model: ModelConfig::default(),
            schedule: StageSchedule::default(),
            skeleton: None,
        }
    }
}

/// `line:column` (1-based) of a byte offset.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(text: &str, origin: &str, e: &toml::de::Error) -> ConfigError {
    let message = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let (line, column) = position(text, span.start);
            ConfigError::Parse(format!("{origin}:{line}:{column}: {message}"))
        }
        None => ConfigError::Parse(format!("{origin}: {message}")),
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Override(spec.to_string());
    let (path, raw) = spec.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    let value = override_value(raw.trim());
    let mut node: &mut toml::Value = root
        .entry(keys[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    for key in &keys[1..] {
        node = match node {
            toml::Value::Table(t) => t
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let i: usize = key.parse().map_err(|_| bad())?;
                a.get_mut(i).ok_or_else(bad)?
            }
            _ => return Err(bad()),
        };
    }
    *node = value;
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `overrides` in order, then validates. `origin`
    /// names the source in diagnostics.
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| parse_error(text, origin, &e))?;
        if !overrides.is_empty() {
            // Overrides act on the resolved document, so defaulted array
            // entries such as `schedule.stages.1` can be addressed.
            let mut table = toml::Table::try_from(&config).expect("config is representable in TOML");
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            config = table
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse(format!("{origin} (after overrides): {}", e.message().trim())))?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Defaults with the given overrides applied.
    pub fn with_overrides(overrides: &[String]) -> Result<Self, ConfigError> {
        Self::parse("", "<defaults>", overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        self.scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.schedule.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = &self.model;
        let k = &m.kernels;
        for (name, s) in [("joint", k.joint.sigma), ("contact", k.contact.sigma), ("temporal", k.temporal.sigma)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ConfigError::Invalid(format!("model.kernels.{name}.sigma must be positive")));
            }
        }
        if !(m.lambda_beta >= 0.0 && m.lambda_theta >= 0.0) {
            return Err(ConfigError::Invalid("model prior weights must be non-negative".into()));
        }
        let skel = self.skeleton_def();
        skel.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(r) = &m.rest_pose {
            if r.len() != skel.pose_dim() {
                return Err(ConfigError::Invalid(format!(
                    "model.rest_pose has {} entries, expected {}",
                    r.len(),
                    skel.pose_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn skeleton_def(&self) -> SkeletonDef {
        let skel = self.skeleton.clone().unwrap_or_else(SkeletonDef::standard);
        if self.model.seat_points {
            skel.with_seat_points()
        } else {
            skel
        }
    }

    pub fn energy_model(&self) -> EnergyModel {
        EnergyModel {
            kernels: self.model.kernels,
            scale_mode: self.model.scale_mode,
            rest_pose: self.model.rest_pose.clone(),
        }
    }

    /// Copies the model settings into a fitting problem.
    pub fn configure(&self, problem: &mut Problem) {
        problem.model = self.energy_model();
        problem.lambda_beta = self.model.lambda_beta;
        problem.lambda_theta = self.model.lambda_theta;
    }
}
