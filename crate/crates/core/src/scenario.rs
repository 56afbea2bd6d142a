//! Scenario files: TOML with a mandatory `schema = 1` key.
//!
//! Every section is optional and falls back to the calibrated defaults, so an
//! empty file (apart from the schema key) describes the still-water 4 m trial.
//! Calibration reports are written in the same format and can be passed wherever
//! a scenario is expected.
//!
//! ```toml
//! schema = 1
//! goal = 4.0
//! dt = 0.01
//! integrator = "rk4"        # or "sie"
//! source = "hold-fwd"       # "idle", "script", "live"
//!
//! [[script]]                # used when source = "script"
//! at = 0.0
//! buttons = "FWD | LEFT"
//!
//! [dynamics.drag]
//! heave = 400.0
//!
//! [environment.wave]
//! amplitude = 5.0
//!
//! [[fit]]                   # calibration results, applied on load
//! parameter = "drag.surge"
//! value = 109.74
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::FitRecord;
use crate::dynamics::{DynamicsParams, Integrator};
use crate::environment::EnvironmentConfig;
use crate::error::{Error, Result};
use crate::teleop::{LatencyProfile, TeleopConfig};
use crate::vehicle::{Buttons, VehicleParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Operator holds FWD for the whole trial.
    #[default]
    HoldFwd,
    /// No buttons pressed.
    Idle,
    /// Piecewise-constant button schedule from `[[script]]`.
    Script,
    /// Commands arrive over the teleoperation link.
    Live,
}

/// Buttons held from `at` until the next step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub at: f64,
    pub buttons: Buttons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    /// Surge displacement that ends the trial, m.
    pub goal: f64,
    /// Integrator step, s.
    pub dt: f64,
    pub integrator: Integrator,
    /// s
    pub max_time: f64,
    pub seed: u64,
    /// m
    pub initial_depth: f64,
    pub source: SourceKind,
    pub script: Vec<ScriptStep>,
    /// Route scripted commands through the latency model.
    pub scripted_latency: bool,
    pub dynamics: DynamicsParams,
    pub vehicle: VehicleParams,
    pub environment: EnvironmentConfig,
    pub latency: LatencyProfile,
    pub teleop: TeleopConfig,
    pub fit: Vec<FitRecord>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            goal: 4.0,
            dt: 0.01,
            integrator: Integrator::Rk4,
            max_time: 120.0,
            seed: 0,
            initial_depth: 0.5,
            source: SourceKind::HoldFwd,
            script: Vec::new(),
            scripted_latency: true,
            dynamics: DynamicsParams::default(),
            vehicle: VehicleParams::default(),
            environment: EnvironmentConfig::default(),
            latency: LatencyProfile::default(),
            teleop: TeleopConfig::default(),
            fit: Vec::new(),
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl ScenarioConfig {
    /// Parses, applies `[[fit]]` blocks and validates.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct SchemaOnly {
            schema: Option<toml::Value>,
        }
        let mut cfg: ScenarioConfig = toml::from_str(src).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().to_string(),
        })?;
        let head: SchemaOnly = toml::from_str(src).map_err(|e| Error::Config {
            line: None,
            message: e.message().to_string(),
        })?;
        if head.schema.is_none() {
            return Err(Error::Config {
                line: Some(1),
                message: format!("missing `schema = {SCHEMA_VERSION}`"),
            });
        }
        cfg.prepare()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable as TOML")
    }

    /// Applies fit records then validates.
    pub fn prepare(&mut self) -> Result<()> {
        let fits = std::mem::take(&mut self.fit);
        for f in &fits {
            f.apply(self)?;
        }
        self.fit = fits;
        self.validate()
    }

    pub fn validate(&mut self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config {
                line: None,
                message: format!(
                    "unsupported schema {} (expected {SCHEMA_VERSION})",
                    self.schema
                ),
            });
        }
        if !(self.goal.is_finite() && self.goal > 0.0) {
            return Err(Error::invalid("goal", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidStep { dt: self.dt });
        }
        if !(self.max_time.is_finite() && self.max_time > 0.0) {
            return Err(Error::invalid("max_time", "must be positive"));
        }
        if !(self.initial_depth.is_finite() && self.initial_depth >= 0.0) {
            return Err(Error::NegativeDepth(self.initial_depth));
        }
        if self.source == SourceKind::Script {
            if self.script.is_empty() {
                return Err(Error::invalid("script", "source = \"script\" needs [[script]] steps"));
            }
            let mut prev = f64::NEG_INFINITY;
            for s in &self.script {
                if !(s.at.is_finite() && s.at >= 0.0 && s.at > prev) {
                    return Err(Error::invalid("script", "step times must be >= 0 and strictly increasing"));
                }
                s.buttons.validate()?;
                prev = s.at;
            }
        }
        crate::dynamics::VehicleModel::new(self.dynamics)?;
        self.vehicle.validate()?;
        self.environment.validate()?;
        self.latency.validate()?;
        self.teleop.validate()?;
        Ok(())
    }

    /// Buttons the scripted operator is holding at `t`.
    pub fn scripted_buttons(&self, t: f64) -> Buttons {
        match self.source {
            SourceKind::HoldFwd => Buttons::FWD,
            SourceKind::Idle | SourceKind::Live => Buttons::empty(),
            SourceKind::Script => self
                .script
                .iter()
                .take_while(|s| s.at <= t)
                .last()
                .map(|s| s.buttons)
                .unwrap_or_default(),
        }
    }

    /// Horizontal-thruster force available for surge, N.
    pub fn forward_thrust(&self) -> f64 {
        2.0 * self.vehicle.thrusters.max_force
    }
}
