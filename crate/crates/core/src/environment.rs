//! Water properties and the wave disturbance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::BodyForce;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveProfile {
    /// Constant push against `direction` for the whole window.
    #[default]
    Pulse,
    /// `amplitude * sin(2 pi f (t - onset))` along `direction`.
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    /// s
    pub onset: f64,
    /// s
    pub duration: f64,
    /// Peak force, N.
    pub amplitude: f64,
    /// Planar body-frame direction `(surge, sway)`; normalized on validation.
    pub direction: [f64; 2],
    pub profile: WaveProfile,
    /// Hz, sinusoid only.
    pub frequency: f64,
    /// Relative amplitude jitter in `[0, 1)`, redrawn every `jitter_period` seconds.
    pub jitter: f64,
    /// s
    pub jitter_period: f64,
    pub seed: u64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            onset: 30.0,
            duration: 4.0,
            amplitude: 0.0,
            direction: [1.0, 0.0],
            profile: WaveProfile::Pulse,
            frequency: 0.5,
            jitter: 0.0,
            jitter_period: 0.1,
            seed: 0,
        }
    }
}

impl WaveConfig {
    pub fn validate(&mut self) -> Result<()> {
        if !(self.onset.is_finite() && self.onset >= 0.0) {
            return Err(Error::invalid("wave.onset", "must be >= 0"));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::invalid("wave.duration", "must be >= 0"));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::invalid("wave.amplitude", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::invalid("wave.jitter", "must be in [0, 1)"));
        }
        if self.jitter_period.is_nan() || self.jitter_period <= 0.0 {
            return Err(Error::invalid("wave.jitter_period", "must be positive"));
        }
        if self.profile == WaveProfile::Sinusoid && (self.frequency.is_nan() || self.frequency <= 0.0) {
            return Err(Error::invalid("wave.frequency", "must be positive"));
        }
        let [a, b] = self.direction;
        let norm = a.hypot(b);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid("wave.direction", "must be a non-zero vector"));
        }
        self.direction = [a / norm, b / norm];
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.onset && t < self.onset + self.duration
    }

    fn jitter_factor(&self, t: f64) -> f64 {
        if self.jitter == 0.0 {
            return 1.0;
        }
        let bucket = ((t - self.onset) / self.jitter_period).floor() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ bucket.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        1.0 + self.jitter * rng.random_range(-1.0..=1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// kg/m³
    pub rho: f64,
    /// m/s²
    pub g: f64,
    /// °C
    pub temperature: f64,
    /// %
    pub humidity: f64,
    pub wave: Option<WaveConfig>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            rho: 1000.0,
            g: 9.81,
            temperature: 26.0,
            humidity: 60.0,
            wave: None,
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&mut self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::invalid("environment.rho", "must be positive"));
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(Error::invalid("environment.g", "must be positive"));
        }
        if let Some(w) = self.wave.as_mut() {
            w.validate()?;
        }
        Ok(())
    }
}

/// Wave force on the vehicle at time `t`; zero outside `[onset, onset + duration)`.
pub fn disturbance_force(cfg: &EnvironmentConfig, t: f64) -> BodyForce {
    let Some(w) = cfg.wave.as_ref() else {
        return BodyForce::ZERO;
    };
    if !w.is_active(t) {
        return BodyForce::ZERO;
    }
    let magnitude = w.amplitude * w.jitter_factor(t);
    let along = match w.profile {
        WaveProfile::Pulse => -magnitude,
        WaveProfile::Sinusoid => {
            magnitude * (2.0 * std::f64::consts::PI * w.frequency * (t - w.onset)).sin()
        }
    };
    BodyForce::new(along * w.direction[0], along * w.direction[1], 0.0, 0.0)
}
