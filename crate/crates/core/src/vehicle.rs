//! Push-button command mapping, thruster allocation, gripper servo, and the
//! onboard sensors that feed telemetry.

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyForce, VehicleState};
use crate::environment::EnvironmentConfig;
use crate::error::{Error, Result};

/// Hull figures used to derive default inertia and drag.
pub mod hull {
    /// kg
    pub const MASS: f64 = 11.0;
    /// m, along surge
    pub const LENGTH: f64 = 0.640;
    /// m, along sway
    pub const WIDTH: f64 = 0.705;
    /// m
    pub const HEIGHT: f64 = 0.166;
}

pub const HORIZONTAL_THRUSTERS: usize = 2;
pub const VERTICAL_THRUSTERS: usize = 4;

bitflags! {
    /// Controller buttons. Bit positions are the wire encoding.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct Buttons: u8 {
        const FWD = 1 << 0;
        const BACK = 1 << 1;
        const LEFT = 1 << 2;
        const RIGHT = 1 << 3;
        const UP = 1 << 4;
        const DOWN = 1 << 5;
        const GRIP_OPEN = 1 << 6;
        const GRIP_CLOSE = 1 << 7;
    }
}

impl Buttons {
    const OPPOSED: [(Buttons, Buttons, &'static str); 3] = [
        (Buttons::FWD, Buttons::BACK, "FWD and BACK both pressed"),
        (Buttons::UP, Buttons::DOWN, "UP and DOWN both pressed"),
        (
            Buttons::GRIP_OPEN,
            Buttons::GRIP_CLOSE,
            "GRIP_OPEN and GRIP_CLOSE both pressed",
        ),
    ];

    /// Rejects masks holding both buttons of an opposed pair.
    pub fn validate(self) -> Result<Self> {
        for (a, b, why) in Self::OPPOSED {
            if self.contains(a | b) {
                return Err(Error::CommandRejected(why));
            }
        }
        Ok(self)
    }

    pub fn is_valid(self) -> bool {
        self.validate().is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThrusterLayout {
    /// Per-thruster force limit, N.
    pub max_force: f64,
    /// Lateral offset of each horizontal thruster from the centerline, m.
    pub lever_arm: f64,
}

impl Default for ThrusterLayout {
    fn default() -> Self {
        Self {
            max_force: 1.0,
            lever_arm: 0.3,
        }
    }
}

impl ThrusterLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_force.is_finite() && self.max_force > 0.0) {
            return Err(Error::invalid("thrusters.max_force", "must be positive"));
        }
        if !(self.lever_arm.is_finite() && self.lever_arm > 0.0) {
            return Err(Error::invalid("thrusters.lever_arm", "must be positive"));
        }
        Ok(())
    }

    /// Body force produced by a set of thruster outputs. Horizontal thrusters push
    /// along surge; the starboard one sits at `+lever_arm`, so a positive yaw moment
    /// turns the bow to port. Vertical thrusters push along +z (down).
    pub fn body_force(&self, t: &ThrusterForces) -> BodyForce {
        let [port, starboard] = t.horizontal;
        BodyForce {
            surge: port + starboard,
            sway: 0.0,
            yaw: self.lever_arm * (starboard - port),
            heave: t.vertical.iter().sum(),
        }
    }
}

/// Individual thruster outputs, N.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThrusterForces {
    /// `[port, starboard]`
    pub horizontal: [f64; HORIZONTAL_THRUSTERS],
    pub vertical: [f64; VERTICAL_THRUSTERS],
}

/// Bang-bang allocation of a button mask onto the six thrusters.
pub fn allocate_thrust(cmd: Buttons, layout: &ThrusterLayout) -> Result<(ThrusterForces, BodyForce)> {
    cmd.validate()?;
    let f = layout.max_force;
    let mut port = 0.0;
    let mut starboard = 0.0;
    if cmd.contains(Buttons::FWD) {
        port += f;
        starboard += f;
    }
    if cmd.contains(Buttons::BACK) {
        port -= f;
        starboard -= f;
    }
    if cmd.contains(Buttons::LEFT) {
        port -= f;
        starboard += f;
    }
    if cmd.contains(Buttons::RIGHT) {
        port += f;
        starboard -= f;
    }
    let vertical = if cmd.contains(Buttons::UP) {
        -f
    } else if cmd.contains(Buttons::DOWN) {
        f
    } else {
        0.0
    };
    let forces = ThrusterForces {
        horizontal: [port.clamp(-f, f), starboard.clamp(-f, f)],
        vertical: [vertical; VERTICAL_THRUSTERS],
    };
    Ok((forces, layout.body_force(&forces)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GripperStatus {
    Open,
    #[default]
    Closed,
    Moving,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GripperState {
    /// rad, 0 is closed
    pub angle: f64,
    pub status: GripperStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperConfig {
    /// rad
    pub max_open: f64,
    /// Servo slew rate, rad/s.
    pub rate: f64,
}

impl Default for GripperConfig {
    fn default() -> Self {
        Self {
            max_open: 1.0,
            rate: 1.0,
        }
    }
}

const GRIPPER_SNAP: f64 = 1e-3;

/// Slews the gripper toward the commanded endpoint.
pub fn gripper_step(g: GripperState, cmd: Buttons, dt: f64, cfg: &GripperConfig) -> GripperState {
    let (target, done) = if cmd.contains(Buttons::GRIP_OPEN) {
        (cfg.max_open, GripperStatus::Open)
    } else if cmd.contains(Buttons::GRIP_CLOSE) {
        (0.0, GripperStatus::Closed)
    } else {
        return g;
    };
    let max_move = cfg.rate * dt;
    let delta = (target - g.angle).clamp(-max_move, max_move);
    let angle = (g.angle + delta).clamp(0.0, cfg.max_open);
    if (target - angle).abs() <= GRIPPER_SNAP {
        GripperState {
            angle: target,
            status: done,
        }
    } else {
        GripperState {
            angle,
            status: GripperStatus::Moving,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    /// V
    pub full_voltage: f64,
    /// V
    pub cutoff_voltage: f64,
    /// Full-load endurance, s.
    pub endurance: f64,
    /// Load fraction assumed when reading the battery in a trial.
    pub nominal_load: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            full_voltage: 12.5,
            cutoff_voltage: 10.0,
            endurance: 45.0 * 60.0,
            nominal_load: 1.0,
        }
    }
}

/// Linear discharge from full to cutoff; reaches cutoff after `endurance / load`.
pub fn battery_model(cfg: &BatteryConfig, t: f64, load: f64) -> f64 {
    let used = (load.clamp(0.0, 1.0) * t.max(0.0) / cfg.endurance).min(1.0);
    cfg.full_voltage - (cfg.full_voltage - cfg.cutoff_voltage) * used
}

/// Zero-mean Gaussian noise, one sigma per channel. All zero disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// °C
    pub temperature: f64,
    /// %
    pub humidity: f64,
    /// m
    pub depth: f64,
}

impl SensorNoise {
    pub fn is_enabled(&self) -> bool {
        self.temperature > 0.0 || self.humidity > 0.0 || self.depth > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensorReadings {
    /// °C, DHT11 resolution
    pub temperature: i8,
    /// %, DHT11 resolution
    pub humidity: u8,
    /// m
    pub depth: f64,
    /// V
    pub battery: f64,
}

pub const TEMPERATURE_RANGE: (f64, f64) = (0.0, 50.0);
pub const HUMIDITY_RANGE: (f64, f64) = (20.0, 90.0);

/// Quantizes a temperature to the sensor's integer range.
pub fn quantize_temperature(c: f64) -> i8 {
    c.round().clamp(TEMPERATURE_RANGE.0, TEMPERATURE_RANGE.1) as i8
}

pub fn quantize_humidity(pct: f64) -> u8 {
    pct.round().clamp(HUMIDITY_RANGE.0, HUMIDITY_RANGE.1) as u8
}

pub fn read_sensors(
    state: &VehicleState,
    env: &EnvironmentConfig,
    battery: &BatteryConfig,
) -> SensorReadings {
    SensorReadings {
        temperature: quantize_temperature(env.temperature),
        humidity: quantize_humidity(env.humidity),
        depth: state.pose.z.max(0.0),
        battery: battery_model(battery, state.time, battery.nominal_load),
    }
}

/// Non-dynamic vehicle configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub thrusters: ThrusterLayout,
    pub gripper: GripperConfig,
    pub battery: BatteryConfig,
    pub sensor_noise: SensorNoise,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        self.thrusters.validate()?;
        if !(self.gripper.max_open > 0.0 && self.gripper.rate > 0.0) {
            return Err(Error::invalid("gripper", "max_open and rate must be positive"));
        }
        let b = &self.battery;
        if !(b.full_voltage > b.cutoff_voltage && b.cutoff_voltage >= 0.0 && b.endurance > 0.0) {
            return Err(Error::invalid(
                "battery",
                "need full_voltage > cutoff_voltage >= 0 and endurance > 0",
            ));
        }
        let n = &self.sensor_noise;
        if n.temperature < 0.0 || n.humidity < 0.0 || n.depth < 0.0 {
            return Err(Error::invalid("sensor_noise", "sigmas must be non-negative"));
        }
        Ok(())
    }
}
