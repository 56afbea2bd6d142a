//! Deterministic simulator for a small teleoperated ROV.
//!
//! Planar three-degree-of-freedom rigid-body dynamics with quadratic drag and a
//! decoupled heave channel, a six-thruster button-driven allocation, a wave
//! disturbance, and the operator link (binary frames, latency model, TCP
//! session). Trials are scripted through TOML scenario files; calibration fits
//! drag and wave amplitude so simulated trials hit measured completion times.

pub mod calibrate;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod scenario;
pub mod sim;
pub mod teleop;
pub mod vehicle;

pub use calibrate::{fit_drag, fit_wave, FitRecord, WaveFit, WaveFitOptions};
pub use dynamics::{
    BodyForce, BodyVelocity, CoriolisVariant, DynamicsParams, Integrator, Pose, RestoringVariant,
    VehicleModel, VehicleState,
};
pub use environment::{EnvironmentConfig, WaveConfig, WaveProfile};
pub use error::{Error, Result};
pub use scenario::{ScenarioConfig, SourceKind};
pub use sim::{run_scenario, trial_metrics, LogFormat, Simulation, TickRecord, TrialLog, TrialMetrics, TrialStatus};
pub use teleop::{CommandFrame, LatencyProfile, TelemetryFrame, TeleopConfig};
pub use vehicle::Buttons;
