//! Operator link: binary frames, the delay model, the session state machine and
//! the TCP endpoint the console talks to.

mod fixtures;
mod frame;
mod link;
pub mod server;
mod session;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fixtures::{conformance_fixtures, ConformanceFixtures};
pub use frame::{
    crc8, decode_command, decode_telemetry, encode_command, encode_telemetry, wrap_angle,
    CommandFrame, FrameError, TelemetryFrame, TelemetrySnapshot, COMMAND_LEN, COMMAND_TYPE, HELLO,
    MAGIC, TELEMETRY_LEN, TELEMETRY_TYPE,
};
pub use link::{LatencyProfile, Link, LinkStats, Scheduled, QUEUE_BOUND};
pub use session::{SessionBusy, SessionState, TeleopSession};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleopConfig {
    /// Neutral command after this long without a delivery, s.
    pub watchdog: f64,
    /// Operator frame rate while a button is held, Hz.
    pub command_rate: f64,
    /// Hz
    pub telemetry_rate: f64,
    /// Also pass telemetry through the navigation delay.
    pub delay_telemetry: bool,
    pub port: u16,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            watchdog: 5.0,
            command_rate: 10.0,
            telemetry_rate: 10.0,
            delay_telemetry: false,
            port: 7447,
        }
    }
}

impl TeleopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.watchdog.is_nan() || self.watchdog <= 0.0 {
            return Err(Error::invalid("teleop.watchdog", "must be positive"));
        }
        if !(self.command_rate > 0.0 && self.telemetry_rate > 0.0) {
            return Err(Error::invalid("teleop", "rates must be positive"));
        }
        Ok(())
    }
}
