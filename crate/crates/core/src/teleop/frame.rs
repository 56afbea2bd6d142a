//! Fixed-size binary frames. Multi-byte fields are little-endian; the trailing
//! byte is CRC-8 (poly 0x07, init 0x00) over everything before it.
//!
//! Command, 6 bytes:
//!
//! | off | size | field                          |
//! |-----|------|--------------------------------|
//! | 0   | 1    | magic `0xA7`                   |
//! | 1   | 1    | type `0x01`                    |
//! | 2   | 2    | seq (u16)                      |
//! | 4   | 1    | buttons (see [`Buttons`])      |
//! | 5   | 1    | crc8                           |
//!
//! Telemetry, 36 bytes:
//!
//! | off | size | field                                   |
//! |-----|------|-----------------------------------------|
//! | 0   | 1    | magic `0xA7`                            |
//! | 1   | 1    | type `0x02`                             |
//! | 2   | 2    | seq (u16)                               |
//! | 4   | 4    | t (u32 ms)                              |
//! | 8   | 12   | x, y, z (i32 mm each)                   |
//! | 20  | 2    | yaw (i16 mrad, wrapped to (-pi, pi])    |
//! | 22  | 6    | surge, sway, heave (i16 mm/s each)      |
//! | 28  | 2    | yaw rate (i16 mrad/s)                   |
//! | 30  | 1    | temperature (i8 °C)                     |
//! | 31  | 1    | humidity (u8 %)                         |
//! | 32  | 2    | battery (u16 mV)                        |
//! | 34  | 1    | gripper (u8, 0 closed .. 255 open)      |
//! | 35  | 1    | crc8                                    |
//!
//! Physical values are quantized by truncation toward zero and saturate at the
//! field range.

use thiserror::Error;

use crate::dynamics::{BodyVelocity, Pose};
use crate::vehicle::{Buttons, SensorReadings};

pub const MAGIC: u8 = 0xA7;
pub const COMMAND_TYPE: u8 = 0x01;
pub const TELEMETRY_TYPE: u8 = 0x02;
pub const COMMAND_LEN: usize = 6;
pub const TELEMETRY_LEN: usize = 36;
/// Sent by the operator when the stream opens and echoed by the vehicle.
pub const HELLO: [u8; 4] = *b"TRZ1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("short frame: need {expected} bytes, got {got}")]
    ShortFrame { expected: usize, got: usize },
    #[error("bad magic 0x{0:02x}")]
    BadMagic(u8),
    #[error("bad crc: computed 0x{computed:02x}, frame carries 0x{carried:02x}")]
    BadCrc { computed: u8, carried: u8 },
    #[error("unexpected frame type 0x{0:02x}")]
    UnexpectedType(u8),
    #[error("contradictory buttons 0b{0:08b}")]
    ContradictoryButtons(u8),
}

/// CRC-8/SMBUS.
pub fn crc8(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0u8, |mut crc, &b| {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 {
                (crc << 1) ^ 0x07
            } else {
                crc << 1
            };
        }
        crc
    })
}

fn check_envelope(bytes: &[u8], len: usize, kind: u8) -> Result<(), FrameError> {
    if bytes.len() < len {
        return Err(FrameError::ShortFrame {
            expected: len,
            got: bytes.len(),
        });
    }
    if bytes[0] != MAGIC {
        return Err(FrameError::BadMagic(bytes[0]));
    }
    let computed = crc8(&bytes[..len - 1]);
    let carried = bytes[len - 1];
    if computed != carried {
        return Err(FrameError::BadCrc { computed, carried });
    }
    if bytes[1] != kind {
        return Err(FrameError::UnexpectedType(bytes[1]));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CommandFrame {
    pub seq: u16,
    pub buttons: Buttons,
}

impl CommandFrame {
    pub fn new(seq: u16, buttons: Buttons) -> Self {
        Self { seq, buttons }
    }

    pub fn encode(&self) -> [u8; COMMAND_LEN] {
        let mut out = [0u8; COMMAND_LEN];
        out[0] = MAGIC;
        out[1] = COMMAND_TYPE;
        out[2..4].copy_from_slice(&self.seq.to_le_bytes());
        out[4] = self.buttons.bits();
        out[5] = crc8(&out[..5]);
        out
    }

    /// Decodes the first [`COMMAND_LEN`] bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        check_envelope(bytes, COMMAND_LEN, COMMAND_TYPE)?;
        let buttons = Buttons::from_bits_retain(bytes[4]);
        if !buttons.is_valid() {
            return Err(FrameError::ContradictoryButtons(bytes[4]));
        }
        Ok(Self {
            seq: u16::from_le_bytes([bytes[2], bytes[3]]),
            buttons,
        })
    }
}

pub fn encode_command(f: &CommandFrame) -> [u8; COMMAND_LEN] {
    f.encode()
}

pub fn decode_command(bytes: &[u8]) -> Result<CommandFrame, FrameError> {
    CommandFrame::decode(bytes)
}

/// Telemetry in wire units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TelemetryFrame {
    pub seq: u16,
    pub t_ms: u32,
    pub x_mm: i32,
    pub y_mm: i32,
    pub z_mm: i32,
    pub yaw_mrad: i16,
    pub surge_mm_s: i16,
    pub sway_mm_s: i16,
    pub heave_mm_s: i16,
    pub yaw_rate_mrad_s: i16,
    pub temperature_c: i8,
    pub humidity_pct: u8,
    pub battery_mv: u16,
    pub gripper: u8,
}

/// What the vehicle reports, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TelemetrySnapshot {
    /// s
    pub time: f64,
    pub pose: Pose,
    pub velocity: BodyVelocity,
    pub sensors: SensorReadings,
    /// 0 closed, 1 fully open.
    pub gripper_opening: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

// `as` from float saturates at the integer bounds and maps NaN to 0.
fn milli_i32(v: f64) -> i32 {
    (v * 1000.0).trunc() as i32
}

fn milli_i16(v: f64) -> i16 {
    (v * 1000.0).trunc() as i16
}

impl TelemetryFrame {
    pub fn quantize(seq: u16, s: &TelemetrySnapshot) -> Self {
        Self {
            seq,
            t_ms: (s.time * 1000.0).trunc() as u32,
            x_mm: milli_i32(s.pose.x),
            y_mm: milli_i32(s.pose.y),
            z_mm: milli_i32(s.pose.z),
            yaw_mrad: milli_i16(wrap_angle(s.pose.yaw)),
            surge_mm_s: milli_i16(s.velocity.surge),
            sway_mm_s: milli_i16(s.velocity.sway),
            heave_mm_s: milli_i16(s.velocity.heave),
            yaw_rate_mrad_s: milli_i16(s.velocity.yaw_rate),
            temperature_c: s.sensors.temperature,
            humidity_pct: s.sensors.humidity,
            battery_mv: (s.sensors.battery * 1000.0).trunc() as u16,
            gripper: (s.gripper_opening.clamp(0.0, 1.0) * 255.0).trunc() as u8,
        }
    }

    /// Back to physical units. Pitch is not transmitted and reads as zero.
    pub fn snapshot(&self) -> TelemetrySnapshot {
        let m = |v: i32| f64::from(v) / 1000.0;
        TelemetrySnapshot {
            time: f64::from(self.t_ms) / 1000.0,
            pose: Pose {
                x: m(self.x_mm),
                y: m(self.y_mm),
                z: m(self.z_mm),
                yaw: m(self.yaw_mrad.into()),
                pitch: 0.0,
            },
            velocity: BodyVelocity {
                surge: m(self.surge_mm_s.into()),
                sway: m(self.sway_mm_s.into()),
                yaw_rate: m(self.yaw_rate_mrad_s.into()),
                heave: m(self.heave_mm_s.into()),
            },
            sensors: SensorReadings {
                temperature: self.temperature_c,
                humidity: self.humidity_pct,
                depth: m(self.z_mm).max(0.0),
                battery: f64::from(self.battery_mv) / 1000.0,
            },
            gripper_opening: f64::from(self.gripper) / 255.0,
        }
    }

    pub fn encode(&self) -> [u8; TELEMETRY_LEN] {
        let mut out = [0u8; TELEMETRY_LEN];
        out[0] = MAGIC;
        out[1] = TELEMETRY_TYPE;
        out[2..4].copy_from_slice(&self.seq.to_le_bytes());
        out[4..8].copy_from_slice(&self.t_ms.to_le_bytes());
        out[8..12].copy_from_slice(&self.x_mm.to_le_bytes());
        out[12..16].copy_from_slice(&self.y_mm.to_le_bytes());
        out[16..20].copy_from_slice(&self.z_mm.to_le_bytes());
        out[20..22].copy_from_slice(&self.yaw_mrad.to_le_bytes());
        out[22..24].copy_from_slice(&self.surge_mm_s.to_le_bytes());
        out[24..26].copy_from_slice(&self.sway_mm_s.to_le_bytes());
        out[26..28].copy_from_slice(&self.heave_mm_s.to_le_bytes());
        out[28..30].copy_from_slice(&self.yaw_rate_mrad_s.to_le_bytes());
        out[30] = self.temperature_c as u8;
        out[31] = self.humidity_pct;
        out[32..34].copy_from_slice(&self.battery_mv.to_le_bytes());
        out[34] = self.gripper;
        out[35] = crc8(&out[..35]);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        check_envelope(bytes, TELEMETRY_LEN, TELEMETRY_TYPE)?;
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let i16_at = |i: usize| i16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let i32_at = |i: usize| i32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Ok(Self {
            seq: u16_at(2),
            t_ms: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
            x_mm: i32_at(8),
            y_mm: i32_at(12),
            z_mm: i32_at(16),
            yaw_mrad: i16_at(20),
            surge_mm_s: i16_at(22),
            sway_mm_s: i16_at(24),
            heave_mm_s: i16_at(26),
            yaw_rate_mrad_s: i16_at(28),
            temperature_c: bytes[30] as i8,
            humidity_pct: bytes[31],
            battery_mv: u16_at(32),
            gripper: bytes[34],
        })
    }
}

pub fn encode_telemetry(f: &TelemetryFrame) -> [u8; TELEMETRY_LEN] {
    f.encode()
}

pub fn decode_telemetry(bytes: &[u8]) -> Result<TelemetryFrame, FrameError> {
    TelemetryFrame::decode(bytes)
}
