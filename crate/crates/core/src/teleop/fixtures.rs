//! Hex conformance vectors shared with the browser console.

use serde::{Deserialize, Serialize};

use super::frame::{crc8, CommandFrame, FrameError, TelemetryFrame};
use crate::vehicle::Buttons;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandVector {
    pub name: String,
    pub seq: u16,
    pub buttons: u8,
    pub hex: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryVector {
    pub name: String,
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
    pub hex: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectVector {
    pub name: String,
    pub hex: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceFixtures {
    pub commands: Vec<CommandVector>,
    pub telemetry: Vec<TelemetryVector>,
    pub rejected_commands: Vec<RejectVector>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn error_name(e: &FrameError) -> &'static str {
    match e {
        FrameError::ShortFrame { .. } => "ShortFrame",
        FrameError::BadMagic(_) => "BadMagic",
        FrameError::BadCrc { .. } => "BadCrc",
        FrameError::UnexpectedType(_) => "UnexpectedType",
        FrameError::ContradictoryButtons(_) => "ContradictoryButtons",
    }
}

fn telemetry_vector(name: &str, f: TelemetryFrame) -> TelemetryVector {
    TelemetryVector {
        name: name.into(),
        seq: f.seq,
        t_ms: f.t_ms,
        x_mm: f.x_mm,
        y_mm: f.y_mm,
        z_mm: f.z_mm,
        yaw_mrad: f.yaw_mrad,
        surge_mm_s: f.surge_mm_s,
        sway_mm_s: f.sway_mm_s,
        heave_mm_s: f.heave_mm_s,
        yaw_rate_mrad_s: f.yaw_rate_mrad_s,
        temperature_c: f.temperature_c,
        humidity_pct: f.humidity_pct,
        battery_mv: f.battery_mv,
        gripper: f.gripper,
        hex: hex(&f.encode()),
    }
}

pub fn conformance_fixtures() -> ConformanceFixtures {
    let mut commands = Vec::new();
    let mut push = |name: &str, seq: u16, b: Buttons| {
        commands.push(CommandVector {
            name: name.into(),
            seq,
            buttons: b.bits(),
            hex: hex(&CommandFrame::new(seq, b).encode()),
        });
    };
    push("idle", 0, Buttons::empty());
    for (name, b) in Buttons::all().iter_names() {
        push(&name.to_ascii_lowercase(), 1, b);
    }
    push("fwd_left", 2, Buttons::FWD | Buttons::LEFT);
    push("back_right_up", 3, Buttons::BACK | Buttons::RIGHT | Buttons::UP);
    push("down_grip_close", 0x0100, Buttons::DOWN | Buttons::GRIP_CLOSE);
    push("seq_max", u16::MAX, Buttons::FWD);

    let telemetry = vec![
        telemetry_vector("zero", TelemetryFrame::default()),
        telemetry_vector(
            "cruise",
            TelemetryFrame {
                seq: 42,
                t_ms: 12_340,
                x_mm: 1234,
                y_mm: -56,
                z_mm: 500,
                yaw_mrad: -785,
                surge_mm_s: 135,
                sway_mm_s: -3,
                heave_mm_s: 0,
                yaw_rate_mrad_s: 12,
                temperature_c: 26,
                humidity_pct: 60,
                battery_mv: 12_478,
                gripper: 255,
            },
        ),
        telemetry_vector(
            "extremes",
            TelemetryFrame {
                seq: u16::MAX,
                t_ms: u32::MAX,
                x_mm: i32::MIN,
                y_mm: i32::MAX,
                z_mm: 0,
                yaw_mrad: 3142,
                surge_mm_s: i16::MIN,
                sway_mm_s: i16::MAX,
                heave_mm_s: -1,
                yaw_rate_mrad_s: -3142,
                temperature_c: -1,
                humidity_pct: 90,
                battery_mv: 10_000,
                gripper: 128,
            },
        ),
    ];

    let mut rejected = Vec::new();
    let mut reject = |name: &str, bytes: Vec<u8>| {
        let err = CommandFrame::decode(&bytes).expect_err("reject vector must fail");
        rejected.push(RejectVector {
            name: name.into(),
            hex: hex(&bytes),
            error: error_name(&err).into(),
        });
    };
    let with_crc = |mut b: Vec<u8>| {
        let c = crc8(&b);
        b.push(c);
        b
    };
    reject("fwd_back", with_crc(vec![0xA7, 0x01, 0, 0, 0b0000_0011]));
    reject("up_down", with_crc(vec![0xA7, 0x01, 0, 0, 0b0011_0000]));
    reject("grip_open_close", with_crc(vec![0xA7, 0x01, 0, 0, 0b1100_0000]));
    let mut bad_crc = CommandFrame::new(5, Buttons::FWD).encode().to_vec();
    bad_crc[5] ^= 0xFF;
    reject("bad_crc", bad_crc);
    let mut bad_magic = CommandFrame::new(5, Buttons::FWD).encode().to_vec();
    bad_magic[0] = 0xA6;
    reject("bad_magic", bad_magic);
    reject("telemetry_type", with_crc(vec![0xA7, 0x02, 0, 0, 0]));
    reject("short", vec![0xA7, 0x01, 0, 0, 0]);

    ConformanceFixtures {
        commands,
        telemetry,
        rejected_commands: rejected,
    }
}

impl ConformanceFixtures {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixtures serialize");
        s.push('\n');
        s
    }
}
