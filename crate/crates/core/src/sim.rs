//! Fixed-step trial runner, trial logs and their metrics.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, VehicleModel, VehicleState};
use crate::environment::disturbance_force;
use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SourceKind};
use crate::teleop::{CommandFrame, Link, TelemetrySnapshot};
use crate::vehicle::{self, allocate_thrust, gripper_step, read_sensors, Buttons, SensorReadings};

/// One row of a trial log. Field names are the CSV header.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickRecord {
    /// s, end of the tick
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
    pub v1: f64,
    pub v2: f64,
    pub v6: f64,
    pub w: f64,
    /// Thruster force over the tick.
    pub f1: f64,
    pub f2: f64,
    pub f6: f64,
    pub fz: f64,
    /// Surge component of the wave disturbance.
    pub dist_f1: f64,
    pub cmd: u8,
    pub temp: i8,
    pub hum: u8,
    pub batt: f64,
}

pub const CSV_HEADER: [&str; 18] = [
    "t", "x", "y", "z", "psi", "v1", "v2", "v6", "w", "f1", "f2", "f6", "fz", "dist_f1", "cmd",
    "temp", "hum", "batt",
];

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Finished,
    Timeout,
    /// The step that produced tick `tick` failed.
    Diverged { tick: u64, reason: String },
}

impl TrialStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TrialStatus::Finished => "FINISHED",
            TrialStatus::Timeout => "TIMEOUT",
            TrialStatus::Diverged { .. } => "DIVERGED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub goal: f64,
    pub dt: f64,
    pub records: Vec<TickRecord>,
    pub status: TrialStatus,
}

impl TrialLog {
    pub fn completion_time(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Finished => self.records.last().map(|r| r.t),
            _ => None,
        }
    }

    pub fn displacement(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.x)
    }
}

/// One vehicle in one environment, advanced a tick at a time by whoever owns it.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    model: VehicleModel,
    state: VehicleState,
    tick: u64,
    records: Vec<TickRecord>,
    noise: Option<(ChaCha8Rng, [Normal<f64>; 3])>,
}

impl Simulation {
    pub fn new(mut cfg: ScenarioConfig) -> Result<Self> {
        cfg.prepare()?;
        let model = VehicleModel::new(cfg.dynamics)?;
        let n = cfg.vehicle.sensor_noise;
        let noise = if n.is_enabled() {
            let normal = |s: f64| Normal::new(0.0, s).expect("sigma validated");
            Some((
                ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
                [normal(n.temperature), normal(n.humidity), normal(n.depth)],
            ))
        } else {
            None
        };
        Ok(Self {
            state: VehicleState::at_depth(cfg.initial_depth, cfg.dynamics.pitch),
            cfg,
            model,
            tick: 0,
            records: Vec::new(),
            noise,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn model(&self) -> &VehicleModel {
        &self.model
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Start of the next tick, s.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    fn sensors(&mut self) -> SensorReadings {
        let mut r = read_sensors(&self.state, &self.cfg.environment, &self.cfg.vehicle.battery);
        if let Some((rng, [temp, hum, depth])) = self.noise.as_mut() {
            let env = &self.cfg.environment;
            r.temperature = vehicle::quantize_temperature(env.temperature + temp.sample(rng));
            r.humidity = vehicle::quantize_humidity(env.humidity + hum.sample(rng));
            r.depth = (r.depth + depth.sample(rng)).max(0.0);
        }
        r
    }

    /// Holds `cmd` for one tick. On error the state is left at the last good tick.
    pub fn advance(&mut self, cmd: Buttons) -> Result<&TickRecord> {
        let t = self.time();
        let (_, thrust) = allocate_thrust(cmd, &self.cfg.vehicle.thrusters)?;
        let disturbance = disturbance_force(&self.cfg.environment, t);
        let mut next = dynamics::step(
            &self.state,
            &(thrust + disturbance),
            &self.model,
            self.cfg.dt,
            self.cfg.integrator,
        )?;
        next.gripper = gripper_step(self.state.gripper, cmd, self.cfg.dt, &self.cfg.vehicle.gripper);
        self.tick += 1;
        next.time = self.time();
        self.state = next;
        let sensors = self.sensors();
        let (p, v) = (&self.state.pose, &self.state.velocity);
        self.records.push(TickRecord {
            t: self.state.time,
            x: p.x,
            y: p.y,
            z: p.z,
            psi: p.yaw,
            v1: v.surge,
            v2: v.sway,
            v6: v.yaw_rate,
            w: v.heave,
            f1: thrust.surge,
            f2: thrust.sway,
            f6: thrust.yaw,
            fz: thrust.heave,
            dist_f1: disturbance.surge,
            cmd: cmd.bits(),
            temp: sensors.temperature,
            hum: sensors.humidity,
            batt: sensors.battery,
        });
        Ok(self.records.last().unwrap())
    }

    /// Surge displacement from the start.
    pub fn displacement(&self) -> f64 {
        self.state.pose.x
    }

    pub fn goal_reached(&self) -> bool {
        self.displacement() >= self.cfg.goal
    }

    pub fn snapshot(&self) -> TelemetrySnapshot {
        let last = self.records.last();
        TelemetrySnapshot {
            time: self.state.time,
            pose: self.state.pose,
            velocity: self.state.velocity,
            sensors: SensorReadings {
                temperature: last.map_or_else(
                    || vehicle::quantize_temperature(self.cfg.environment.temperature),
                    |r| r.temp,
                ),
                humidity: last.map_or_else(
                    || vehicle::quantize_humidity(self.cfg.environment.humidity),
                    |r| r.hum,
                ),
                depth: self.state.pose.z.max(0.0),
                battery: last.map_or(self.cfg.vehicle.battery.full_voltage, |r| r.batt),
            },
            gripper_opening: self.state.gripper.angle / self.cfg.vehicle.gripper.max_open,
        }
    }

    pub fn into_log(self, status: TrialStatus) -> TrialLog {
        TrialLog {
            goal: self.cfg.goal,
            dt: self.cfg.dt,
            records: self.records,
            status,
        }
    }
}

fn ticks_per(dt: f64, rate_hz: f64) -> u64 {
    ((1.0 / (rate_hz * dt)).round() as u64).max(1)
}

/// Runs a scripted scenario to the goal, timeout, or divergence.
///
/// Scripted buttons are sent as command frames at the teleop command rate and,
/// when `scripted_latency` is set, pass through an established link so each
/// takes effect after a navigation delay.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<TrialLog> {
    if cfg.source == SourceKind::Live {
        return Err(Error::Config {
            line: None,
            message: "live scenarios are driven by the teleop server, not run_scenario".into(),
        });
    }
    let mut sim = Simulation::new(cfg.clone())?;
    let cfg = sim.config().clone();
    let mut link = cfg
        .scripted_latency
        .then(|| Link::<CommandFrame>::established(cfg.latency, cfg.seed));
    let frame_every = ticks_per(cfg.dt, cfg.teleop.command_rate);
    let max_ticks = (cfg.max_time / cfg.dt).ceil() as u64;
    let mut applied = Buttons::empty();
    let mut seq = 0u16;

    let status = loop {
        if sim.tick() >= max_ticks {
            break TrialStatus::Timeout;
        }
        let t = sim.time();
        let intent = cfg.scripted_buttons(t);
        match link.as_mut() {
            Some(link) => {
                if sim.tick() % frame_every == 0 {
                    link.enqueue(CommandFrame::new(seq, intent), t);
                    seq = seq.wrapping_add(1);
                }
                if let Some(f) = link.poll(t).last() {
                    applied = f.buttons;
                }
            }
            None => applied = intent,
        }
        if let Err(e) = sim.advance(applied) {
            break TrialStatus::Diverged {
                tick: sim.tick() + 1,
                reason: e.to_string(),
            };
        }
        if sim.goal_reached() {
            break TrialStatus::Finished;
        }
    };
    Ok(sim.into_log(status))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    /// s
    pub time_taken: f64,
    /// goal / time_taken, m/s
    pub avg_velocity_dist_over_time: f64,
    /// Mean sampled surge velocity from the first time it reaches 95 % of its
    /// maximum until the finish (ramp-up excluded), m/s.
    pub avg_velocity_instantaneous_mean: f64,
    /// First time surge velocity reaches 95 % of `v_max`, s.
    pub time_to_95pct_vmax: f64,
    /// m/s
    pub v_max: f64,
}

pub fn trial_metrics(log: &TrialLog) -> Result<TrialMetrics> {
    if log.status != TrialStatus::Finished {
        return Err(Error::Precondition(format!(
            "metrics need a FINISHED log, got {}",
            log.status.label()
        )));
    }
    let last = log
        .records
        .last()
        .ok_or_else(|| Error::Precondition("empty log".into()))?;
    let time_taken = last.t;
    let v_max = log.records.iter().map(|r| r.v1).fold(f64::NEG_INFINITY, f64::max);
    let cruise_start = log
        .records
        .iter()
        .position(|r| r.v1 >= 0.95 * v_max)
        .expect("v_max is attained");
    let cruise = &log.records[cruise_start..];
    Ok(TrialMetrics {
        time_taken,
        avg_velocity_dist_over_time: log.goal / time_taken,
        avg_velocity_instantaneous_mean: cruise.iter().map(|r| r.v1).sum::<f64>() / cruise.len() as f64,
        time_to_95pct_vmax: log.records[cruise_start].t,
        v_max,
    })
}

impl TrialMetrics {
    /// `key=value` lines, velocities also in cm/s.
    pub fn summary(&self, status: &TrialStatus) -> String {
        format!(
            "status={}\ntime_taken_s={:.2}\navg_velocity_dist_over_time_cm_s={:.2}\n\
             avg_velocity_instantaneous_mean_cm_s={:.2}\ntime_to_95pct_vmax_s={:.2}\nv_max_cm_s={:.2}\n",
            status.label(),
            self.time_taken,
            self.avg_velocity_dist_over_time * 100.0,
            self.avg_velocity_instantaneous_mean * 100.0,
            self.time_to_95pct_vmax,
            self.v_max * 100.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogFormat {
    #[default]
    Csv,
    JsonLines,
}

impl std::str::FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" | "json-lines" => Ok(LogFormat::JsonLines),
            other => Err(format!("unknown format `{other}` (expected csv or jsonl)")),
        }
    }
}

impl LogFormat {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => LogFormat::JsonLines,
            _ => LogFormat::Csv,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io {
            path: "<stream>".into(),
            source: e,
        },
        other => Error::CorruptLog {
            index: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn export_records<W: Write>(records: &[TickRecord], format: LogFormat, out: W) -> Result<()> {
    match format {
        LogFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in records {
                w.serialize(r).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io("<stream>", e))?;
        }
        LogFormat::JsonLines => {
            let mut out = std::io::BufWriter::new(out);
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(|e| Error::io("<stream>", e.into()))?;
                out.write_all(b"\n").map_err(|e| Error::io("<stream>", e))?;
            }
            out.flush().map_err(|e| Error::io("<stream>", e))?;
        }
    }
    Ok(())
}

pub fn export_log<W: Write>(log: &TrialLog, format: LogFormat, out: W) -> Result<()> {
    export_records(&log.records, format, out)
}

/// Reads records back. Errors name the zero-based record index.
pub fn import_records<R: BufRead>(input: R, format: LogFormat) -> Result<Vec<TickRecord>> {
    match format {
        LogFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
            let header = rdr.headers().map_err(csv_err)?;
            if header.iter().ne(CSV_HEADER) {
                return Err(Error::CorruptLog {
                    index: 0,
                    message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
                });
            }
            rdr.deserialize()
                .enumerate()
                .map(|(index, r)| {
                    r.map_err(|e| Error::CorruptLog {
                        index,
                        message: e.to_string(),
                    })
                })
                .collect()
        }
        LogFormat::JsonLines => input
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|(index, line)| {
                let line = line.map_err(|e| Error::io("<stream>", e))?;
                serde_json::from_str(&line).map_err(|e| Error::CorruptLog {
                    index,
                    message: e.to_string(),
                })
            })
            .collect(),
    }
}

pub fn write_log_file(path: &Path, log: &TrialLog, format: LogFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    export_log(log, format, std::io::BufWriter::new(file)).map_err(|e| with_path(e, path))
}

pub fn read_log_file(path: &Path, format: LogFormat) -> Result<Vec<TickRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    import_records(std::io::BufReader::new(file), format).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// `t, v1, x` triples for plotting surge velocity and displacement over time.
pub fn export_series<W: Write>(records: &[TickRecord], format: LogFormat, mut out: W) -> Result<()> {
    #[derive(Serialize)]
    struct Point {
        t: f64,
        velocity: f64,
        displacement: f64,
    }
    let io = |e: std::io::Error| Error::io("<stream>", e);
    match format {
        LogFormat::Csv => {
            writeln!(out, "t,velocity,displacement").map_err(io)?;
            for r in records {
                writeln!(out, "{},{},{}", r.t, r.v1, r.x).map_err(io)?;
            }
        }
        LogFormat::JsonLines => {
            for r in records {
                let p = Point {
                    t: r.t,
                    velocity: r.v1,
                    displacement: r.x,
                };
                serde_json::to_writer(&mut out, &p).map_err(|e| io(e.into()))?;
                out.write_all(b"\n").map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}
