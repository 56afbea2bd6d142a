use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rovsim_core::calibrate::{
    fit_drag_record, fit_wave, load_fits, write_fit_report, WaveFitOptions, PARAM_WAVE_AMPLITUDE,
    TARGET_TERMINAL_VELOCITY, TARGET_WAVE_TIME,
};
use rovsim_core::sim::{export_series, read_log_file, write_log_file};
use rovsim_core::teleop::server::{ServeOptions, Server};
use rovsim_core::teleop::conformance_fixtures;
use rovsim_core::{
    run_scenario, trial_metrics, Integrator, LogFormat, ScenarioConfig, SourceKind, TrialLog, TrialStatus,
    WaveConfig,
};

#[derive(Parser)]
#[command(name = "rovsim", version, about = "ROV teleoperation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted trial to the goal and report completion metrics.
    RunTrial(RunTrial),
    /// Serve a live scenario to one operator console over TCP.
    Serve(Serve),
    /// Fit surge drag and wave amplitude and write a calibration file.
    Calibrate(Calibrate),
    /// Turn a trial log into velocity and displacement time series.
    Export(Export),
    /// Write the wire-format conformance vectors as JSON.
    Fixtures(Fixtures),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Calibration file whose fits are applied on top of the scenario.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["rk4", "sie"])]
    integrator: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    /// Add the default wave; its amplitude is fitted on the fly unless known.
    #[arg(long)]
    wave: bool,
}

#[derive(Args)]
struct RunTrial {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Log file; metrics go next to it with a `.metrics` extension.
    #[arg(long, default_value = "trial.csv")]
    out: PathBuf,
    /// Log format; taken from the `--out` extension when omitted.
    #[arg(long, value_parser = ["csv", "jsonl"])]
    format: Option<String>,
}

#[derive(Args)]
struct Serve {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value = "serve.csv")]
    out: PathBuf,
    #[arg(long, value_parser = ["csv", "jsonl"])]
    format: Option<String>,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Stop after this much simulated time.
    #[arg(long)]
    max_time: Option<f64>,
}

#[derive(Args)]
struct Calibrate {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "calibration.toml")]
    out: PathBuf,
    /// Still-water terminal surge velocity, m/s.
    #[arg(long, default_value_t = TARGET_TERMINAL_VELOCITY)]
    v_terminal: f64,
    /// Completion time of the wave trial, s.
    #[arg(long, default_value_t = TARGET_WAVE_TIME)]
    wave_time: f64,
    /// Fit drag only.
    #[arg(long)]
    no_wave: bool,
}

#[derive(Args)]
struct Export {
    /// Trial log written by `run-trial` or `serve`.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output format; taken from the `--out` extension when omitted.
    #[arg(long, value_parser = ["csv", "jsonl"])]
    format: Option<String>,
}

#[derive(Args)]
struct Fixtures {
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn format_for(flag: &Option<String>, path: &Path) -> LogFormat {
    match flag {
        Some(f) => f.parse().expect("clap restricts the values"),
        None => LogFormat::from_path(path),
    }
}

fn load_config(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.scenario {
        Some(path) => ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(path) = &args.calibration {
        let fits = load_fits(path).with_context(|| format!("loading {}", path.display()))?;
        cfg.fit.extend(fits);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(i) = &args.integrator {
        cfg.integrator = i.parse::<Integrator>().map_err(anyhow::Error::msg)?;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if args.wave && cfg.environment.wave.is_none() {
        cfg.environment.wave = Some(WaveConfig::default());
    }
    cfg.prepare()?;
    Ok(cfg)
}

/// A wave with no amplitude and no fit for one gets the amplitude that hits the
/// reference wave-trial time.
fn ensure_wave_amplitude(cfg: &mut ScenarioConfig) -> Result<()> {
    let Some(shape) = cfg.environment.wave else {
        return Ok(());
    };
    if shape.amplitude > 0.0 || cfg.fit.iter().any(|f| f.parameter == PARAM_WAVE_AMPLITUDE) {
        return Ok(());
    }
    let mut still = cfg.clone();
    still.environment.wave = None;
    if still.source == SourceKind::Live {
        still.source = SourceKind::HoldFwd;
    }
    let fit = fit_wave(TARGET_WAVE_TIME, &still, &shape, &WaveFitOptions::default())?;
    println!("wave_amplitude_n={:.6}", fit.amplitude);
    cfg.environment.wave.as_mut().expect("checked above").amplitude = fit.amplitude;
    Ok(())
}

fn exit_for(status: &TrialStatus) -> ExitCode {
    match status {
        TrialStatus::Finished => ExitCode::SUCCESS,
        TrialStatus::Timeout => ExitCode::from(2),
        TrialStatus::Diverged { .. } => ExitCode::from(3),
    }
}

fn status_summary(log: &TrialLog) -> String {
    match &log.status {
        TrialStatus::Finished => match trial_metrics(log) {
            Ok(m) => m.summary(&log.status),
            Err(e) => format!("status={}\nmetrics_error={e}\n", log.status.label()),
        },
        TrialStatus::Timeout => format!(
            "status=TIMEOUT\ntime_s={:.2}\ndisplacement_m={:.4}\n",
            log.records.last().map_or(0.0, |r| r.t),
            log.displacement()
        ),
        TrialStatus::Diverged { tick, reason } => {
            format!("status=DIVERGED\ntick={tick}\nreason={reason}\n")
        }
    }
}

fn metrics_path(out: &Path) -> PathBuf {
    out.with_extension("metrics")
}

fn run_trial(args: RunTrial) -> Result<ExitCode> {
    let mut cfg = load_config(&args.scenario)?;
    if cfg.source == SourceKind::Live {
        bail!("scenario source is \"live\"; use `rovsim serve`");
    }
    ensure_wave_amplitude(&mut cfg)?;
    let log = run_scenario(&cfg)?;
    let format = format_for(&args.format, &args.out);
    write_log_file(&args.out, &log, format)?;
    let summary = status_summary(&log);
    let metrics = metrics_path(&args.out);
    std::fs::write(&metrics, &summary).with_context(|| format!("writing {}", metrics.display()))?;
    print!("{summary}");
    Ok(exit_for(&log.status))
}

fn serve(args: Serve) -> Result<ExitCode> {
    let mut cfg = load_config(&args.scenario)?;
    cfg.source = SourceKind::Live;
    ensure_wave_amplitude(&mut cfg)?;
    let port = args.port.unwrap_or(cfg.teleop.port);
    let server = Server::bind(SocketAddr::new(args.host, port))?;
    let opts = ServeOptions {
        time_scale: args.time_scale,
        max_time: args.max_time,
        ..ServeOptions::default()
    };
    let stop = opts.stop.clone();
    ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("installing Ctrl-C handler")?;
    println!("listening={}", server.local_addr());
    std::io::stdout().flush()?;

    let report = server.run(&cfg, &opts)?;
    let format = format_for(&args.format, &args.out);
    write_log_file(&args.out, &report.log, format)?;
    print!("{}", status_summary(&report.log));
    println!(
        "sessions={}\nmalformed_frames={}\nrejected_connections={}\ntelemetry_frames={}",
        report.sessions, report.malformed, report.rejected, report.telemetry_sent
    );
    Ok(match report.log.status {
        TrialStatus::Diverged { .. } => ExitCode::from(3),
        _ => ExitCode::SUCCESS,
    })
}

fn calibrate(args: Calibrate) -> Result<ExitCode> {
    let cfg = load_config(&args.scenario)?;
    let mut still = cfg.clone();
    still.environment.wave = None;
    still.fit.retain(|f| f.parameter != PARAM_WAVE_AMPLITUDE);
    if still.source == SourceKind::Live {
        still.source = SourceKind::HoldFwd;
    }

    let drag = fit_drag_record(&still, args.v_terminal)?;
    println!("drag_surge={:.6}", drag.value);
    println!("terminal_velocity_residual_m_s={:.3e}", drag.residual);
    let mut fits = vec![drag.clone()];
    if !args.no_wave {
        drag.apply(&mut still)?;
        let shape = cfg.environment.wave.unwrap_or_default();
        let wave = fit_wave(args.wave_time, &still, &shape, &WaveFitOptions::default())?;
        println!("wave_amplitude_n={:.6}", wave.amplitude);
        println!("wave_time_s={:.2}", wave.time);
        println!("wave_time_residual_s={:.3}", wave.residual);
        fits.push(wave.record(args.wave_time));
    }
    write_fit_report(&args.out, &fits)?;
    println!("calibration={}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn export(args: Export) -> Result<ExitCode> {
    let records = read_log_file(&args.log, LogFormat::from_path(&args.log))?;
    let format = format_for(&args.format, &args.out);
    let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    export_series(&records, format, std::io::BufWriter::new(file))?;
    println!("points={}", records.len());
    Ok(ExitCode::SUCCESS)
}

fn fixtures(args: Fixtures) -> Result<ExitCode> {
    let json = conformance_fixtures().to_json();
    match args.out {
        Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // Usage errors exit 1 like every other failure; 2 and 3 are trial outcomes.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::RunTrial(a) => run_trial(a),
        Command::Serve(a) => serve(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Export(a) => export(a),
        Command::Fixtures(a) => fixtures(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
