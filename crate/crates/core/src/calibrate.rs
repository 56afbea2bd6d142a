//! Parameter fits that make simulated trials hit measured targets.
//!
//! Thrust and drag are only identifiable through their ratio at terminal
//! velocity, so thrust is fixed by convention and the surge drag coefficient is
//! fitted. The wave amplitude is fitted by bisection on completion time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::DragModel;
use crate::environment::WaveConfig;
use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SourceKind, SCHEMA_VERSION};
use crate::sim::{run_scenario, TrialStatus};

pub const PARAM_SURGE_DRAG: &str = "drag.surge";
pub const PARAM_WAVE_AMPLITUDE: &str = "wave.amplitude";

/// Steady-state surge speed of the still-water trial, m/s.
pub const TARGET_TERMINAL_VELOCITY: f64 = 0.135;
/// Completion time of the wave trial, s.
pub const TARGET_WAVE_TIME: f64 = 39.0;

/// One fitted parameter with the target it was fitted against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    pub parameter: String,
    pub value: f64,
    pub target_metric: String,
    pub target: f64,
    pub achieved: f64,
    pub residual: f64,
}

impl FitRecord {
    /// Writes the fitted value into `cfg`. A surge drag fit rebuilds the whole
    /// drag model from the new coefficient; a wave amplitude only applies when
    /// the scenario has a wave.
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::Config {
                line: None,
                message: format!("fit `{}` has a non-finite value", self.parameter),
            });
        }
        match self.parameter.as_str() {
            PARAM_SURGE_DRAG => cfg.dynamics.drag = DragModel::from_surge_coefficient(self.value),
            PARAM_WAVE_AMPLITUDE => {
                if let Some(w) = cfg.environment.wave.as_mut() {
                    w.amplitude = self.value;
                }
            }
            other => {
                return Err(Error::Config {
                    line: None,
                    message: format!("unknown fit parameter `{other}`"),
                })
            }
        }
        Ok(())
    }
}

/// `d = thrust / v²`, the quadratic-drag balance at terminal velocity.
pub fn fit_drag(thrust: f64, v_terminal: f64) -> Result<f64> {
    if !(thrust.is_finite() && thrust > 0.0) {
        return Err(Error::invalid("thrust", "must be positive"));
    }
    if !(v_terminal.is_finite() && v_terminal > 0.0) {
        return Err(Error::invalid("v_terminal", "must be positive"));
    }
    Ok(thrust / (v_terminal * v_terminal))
}

/// Surge speed after holding FWD long enough to settle, with no link delay or wave.
pub fn simulated_terminal_velocity(cfg: &ScenarioConfig, horizon: f64) -> Result<f64> {
    let mut cfg = cfg.clone();
    cfg.goal = f64::MAX;
    cfg.max_time = horizon;
    cfg.source = SourceKind::HoldFwd;
    cfg.scripted_latency = false;
    cfg.environment.wave = None;
    let log = run_scenario(&cfg)?;
    if let TrialStatus::Diverged { reason, .. } = log.status {
        return Err(Error::DivergedState(reason));
    }
    Ok(log.records.last().map_or(0.0, |r| r.v1))
}

/// Fits surge drag for the scenario's thrust and checks it in simulation.
pub fn fit_drag_record(cfg: &ScenarioConfig, v_terminal: f64) -> Result<FitRecord> {
    let d = fit_drag(cfg.forward_thrust(), v_terminal)?;
    let mut check = cfg.clone();
    check.fit.retain(|f| f.parameter != PARAM_SURGE_DRAG);
    check.dynamics.drag = DragModel::from_surge_coefficient(d);
    let achieved = simulated_terminal_velocity(&check, 60.0)?;
    Ok(FitRecord {
        parameter: PARAM_SURGE_DRAG.into(),
        value: d,
        target_metric: "terminal_velocity_m_s".into(),
        target: v_terminal,
        achieved,
        residual: (achieved - v_terminal).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveFitOptions {
    /// Upper end of the amplitude bracket, N.
    pub amplitude_high: f64,
    /// Accept when |time(A) - target| is within this, s.
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl Default for WaveFitOptions {
    fn default() -> Self {
        Self {
            amplitude_high: 20.0,
            tolerance: 0.5,
            max_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveFit {
    /// N
    pub amplitude: f64,
    /// Completion time at `amplitude`, s.
    pub time: f64,
    pub residual: f64,
    /// Simulations run, including the two bracket ends.
    pub evaluations: u32,
}

impl WaveFit {
    pub fn record(&self, target: f64) -> FitRecord {
        FitRecord {
            parameter: PARAM_WAVE_AMPLITUDE.into(),
            value: self.amplitude,
            target_metric: "completion_time_s".into(),
            target,
            achieved: self.time,
            residual: self.residual,
        }
    }
}

/// Completion time of `cfg`; a run that times out counts as infinitely slow.
pub fn completion_time(cfg: &ScenarioConfig) -> Result<f64> {
    let log = run_scenario(cfg)?;
    match log.status {
        TrialStatus::Finished => Ok(log.completion_time().expect("finished log has records")),
        TrialStatus::Timeout => Ok(f64::INFINITY),
        TrialStatus::Diverged { reason, .. } => Err(Error::DivergedState(reason)),
    }
}

/// Bisects the wave amplitude so the trial finishes at `target` seconds.
///
/// `shape` supplies everything but the amplitude. Completion time must not
/// decrease with amplitude; every evaluation is checked against the earlier ones.
pub fn fit_wave(
    target: f64,
    still_cfg: &ScenarioConfig,
    shape: &WaveConfig,
    opts: &WaveFitOptions,
) -> Result<WaveFit> {
    let with_amplitude = |a: f64| {
        let mut cfg = still_cfg.clone();
        cfg.fit.retain(|f| f.parameter != PARAM_WAVE_AMPLITUDE);
        cfg.environment.wave = Some(WaveConfig {
            amplitude: a,
            ..*shape
        });
        cfg
    };
    let mut evaluated: Vec<(f64, f64)> = Vec::new();
    let mut eval = |a: f64| -> Result<f64> {
        let t = completion_time(&with_amplitude(a))?;
        for &(a0, t0) in &evaluated {
            let (lo, hi) = if a0 < a { ((a0, t0), (a, t)) } else { ((a, t), (a0, t0)) };
            if lo.1 > hi.1 {
                return Err(Error::NonMonotone {
                    a_lo: lo.0,
                    t_lo: lo.1,
                    a_hi: hi.0,
                    t_hi: hi.1,
                });
            }
        }
        evaluated.push((a, t));
        Ok(t)
    };

    let still = eval(0.0)?;
    let fit = |amplitude: f64, time: f64, evaluations: u32| WaveFit {
        amplitude,
        time,
        residual: (time - target).abs(),
        evaluations,
    };
    if (still - target).abs() <= opts.tolerance {
        return Ok(fit(0.0, still, 1));
    }
    if target < still {
        return Err(Error::Precondition(format!(
            "target {target} s is faster than the still-water time {still} s; a wave cannot speed the vehicle up"
        )));
    }
    let (mut lo, mut hi) = (0.0, opts.amplitude_high);
    let t_hi = eval(hi)?;
    if t_hi < target - opts.tolerance {
        return Err(Error::NoBracket {
            target,
            low: still,
            high: t_hi,
        });
    }
    if (t_hi - target).abs() <= opts.tolerance {
        return Ok(fit(hi, t_hi, 2));
    }
    for k in 0..opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        let t = eval(mid)?;
        if (t - target).abs() <= opts.tolerance {
            return Ok(fit(mid, t, k + 3));
        }
        if t < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Precondition(format!(
        "bisection did not reach {target} s within {} iterations (bracket [{lo}, {hi}] N)",
        opts.max_iterations
    )))
}

#[derive(Serialize, Deserialize)]
struct FitFile {
    schema: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fit: Vec<FitRecord>,
}

/// Calibration file text: the schema key followed by one `[[fit]]` block per fit.
/// The result is itself a valid scenario file.
pub fn fit_report(fits: &[FitRecord]) -> String {
    toml::to_string(&FitFile {
        schema: SCHEMA_VERSION,
        fit: fits.to_vec(),
    })
    .expect("fit records are representable as TOML")
}

pub fn write_fit_report(path: impl AsRef<Path>, fits: &[FitRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, fit_report(fits)).map_err(|e| Error::io(path, e))
}

pub fn load_fits(path: impl AsRef<Path>) -> Result<Vec<FitRecord>> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FitFile = toml::from_str(&src).map_err(|e| Error::Config {
        line: e.span().map(|s| src[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    if file.schema != SCHEMA_VERSION {
        return Err(Error::Config {
            line: None,
            message: format!("unsupported schema {}", file.schema),
        });
    }
    Ok(file.fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DEFAULT_SURGE_DRAG;

    #[test]
    fn closed_form_drag() {
        assert_eq!(fit_drag(1.0, 1.0).unwrap(), 1.0);
        assert!((fit_drag(2.0, 0.135).unwrap() - 109.739_369).abs() < 1e-6);
        assert_eq!(fit_drag(2.0, 0.135).unwrap(), DEFAULT_SURGE_DRAG);
        assert!(fit_drag(0.0, 0.1).is_err());
        assert!(fit_drag(1.0, -0.1).is_err());
        assert!(fit_drag(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn drag_fit_is_a_simulation_fixed_point() {
        let rec = fit_drag_record(&ScenarioConfig::default(), 0.135).unwrap();
        assert!(rec.residual <= 1e-3, "{rec:?}");
        let rec = fit_drag_record(&ScenarioConfig::default(), 0.3).unwrap();
        assert!(rec.residual <= 1e-3, "{rec:?}");
    }

    #[test]
    fn target_below_still_time_is_a_precondition_error() {
        let err = fit_wave(20.0, &ScenarioConfig::default(), &WaveConfig::default(), &WaveFitOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn still_time_target_gives_zero_amplitude() {
        let cfg = ScenarioConfig::default();
        let still = completion_time(&cfg).unwrap();
        let fit = fit_wave(still, &cfg, &WaveConfig::default(), &WaveFitOptions::default()).unwrap();
        assert_eq!(fit.amplitude, 0.0);
    }

    #[test]
    fn unreachable_target_reports_range() {
        let opts = WaveFitOptions {
            amplitude_high: 0.5,
            ..WaveFitOptions::default()
        };
        match fit_wave(100.0, &ScenarioConfig::default(), &WaveConfig::default(), &opts) {
            Err(Error::NoBracket { low, high, .. }) => assert!(low < high && high < 100.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_round_trip() {
        assert_eq!(fit_report(&[]), "schema = 1\n");
        let rec = FitRecord {
            parameter: PARAM_SURGE_DRAG.into(),
            value: 2.0 / 0.135f64.powi(2),
            target_metric: "terminal_velocity_m_s".into(),
            target: 0.135,
            achieved: 0.134_999_9,
            residual: 1.0e-7,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.toml");
        write_fit_report(&path, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(load_fits(&path).unwrap(), vec![rec.clone()]);
        let cfg = ScenarioConfig::load(&path).unwrap();
        assert_eq!(cfg.dynamics.drag, DragModel::from_surge_coefficient(rec.value));
    }

    #[test]
    fn unknown_fit_parameter_rejected() {
        let src = "schema = 1\n[[fit]]\nparameter = \"mass\"\nvalue = 1.0\ntarget_metric = \"x\"\ntarget = 0.0\nachieved = 0.0\nresidual = 0.0\n";
        assert!(ScenarioConfig::from_toml_str(src).is_err());
    }
}
