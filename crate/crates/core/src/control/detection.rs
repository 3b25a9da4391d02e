//! Pressure-rate contact detection and baseline calibration.
//!
//! A gripping ring inflates faster than a free one, so the slope of the
//! pressure trace over a fixed window after inflation onset, divided by the
//! no-object baseline, tells whether the ring closed on the payload.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ControlError, Event, EventKind, EventLog};
use crate::hal::{Hal, ValveCommand};
use crate::plant::ValveMode;

const TIME_EPS: f64 = 1e-9;
const MIN_WINDOW_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Seconds after inflation onset where the regression window opens.
    pub window_start_s: f64,
    pub window_len_s: f64,
    /// Contact is declared when measured / baseline reaches this ratio.
    pub threshold_ratio: f64,
    /// Samples at or above this pressure are excluded from the regression.
    pub saturation_kpa: f64,
    /// Positive probes in a row needed before a level is promoted.
    pub consecutive_required: u32,
    #[serde(skip)]
    pub baseline_rates: BTreeMap<u32, f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            window_start_s: 1.5,
            window_len_s: 1.0,
            threshold_ratio: 1.5,
            saturation_kpa: 0.97 * 15.0,
            consecutive_required: 2,
            baseline_rates: BTreeMap::new(),
        }
    }
}

impl DetectionConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.window_start_s >= 0.0) {
            return Err("window_start_s must be non-negative".into());
        }
        if !(self.window_len_s > 0.0) {
            return Err("window_len_s must be positive".into());
        }
        if !(self.threshold_ratio > 1.0) {
            return Err("threshold_ratio must exceed 1".into());
        }
        if !(self.saturation_kpa > 0.0) {
            return Err("saturation_kpa must be positive".into());
        }
        if self.consecutive_required == 0 {
            return Err("consecutive_required must be at least 1".into());
        }
        Ok(())
    }

    /// Window end relative to onset.
    pub fn window_end_s(&self) -> f64 {
        self.window_start_s + self.window_len_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub module_id: u32,
    pub measured_rate: f64,
    pub baseline: f64,
    pub ratio: f64,
    pub contact: bool,
}

/// Pressure samples of one module taken from an inflation onset.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureTrace {
    pub module_id: u32,
    pub onset: f64,
    /// `(time, pressure)` in time order.
    pub samples: Vec<(f64, f64)>,
}

impl PressureTrace {
    pub fn new(module_id: u32, onset: f64) -> Self {
        Self { module_id, onset, samples: Vec::new() }
    }

    pub fn push(&mut self, time: f64, pressure: f64) {
        self.samples.push((time, pressure));
    }
}

/// Ordinary least-squares slope of `y` over `x`; `None` for fewer than two
/// distinct abscissae.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), &(x, y)| {
        let dx = x - mean_x;
        (sxy + dx * (y - mean_y), sxx + dx * dx)
    });
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slope over the detection window, truncated at the first saturated sample.
pub fn window_slope(trace: &PressureTrace, cfg: &DetectionConfig) -> Result<f64, ControlError> {
    let start = trace.onset + cfg.window_start_s;
    let end = trace.onset + cfg.window_end_s();
    let insufficient = || ControlError::InsufficientTrace { module_id: trace.module_id, window_start: start, window_end: end };

    let (Some(first), Some(last)) = (trace.samples.first(), trace.samples.last()) else {
        return Err(insufficient());
    };
    if first.0 > start + TIME_EPS {
        return Err(insufficient());
    }
    let mut window = Vec::new();
    let mut saturated = false;
    for &(t, p) in trace.samples.iter().filter(|(t, _)| *t >= start - TIME_EPS && *t <= end + TIME_EPS) {
        if p >= cfg.saturation_kpa {
            saturated = true;
            break;
        }
        window.push((t, p));
    }
    if (!saturated && last.0 < end - TIME_EPS) || window.len() < MIN_WINDOW_SAMPLES {
        return Err(insufficient());
    }
    least_squares_slope(&window).ok_or_else(insufficient)
}

/// Compares the windowed slope of `trace` against the module's baseline.
pub fn detect_contact(trace: &PressureTrace, cfg: &DetectionConfig) -> Result<DetectionResult, ControlError> {
    let baseline = *cfg.baseline_rates.get(&trace.module_id).ok_or(ControlError::MissingBaseline(trace.module_id))?;
    let measured_rate = window_slope(trace, cfg)?;
    let ratio = measured_rate / baseline;
    Ok(DetectionResult { module_id: trace.module_id, measured_rate, baseline, ratio, contact: ratio >= cfg.threshold_ratio })
}

/// Settings for [`calibrate_baseline`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    pub detection: DetectionConfig,
    /// Expected free inflation rate; a slope above `threshold_ratio` times
    /// this means something was touching the ring.
    pub nominal_rate: f64,
    pub deflated_kpa: f64,
    pub timeout_s: f64,
    pub dt: f64,
}

fn command<H: Hal>(hal: &mut H, log: &mut EventLog, module_id: u32, mode: ValveMode) -> Result<(), ControlError> {
    let cmd = ValveCommand { module_id, mode, timestamp: hal.now() };
    hal.set_valve(cmd)?;
    log.push(Event { time: cmd.timestamp, kind: EventKind::Command(cmd) });
    Ok(())
}

fn vent<H: Hal>(hal: &mut H, log: &mut EventLog, module_id: u32, s: &CalibrationSettings) -> Result<(), ControlError> {
    if hal.read_pressure(module_id)?.pressure <= s.deflated_kpa {
        return Ok(());
    }
    command(hal, log, module_id, ValveMode::Deflate)?;
    let started = hal.now();
    while hal.read_pressure(module_id)?.pressure > s.deflated_kpa {
        if hal.now() - started >= s.timeout_s {
            return Err(ControlError::CalibrationTimeout { module_id });
        }
        hal.tick(s.dt)?;
    }
    Ok(())
}

/// Inflates an empty module from near zero, regresses the pressure over the
/// detection window and vents it again. Returns the baseline rate in kPa/s.
pub fn calibrate_baseline<H: Hal>(
    hal: &mut H,
    module_id: u32,
    settings: &CalibrationSettings,
    log: &mut EventLog,
) -> Result<f64, ControlError> {
    vent(hal, log, module_id, settings)?;
    let onset = hal.now();
    command(hal, log, module_id, ValveMode::Inflate)?;
    let end = onset + settings.detection.window_end_s();
    let mut trace = PressureTrace::new(module_id, onset);
    loop {
        let sample = hal.read_pressure(module_id)?;
        trace.push(sample.time, sample.pressure);
        if sample.time >= end - TIME_EPS {
            break;
        }
        hal.tick(settings.dt)?;
    }
    let slope = window_slope(&trace, &settings.detection)?;
    vent(hal, log, module_id, settings)?;
    let limit = settings.detection.threshold_ratio * settings.nominal_rate;
    if slope > limit {
        return Err(ControlError::CalibrationContaminated { module_id, slope, limit });
    }
    log.push(Event { time: hal.now(), kind: EventKind::Calibrated { module_id, rate: slope } });
    Ok(slope)
}
