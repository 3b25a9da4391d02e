//! Closed-loop controller: grasp/transport sequencing, baseline calibration,
//! pressure-rate contact detection and multi-level handoff.

mod detection;
mod sequencer;
mod station;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::format6;
use crate::hal::{HalError, ValveCommand};

pub use detection::{
    calibrate_baseline, detect_contact, least_squares_slope, window_slope, CalibrationSettings, DetectionConfig,
    DetectionResult, PressureTrace,
};
pub use sequencer::{ControlPhase, Controller, Phase, Stage};
pub use station::{run_station, RunReport, RunSettings, Session, travel_outcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Hal(#[from] HalError),
    #[error("calibration contaminated on module {module_id}: slope {slope:.4} kPa/s exceeds {limit:.4} kPa/s")]
    CalibrationContaminated { module_id: u32, slope: f64, limit: f64 },
    #[error("calibration of module {module_id} timed out while venting")]
    CalibrationTimeout { module_id: u32 },
    #[error("insufficient trace for module {module_id}: window [{window_start:.6}, {window_end:.6}] s not covered")]
    InsufficientTrace { module_id: u32, window_start: f64, window_end: f64 },
    #[error("no baseline rate for module {0}")]
    MissingBaseline(u32),
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Fault(Fault),
}

/// Thresholds and limits for the sequencer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub p_max_kpa: f64,
    /// A chamber counts as inflated at this fraction of `p_max_kpa`.
    pub inflated_fraction: f64,
    /// A chamber counts as deflated at or below this pressure.
    pub deflated_kpa: f64,
    /// Limit for every sub-phase.
    pub phase_timeout_s: f64,
    /// Cycles at one level without promotion before giving up.
    pub max_cycles_without_detection: u32,
    /// Stop after this many completed transport cycles.
    pub max_cycles: Option<u32>,
    /// Expected free inflation rate, used to spot contaminated calibrations.
    pub nominal_rate: f64,
    #[serde(skip)]
    pub detection: DetectionConfig,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            p_max_kpa: 15.0,
            inflated_fraction: 0.95,
            deflated_kpa: 0.5,
            phase_timeout_s: 10.0,
            max_cycles_without_detection: 20,
            max_cycles: None,
            nominal_rate: 4.33,
            detection: DetectionConfig::default(),
        }
    }
}

impl ControlConfig {
    pub fn inflated_kpa(&self) -> f64 {
        self.inflated_fraction * self.p_max_kpa
    }

    pub fn check(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::Config(m.to_string()));
        if !(self.p_max_kpa > 0.0) {
            return bad("p_max_kpa must be positive");
        }
        if !(self.inflated_fraction > 0.0 && self.inflated_fraction <= 1.0) {
            return bad("inflated_fraction must lie in (0, 1]");
        }
        if !(self.deflated_kpa >= 0.0 && self.deflated_kpa < self.inflated_kpa()) {
            return bad("deflated_kpa must be non-negative and below the inflated threshold");
        }
        if !(self.phase_timeout_s > 0.0) {
            return bad("phase_timeout_s must be positive");
        }
        if self.max_cycles_without_detection == 0 {
            return bad("max_cycles_without_detection must be at least 1");
        }
        if !(self.nominal_rate > 0.0) {
            return bad("nominal_rate must be positive");
        }
        self.detection.check().map_err(ControlError::Config)
    }

    pub fn calibration_settings(&self, dt: f64) -> CalibrationSettings {
        CalibrationSettings {
            detection: self.detection.clone(),
            nominal_rate: self.nominal_rate,
            deflated_kpa: self.deflated_kpa,
            timeout_s: self.phase_timeout_s,
            dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    /// A sub-phase gate was not met in time; `module_id` is the first
    /// chamber that missed its threshold.
    Timeout { module_id: u32, phase: ControlPhase },
    ObjectLost { phase: ControlPhase },
    NeverDetected { level: usize, cycles: u32 },
    Detection(String),
    Backend(String),
}

impl Fault {
    pub fn module_id(&self) -> Option<u32> {
        match self {
            Self::Timeout { module_id, .. } => Some(*module_id),
            _ => None,
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Timeout { module_id, phase } => write!(f, "timeout in {phase}: module {module_id} stalled"),
            Self::ObjectLost { phase } => write!(f, "object lost at phase {phase}"),
            Self::NeverDetected { level, cycles } => {
                write!(f, "object never detected at level {level} after {cycles} cycles")
            }
            Self::Detection(msg) => write!(f, "detection failed: {msg}"),
            Self::Backend(msg) => write!(f, "backend failure: {msg}"),
        }
    }
}

/// How a station run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// The object's top cleared the topmost module.
    Exited,
    /// The top working unit cannot advance the object any further.
    EndOfTravel,
    /// The active unit ran out of travel and the object was never detected
    /// by the level above.
    Undetectable { level: usize },
    CycleLimit,
    DurationElapsed,
    EndOfRecording,
    Faulted,
}

impl Outcome {
    pub fn is_nominal(&self) -> bool {
        !matches!(self, Self::Faulted)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exited => f.write_str("exited"),
            Self::EndOfTravel => f.write_str("end of travel"),
            Self::Undetectable { level } => write!(f, "undetectable object (level {level})"),
            Self::CycleLimit => f.write_str("cycle limit"),
            Self::DurationElapsed => f.write_str("duration elapsed"),
            Self::EndOfRecording => f.write_str("end of recording"),
            Self::Faulted => f.write_str("faulted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Calibrated { module_id: u32, rate: f64 },
    Command(ValveCommand),
    Grasped { level: usize },
    Detection(DetectionResult),
    Promoted { level: usize },
    CycleComplete { level: usize, cycle: u32 },
    Conflict { supporters: Vec<u32>, followed: u32 },
    Drop { from_z: f64, to_z: f64 },
    Fault(Fault),
    Finished(Outcome),
}

impl EventKind {
    /// Module the event concerns, 0 for station-wide events.
    pub fn module_id(&self) -> u32 {
        match self {
            Self::Calibrated { module_id, .. } => *module_id,
            Self::Command(cmd) => cmd.module_id,
            Self::Detection(r) => r.module_id,
            Self::Fault(f) => f.module_id().unwrap_or(0),
            _ => 0,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Calibrated { rate, .. } => write!(f, "calibrated rate={}", format6(*rate)),
            Self::Command(cmd) => write!(f, "command {}", cmd.mode),
            Self::Grasped { level } => write!(f, "grasped level={level}"),
            Self::Detection(r) => write!(
                f,
                "detection contact={} ratio={} measured={} baseline={}",
                r.contact,
                format6(r.ratio),
                format6(r.measured_rate),
                format6(r.baseline)
            ),
            Self::Promoted { level } => write!(f, "promoted level={level}"),
            Self::CycleComplete { level, cycle } => write!(f, "cycle level={level} count={cycle}"),
            Self::Conflict { supporters, followed } => {
                let ids: Vec<String> = supporters.iter().map(u32::to_string).collect();
                write!(f, "conflict supporters={} followed={followed}", ids.join("|"))
            }
            Self::Drop { from_z, to_z } => write!(f, "drop from={} to={}", format6(*from_z), format6(*to_z)),
            Self::Fault(fault) => write!(f, "fault {fault}"),
            Self::Finished(outcome) => write!(f, "finished {outcome}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// Append-only, totally ordered record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn commands(&self) -> impl Iterator<Item = &ValveCommand> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Command(cmd) => Some(cmd),
            _ => None,
        })
    }

    pub fn detections(&self) -> impl Iterator<Item = &DetectionResult> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Detection(r) => Some(r),
            _ => None,
        })
    }

    /// Index of the first event matching `pred`.
    pub fn position(&self, pred: impl Fn(&EventKind) -> bool) -> Option<usize> {
        self.events.iter().position(|e| pred(&e.kind))
    }
}
