//! Grasp/transport state machine.
//!
//! The active working unit at level `k` is the triple
//! `(C-(2k+1), L-(2k+2), C-(2k+3))`. One transport cycle runs
//!
//! | phase          | first step                 | second step                 |
//! |----------------|----------------------------|-----------------------------|
//! | AdvanceRelease | vent bottom                | extend middle               |
//! | RegraspBottom  | inflate bottom             | vent top                    |
//! | ResetTop       | retract middle             | re-inflate top (+ probe)    |
//!
//! Every step waits for its pressure gate before the next one starts, so
//! the object is always gripped by at least one ring. While the top ring
//! re-inflates, the compression ring one level up is inflated as a probe and
//! its pressure slope decides whether the object has reached that level.

use std::collections::BTreeMap;
use std::fmt;

use super::{detect_contact, ControlConfig, ControlError, DetectionResult, Event, EventKind, EventLog, Fault, PressureTrace};
use crate::hal::ValveCommand;
use crate::plant::{ModuleKind, StationLayout, ValveMode};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Grasp,
    AdvanceRelease,
    RegraspBottom,
    ResetTop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPhase {
    pub level: usize,
    pub phase: Phase,
    pub phase_elapsed: f64,
}

impl fmt::Display for ControlPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:?}", self.level, self.phase)
    }
}

/// Fine-grained controller state; each cycle phase has two gated steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Idle,
    Grasp,
    /// Grasped and waiting for the next cycle.
    Holding,
    ReleaseBottom,
    Extend,
    RegraspBottom,
    ReleaseTop,
    Retract,
    ReinflateTop,
    Faulted,
}

impl Stage {
    pub fn phase(self) -> Phase {
        match self {
            Self::Idle | Self::Grasp | Self::Holding | Self::Faulted => Phase::Grasp,
            Self::ReleaseBottom | Self::Extend => Phase::AdvanceRelease,
            Self::RegraspBottom | Self::ReleaseTop => Phase::RegraspBottom,
            Self::Retract | Self::ReinflateTop => Phase::ResetTop,
        }
    }
}

#[derive(Debug, Clone)]
struct Probe {
    trace: PressureTrace,
    result: Option<DetectionResult>,
}

#[derive(Debug, Clone, Copy)]
enum Gate {
    Inflated(u32),
    Deflated(u32),
    ProbeDone(u32),
}

#[derive(Debug, Clone)]
pub struct Controller {
    kinds: Vec<ModuleKind>,
    cfg: ControlConfig,
    level: usize,
    stage: Stage,
    stage_entered: f64,
    commanded: BTreeMap<u32, ValveMode>,
    probe: Option<Probe>,
    positives: u32,
    promote: bool,
    draining: Vec<u32>,
    cycles: u32,
    cycles_at_level: u32,
    log: EventLog,
    fault: Option<Fault>,
}

impl Controller {
    pub fn new(layout: &StationLayout, cfg: ControlConfig) -> Result<Self, ControlError> {
        cfg.check()?;
        if !layout.violations().is_empty() || layout.level_count() == 0 {
            return Err(ControlError::Config("station needs at least one C-L-C working unit".into()));
        }
        Ok(Self {
            kinds: layout.modules().iter().map(|m| m.kind).collect(),
            cfg,
            level: 0,
            stage: Stage::Idle,
            stage_entered: 0.0,
            commanded: BTreeMap::new(),
            probe: None,
            positives: 0,
            promote: false,
            draining: Vec::new(),
            cycles: 0,
            cycles_at_level: 0,
            log: EventLog::default(),
            fault: None,
        })
    }

    pub fn config(&self) -> &ControlConfig {
        &self.cfg
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn phase(&self, now: f64) -> ControlPhase {
        ControlPhase { level: self.level, phase: self.stage.phase(), phase_elapsed: now - self.stage_entered }
    }

    pub fn is_holding(&self) -> bool {
        self.stage == Stage::Holding
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    /// Completed transport cycles over all levels.
    pub fn cycles(&self) -> u32 {
        self.cycles
    }

    pub fn commanded(&self, module_id: u32) -> Option<ValveMode> {
        self.commanded.get(&module_id).copied()
    }

    /// `(bottom, middle, top)` module ids of the active working unit.
    pub fn unit(&self) -> (u32, u32, u32) {
        let bottom = 2 * self.level as u32 + 1;
        (bottom, bottom + 1, bottom + 2)
    }

    /// Compression module of the next level up, if the stack has one.
    pub fn upper_probe(&self) -> Option<u32> {
        let (_, _, top) = self.unit();
        let probe = top + 2;
        (probe as usize <= self.kinds.len()).then_some(probe)
    }

    /// Appends an externally observed event, such as a plant anomaly.
    pub fn record(&mut self, time: f64, kind: EventKind) {
        self.log.push(Event { time, kind });
    }

    /// Logs the baselines the detector will use.
    pub fn log_calibrations(&mut self, time: f64) {
        let rates: Vec<(u32, f64)> = self.cfg.detection.baseline_rates.iter().map(|(&k, &v)| (k, v)).collect();
        for (module_id, rate) in rates {
            self.record(time, EventKind::Calibrated { module_id, rate });
        }
    }

    pub fn fail(&mut self, time: f64, fault: Fault) {
        if self.fault.is_none() {
            self.record(time, EventKind::Fault(fault.clone()));
            self.fault = Some(fault);
        }
        self.stage = Stage::Faulted;
    }

    fn command(&mut self, time: f64, module_id: u32, mode: ValveMode, out: &mut Vec<ValveCommand>) {
        if self.commanded.get(&module_id) == Some(&mode) {
            return;
        }
        self.commanded.insert(module_id, mode);
        let cmd = ValveCommand { module_id, mode, timestamp: time };
        self.record(time, EventKind::Command(cmd));
        out.push(cmd);
    }

    fn enter(&mut self, time: f64, stage: Stage) {
        self.stage = stage;
        self.stage_entered = time;
    }

    fn start_probe(&mut self, time: f64, out: &mut Vec<ValveCommand>) {
        if let Some(id) = self.upper_probe() {
            self.command(time, id, ValveMode::Inflate, out);
            self.probe = Some(Probe { trace: PressureTrace::new(id, time), result: None });
        }
    }

    /// Inflates both compression rings of the unit at `level`. From the
    /// holding state at the same level this is a no-op.
    pub fn begin_grasp(&mut self, time: f64, level: usize) -> Result<Vec<ValveCommand>, ControlError> {
        let mut out = Vec::new();
        if self.stage == Stage::Holding && level == self.level {
            return Ok(out);
        }
        if self.stage != Stage::Idle {
            return Err(ControlError::Config(format!("cannot grasp from stage {:?}", self.stage)));
        }
        if level >= self.kinds.len().saturating_sub(1) / 2 {
            return Err(ControlError::Config(format!("level {level} does not exist")));
        }
        self.level = level;
        let (bottom, _, top) = self.unit();
        self.command(time, bottom, ValveMode::Inflate, &mut out);
        self.command(time, top, ValveMode::Inflate, &mut out);
        self.start_probe(time, &mut out);
        self.enter(time, Stage::Grasp);
        Ok(out)
    }

    /// Starts one transport cycle from the holding state.
    pub fn start_cycle(&mut self, time: f64) -> Result<Vec<ValveCommand>, ControlError> {
        if self.stage != Stage::Holding {
            return Err(ControlError::Config(format!("cannot start a cycle from stage {:?}", self.stage)));
        }
        let mut out = Vec::new();
        let (bottom, _, _) = self.unit();
        self.command(time, bottom, ValveMode::Deflate, &mut out);
        self.enter(time, Stage::ReleaseBottom);
        Ok(out)
    }

    fn gates(&self) -> Vec<Gate> {
        let (bottom, middle, top) = self.unit();
        let probe = self.probe.as_ref().map(|p| Gate::ProbeDone(p.trace.module_id));
        match self.stage {
            Stage::Grasp => {
                let mut gates = vec![Gate::Inflated(bottom), Gate::Inflated(top)];
                gates.extend(self.draining.iter().map(|&id| Gate::Deflated(id)));
                gates.extend(probe);
                gates
            }
            Stage::ReleaseBottom => vec![Gate::Deflated(bottom)],
            Stage::Extend => vec![Gate::Inflated(middle)],
            Stage::RegraspBottom => vec![Gate::Inflated(bottom)],
            Stage::ReleaseTop => vec![Gate::Deflated(top)],
            Stage::Retract => vec![Gate::Deflated(middle)],
            Stage::ReinflateTop => {
                let mut gates = vec![Gate::Inflated(top)];
                gates.extend(probe);
                gates
            }
            Stage::Idle | Stage::Holding | Stage::Faulted => Vec::new(),
        }
    }

    fn gate_met(&self, gate: Gate, readings: &BTreeMap<u32, f64>) -> bool {
        let pressure = |id: u32| readings.get(&id).copied().unwrap_or(f64::NAN);
        match gate {
            Gate::Inflated(id) => pressure(id) >= self.cfg.inflated_kpa(),
            Gate::Deflated(id) => pressure(id) <= self.cfg.deflated_kpa,
            Gate::ProbeDone(id) => match &self.probe {
                Some(p) if p.result.is_some() => self.promote || pressure(id) <= self.cfg.deflated_kpa,
                Some(_) => false,
                None => true,
            },
        }
    }

    fn gate_module(gate: Gate) -> u32 {
        match gate {
            Gate::Inflated(id) | Gate::Deflated(id) | Gate::ProbeDone(id) => id,
        }
    }

    fn sample_probe(&mut self, time: f64, readings: &BTreeMap<u32, f64>, out: &mut Vec<ValveCommand>) {
        let Some(probe) = self.probe.as_mut() else { return };
        if probe.result.is_some() {
            return;
        }
        let id = probe.trace.module_id;
        if let Some(&p) = readings.get(&id) {
            probe.trace.push(time, p);
        }
        if time + TIME_EPS < probe.trace.onset + self.cfg.detection.window_end_s() {
            return;
        }
        match detect_contact(&probe.trace, &self.cfg.detection) {
            Ok(result) => {
                probe.result = Some(result);
                self.record(time, EventKind::Detection(result));
                self.positives = if result.contact { self.positives + 1 } else { 0 };
                if self.positives >= self.cfg.detection.consecutive_required {
                    self.promote = true;
                } else {
                    self.command(time, id, ValveMode::Deflate, out);
                }
            }
            Err(err) => self.fail(time, Fault::Detection(err.to_string())),
        }
    }

    /// One control tick: consumes the latest pressure readings and returns
    /// the valve commands to issue now.
    pub fn update(&mut self, time: f64, readings: &BTreeMap<u32, f64>) -> Vec<ValveCommand> {
        let mut out = Vec::new();
        if matches!(self.stage, Stage::Idle | Stage::Holding | Stage::Faulted) {
            return out;
        }
        self.sample_probe(time, readings, &mut out);
        if self.stage == Stage::Faulted {
            return out;
        }

        let gates = self.gates();
        if let Some(&stalled) = gates.iter().find(|&&g| !self.gate_met(g, readings)) {
            if time - self.stage_entered >= self.cfg.phase_timeout_s - TIME_EPS {
                let fault = Fault::Timeout { module_id: Self::gate_module(stalled), phase: self.phase(time) };
                self.fail(time, fault);
            }
            return out;
        }

        let (bottom, middle, top) = self.unit();
        match self.stage {
            Stage::Grasp => {
                self.draining.clear();
                self.probe = None;
                self.record(time, EventKind::Grasped { level: self.level });
                self.enter(time, Stage::Holding);
            }
            Stage::ReleaseBottom => {
                self.command(time, middle, ValveMode::Inflate, &mut out);
                self.enter(time, Stage::Extend);
            }
            Stage::Extend => {
                self.command(time, bottom, ValveMode::Inflate, &mut out);
                self.enter(time, Stage::RegraspBottom);
            }
            Stage::RegraspBottom => {
                self.command(time, top, ValveMode::Deflate, &mut out);
                self.enter(time, Stage::ReleaseTop);
            }
            Stage::ReleaseTop => {
                self.command(time, middle, ValveMode::Deflate, &mut out);
                self.enter(time, Stage::Retract);
            }
            Stage::Retract => {
                self.command(time, top, ValveMode::Inflate, &mut out);
                self.start_probe(time, &mut out);
                self.enter(time, Stage::ReinflateTop);
            }
            Stage::ReinflateTop => self.finish_cycle(time, &mut out),
            Stage::Idle | Stage::Holding | Stage::Faulted => {}
        }
        out
    }

    fn finish_cycle(&mut self, time: f64, out: &mut Vec<ValveCommand>) {
        self.cycles += 1;
        self.cycles_at_level += 1;
        self.probe = None;
        self.record(time, EventKind::CycleComplete { level: self.level, cycle: self.cycles });
        if self.promote {
            let (old_bottom, _, _) = self.unit();
            self.level += 1;
            self.promote = false;
            self.positives = 0;
            self.cycles_at_level = 0;
            self.record(time, EventKind::Promoted { level: self.level });
            self.command(time, old_bottom, ValveMode::Deflate, out);
            self.draining = vec![old_bottom];
        } else if self.upper_probe().is_some() && self.cycles_at_level >= self.cfg.max_cycles_without_detection {
            let fault = Fault::NeverDetected { level: self.level + 1, cycles: self.cycles_at_level };
            self.fail(time, fault);
            return;
        }
        self.enter(time, Stage::Grasp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RingGeometry;

    fn controller(count: usize) -> Controller {
        let layout = StationLayout::alternating(count, RingGeometry::reference(), 40.0, 20.0);
        let mut cfg = ControlConfig::default();
        for id in layout.compression_ids() {
            cfg.detection.baseline_rates.insert(id, 4.33);
        }
        Controller::new(&layout, cfg).unwrap()
    }

    fn readings(values: &[(u32, f64)]) -> BTreeMap<u32, f64> {
        values.iter().copied().collect()
    }

    #[test]
    fn grasp_inflates_bottom_and_top() {
        let mut c = controller(3);
        let cmds = c.begin_grasp(0.0, 0).unwrap();
        let ids: Vec<(u32, ValveMode)> = cmds.iter().map(|c| (c.module_id, c.mode)).collect();
        assert_eq!(ids, vec![(1, ValveMode::Inflate), (3, ValveMode::Inflate)]);
        assert!(c.update(0.5, &readings(&[(1, 14.3), (2, 0.0), (3, 14.0)])).is_empty());
        assert_eq!(c.stage(), Stage::Grasp);
        c.update(0.6, &readings(&[(1, 14.3), (2, 0.0), (3, 14.25)]));
        assert!(c.is_holding());
    }

    #[test]
    fn grasp_on_five_modules_adds_probe() {
        let mut c = controller(5);
        let cmds = c.begin_grasp(0.0, 0).unwrap();
        assert_eq!(cmds.iter().map(|c| c.module_id).collect::<Vec<_>>(), vec![1, 3, 5]);
    }

    #[test]
    fn regrasp_from_holding_is_a_no_op() {
        let mut c = controller(3);
        c.begin_grasp(0.0, 0).unwrap();
        c.update(1.0, &readings(&[(1, 15.0), (2, 0.0), (3, 15.0)]));
        assert!(c.is_holding());
        let before = c.log().len();
        assert!(c.begin_grasp(2.0, 0).unwrap().is_empty());
        assert_eq!(c.log().len(), before);
        assert!(c.is_holding());
    }

    #[test]
    fn cycle_steps_are_gated_in_order() {
        let mut c = controller(3);
        c.begin_grasp(0.0, 0).unwrap();
        c.update(0.1, &readings(&[(1, 15.0), (2, 0.0), (3, 15.0)]));
        let mut seq = Vec::new();
        seq.extend(c.start_cycle(0.2).unwrap());
        let steps: [&[(u32, f64)]; 6] = [
            &[(1, 0.4), (2, 0.0), (3, 15.0)],
            &[(1, 0.0), (2, 14.3), (3, 15.0)],
            &[(1, 14.3), (2, 15.0), (3, 15.0)],
            &[(1, 15.0), (2, 15.0), (3, 0.5)],
            &[(1, 15.0), (2, 0.2), (3, 0.0)],
            &[(1, 15.0), (2, 0.0), (3, 14.3)],
        ];
        for (k, r) in steps.iter().enumerate() {
            seq.extend(c.update(0.3 + k as f64 * 0.1, &readings(r)));
        }
        let got: Vec<(u32, ValveMode)> = seq.iter().map(|c| (c.module_id, c.mode)).collect();
        use ValveMode::*;
        assert_eq!(got, vec![(1, Deflate), (2, Inflate), (1, Inflate), (3, Deflate), (2, Deflate), (3, Inflate)]);
        assert_eq!(c.cycles(), 1);
        c.update(1.0, &readings(&[(1, 15.0), (2, 0.0), (3, 15.0)]));
        assert!(c.is_holding());
    }

    #[test]
    fn stalled_gate_times_out_naming_module() {
        let mut c = controller(3);
        c.begin_grasp(0.0, 0).unwrap();
        c.update(9.0, &readings(&[(1, 0.0), (2, 0.0), (3, 15.0)]));
        assert_eq!(c.stage(), Stage::Grasp);
        c.update(10.0, &readings(&[(1, 0.0), (2, 0.0), (3, 15.0)]));
        assert_eq!(c.stage(), Stage::Faulted);
        assert_eq!(c.fault().and_then(Fault::module_id), Some(1));
    }

    #[test]
    fn unknown_level_is_rejected() {
        let mut c = controller(3);
        assert!(c.begin_grasp(0.0, 1).is_err());
        assert!(c.start_cycle(0.0).is_err());
    }
}
