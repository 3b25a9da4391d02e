//! Drives a [`Controller`] against a [`Hal`] backend, one tick at a time,
//! and records telemetry along the way.

use std::collections::BTreeMap;

use super::{ControlConfig, ControlError, Controller, EventKind, EventLog, Fault, Outcome};
use crate::hal::{Hal, HalError, ValveCommand};
use crate::plant::{ModuleKind, Plant, PlantEvent, StationLayout};
use crate::telemetry::{TelemetryError, TelemetrySample, TelemetrySink};

const SPAN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub dt: f64,
    pub duration_s: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { dt: 0.001, duration_s: 300.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outcome: Outcome,
    pub log: EventLog,
    pub cycles: u32,
    /// Final active level.
    pub level: usize,
    /// Detection results with `contact = true`.
    pub detections: usize,
    pub drops: usize,
    pub conflicts: usize,
    pub faults: Vec<Fault>,
    pub initial_object_z: Option<f64>,
    pub final_object_z: Option<f64>,
    pub sim_time: f64,
}

impl RunReport {
    pub fn is_nominal(&self) -> bool {
        self.faults.is_empty() && self.outcome.is_nominal()
    }
}

/// Ground-truth end conditions, checked between cycles on simulated runs.
pub fn travel_outcome(plant: &Plant, controller: &Controller) -> Option<Outcome> {
    let state = plant.state();
    let object = state.object.as_ref()?;
    let layout = plant.layout();
    let station_top = layout
        .modules()
        .iter()
        .zip(&state.z_origins)
        .map(|(m, z)| z + m.height)
        .fold(f64::NEG_INFINITY, f64::max);
    if object.top() > station_top + SPAN_EPS {
        return Some(Outcome::Exited);
    }
    let (bottom, middle, _) = controller.unit();
    let bottom_top = state.z_origins[bottom as usize - 1] + layout.module(bottom)?.height;
    let next_z = object.z + plant.max_inflation(middle)?;
    if next_z >= bottom_top - SPAN_EPS {
        return Some(match controller.upper_probe() {
            Some(_) => Outcome::Undetectable { level: controller.level() },
            None => Outcome::EndOfTravel,
        });
    }
    None
}

/// A controller bound to a backend and an optional telemetry sink.
pub struct Session<'a, H: Hal> {
    hal: &'a mut H,
    controller: Controller,
    dt: f64,
    kinds: Vec<ModuleKind>,
    sink: Option<&'a mut dyn TelemetrySink>,
    flushed: usize,
    drops: usize,
    conflicts: usize,
}

impl<'a, H: Hal> Session<'a, H> {
    pub fn new(hal: &'a mut H, layout: &StationLayout, cfg: ControlConfig, dt: f64) -> Result<Self, ControlError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(HalError::InvalidTick(dt).into());
        }
        let controller = Controller::new(layout, cfg)?;
        Ok(Self {
            hal,
            controller,
            dt,
            kinds: layout.modules().iter().map(|m| m.kind).collect(),
            sink: None,
            flushed: 0,
            drops: 0,
            conflicts: 0,
        })
    }

    pub fn with_sink(mut self, sink: &'a mut dyn TelemetrySink) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn hal(&self) -> &H {
        self.hal
    }

    pub fn into_controller(self) -> Controller {
        self.controller
    }

    fn object_z(&self) -> Option<f64> {
        self.hal.ground_truth().and_then(|p| p.state().object.as_ref().map(|o| o.z))
    }

    fn kind_of(&self, id: u32) -> Option<ModuleKind> {
        id.checked_sub(1).and_then(|i| self.kinds.get(i as usize).copied())
    }

    fn telemetry(err: TelemetryError) -> ControlError {
        ControlError::Fault(Fault::Backend(format!("telemetry: {err}")))
    }

    /// Writes every log entry not yet written as an event row.
    fn flush_events(&mut self) -> Result<(), ControlError> {
        let Some(sink) = self.sink.as_deref_mut() else {
            self.flushed = self.controller.log().len();
            return Ok(());
        };
        let object_z = self.hal.ground_truth().and_then(|p| p.state().object.as_ref().map(|o| o.z));
        for event in &self.controller.log().events()[self.flushed..] {
            let module_id = event.kind.module_id();
            let valve = match &event.kind {
                EventKind::Command(cmd) => Some(cmd.mode),
                _ => None,
            };
            let row = TelemetrySample {
                time: event.time,
                module_id,
                kind: module_id.checked_sub(1).and_then(|i| self.kinds.get(i as usize).copied()),
                pressure: None,
                valve,
                inflation: None,
                object_z,
                phase: self.controller.phase(event.time).to_string(),
                event: event.kind.to_string(),
            };
            sink.record(row).map_err(Self::telemetry)?;
        }
        self.flushed = self.controller.log().len();
        Ok(())
    }

    fn send(&mut self, cmds: Vec<ValveCommand>) {
        for cmd in cmds {
            if let Err(err) = self.hal.set_valve(cmd) {
                self.controller.fail(cmd.timestamp, Fault::Backend(err.to_string()));
                return;
            }
        }
    }

    /// Reads every sensor, records the samples, runs one controller update
    /// and applies its commands.
    fn observe(&mut self) -> Result<(), ControlError> {
        let now = self.hal.now();
        let mut readings = BTreeMap::new();
        for id in 1..=self.kinds.len() as u32 {
            let sample = self.hal.read_pressure(id)?;
            readings.insert(id, sample.pressure);
        }
        if self.sink.is_some() {
            let phase = self.controller.phase(now).to_string();
            let object_z = self.object_z();
            let rows: Vec<TelemetrySample> = readings
                .iter()
                .map(|(&id, &pressure)| {
                    let chamber = self.hal.ground_truth().and_then(|p| p.state().chamber(id).copied());
                    TelemetrySample {
                        time: now,
                        module_id: id,
                        kind: self.kind_of(id),
                        pressure: Some(pressure),
                        valve: chamber.map(|c| c.valve).or_else(|| self.controller.commanded(id)),
                        inflation: chamber.map(|c| c.inflation),
                        object_z,
                        phase: phase.clone(),
                        event: String::new(),
                    }
                })
                .collect();
            if let Some(sink) = self.sink.as_deref_mut() {
                for row in rows {
                    sink.record(row).map_err(Self::telemetry)?;
                }
            }
        }

        let cmds = self.controller.update(now, &readings);
        self.send(cmds);

        for event in self.hal.take_plant_events() {
            match event {
                PlantEvent::Conflict { time, supporters, followed } => {
                    self.conflicts += 1;
                    self.controller.record(time, EventKind::Conflict { supporters, followed });
                }
                PlantEvent::Drop { time, from_z, to_z } => {
                    self.drops += 1;
                    self.controller.record(time, EventKind::Drop { from_z, to_z });
                    let phase = self.controller.phase(now);
                    self.controller.fail(now, Fault::ObjectLost { phase });
                }
            }
        }
        self.flush_events()
    }

    fn fault_error(&self) -> ControlError {
        let fault = self.controller.fault().cloned().unwrap_or(Fault::Backend("unknown fault".into()));
        ControlError::Fault(fault)
    }

    fn run_until_holding(&mut self) -> Result<(), ControlError> {
        loop {
            self.hal.tick(self.dt)?;
            self.observe()?;
            if self.controller.fault().is_some() {
                return Err(self.fault_error());
            }
            if self.controller.is_holding() {
                return Ok(());
            }
        }
    }

    /// Grasps with the unit at `level` and waits until both rings are inflated.
    pub fn grasp(&mut self, level: usize) -> Result<(), ControlError> {
        let now = self.hal.now();
        let cmds = self.controller.begin_grasp(now, level)?;
        if self.controller.is_holding() {
            return Ok(());
        }
        self.send(cmds);
        self.flush_events()?;
        self.observe()?;
        if self.controller.fault().is_some() {
            return Err(self.fault_error());
        }
        if self.controller.is_holding() {
            return Ok(());
        }
        self.run_until_holding()
    }

    /// Runs one full transport cycle from the grasped state.
    pub fn transport_cycle(&mut self) -> Result<(), ControlError> {
        let cmds = self.controller.start_cycle(self.hal.now())?;
        self.send(cmds);
        self.flush_events()?;
        self.run_until_holding()
    }
}

/// Runs the station until the object leaves, travel is exhausted, a cycle or
/// time limit is hit, or a fault occurs.
pub fn run_station<H: Hal>(
    hal: &mut H,
    layout: &StationLayout,
    cfg: ControlConfig,
    settings: RunSettings,
    sink: Option<&mut dyn TelemetrySink>,
) -> Result<RunReport, ControlError> {
    for id in layout.compression_ids() {
        if !cfg.detection.baseline_rates.contains_key(&id) {
            return Err(ControlError::MissingBaseline(id));
        }
    }
    let max_cycles = cfg.max_cycles;
    let mut session = Session::new(hal, layout, cfg, settings.dt)?;
    if let Some(sink) = sink {
        session = session.with_sink(sink);
    }
    let start = session.hal.now();
    let initial_object_z = session.object_z();

    session.controller.log_calibrations(start);
    let cmds = session.controller.begin_grasp(start, 0)?;
    session.send(cmds);
    session.flush_events()?;

    let outcome = loop {
        match session.observe() {
            Ok(()) => {}
            Err(ControlError::Hal(HalError::EndOfRecording { .. })) => break Outcome::EndOfRecording,
            Err(err) => return Err(err),
        }
        if session.controller.fault().is_some() {
            break Outcome::Faulted;
        }
        if session.hal.at_end() {
            break Outcome::EndOfRecording;
        }
        let now = session.hal.now();
        if session.controller.is_holding() {
            let travel = session.hal.ground_truth().and_then(|p| travel_outcome(p, &session.controller));
            if let Some(outcome) = travel {
                break outcome;
            }
            if max_cycles.is_some_and(|m| session.controller.cycles() >= m) {
                break Outcome::CycleLimit;
            }
            let cmds = session.controller.start_cycle(now)?;
            session.send(cmds);
            session.flush_events()?;
            if session.controller.fault().is_some() {
                break Outcome::Faulted;
            }
        }
        if now + settings.dt - start > settings.duration_s + SPAN_EPS {
            break Outcome::DurationElapsed;
        }
        session.hal.tick(settings.dt)?;
    };

    let now = session.hal.now();
    session.controller.record(now, EventKind::Finished(outcome.clone()));
    session.flush_events()?;

    let final_object_z = session.object_z();
    let (drops, conflicts, sim_time) = (session.drops, session.conflicts, now - start);
    let controller = session.into_controller();
    let faults = controller
        .log()
        .events()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Fault(f) => Some(f.clone()),
            _ => None,
        })
        .collect();
    let detections = controller.log().detections().filter(|d| d.contact).count();
    Ok(RunReport {
        outcome,
        cycles: controller.cycles(),
        level: controller.level(),
        detections,
        drops,
        conflicts,
        faults,
        initial_object_z,
        final_object_z,
        sim_time,
        log: controller.into_log(),
    })
}
