//! Hardware abstraction between the controller and whatever plant sits
//! behind it.
//!
//! Two backends are provided: [`SimulatedBackend`] owns a [`Plant`] and a
//! seeded sensor model, [`ReplayBackend`] serves a previously recorded run
//! and checks that the controller issues the same commands again.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::fixed::quantize6;
use crate::plant::{Plant, PlantError, PlantEvent, ValveMode};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HalError {
    #[error("no such endpoint: module {0}")]
    NoSuchEndpoint(u32),
    #[error("end of recording at t = {time:.6} s")]
    EndOfRecording { time: f64 },
    #[error("command diverges from recording: expected {expected}, got {actual}")]
    CommandMismatch { expected: String, actual: ValveCommand },
    #[error("command for module {module_id} at t = {timestamp:.6} s precedes an earlier command at {previous:.6} s")]
    NonMonotonicCommand { module_id: u32, timestamp: f64, previous: f64 },
    #[error("tick length must be positive and finite, got {0}")]
    InvalidTick(f64),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Capability {
    ReadPressure,
    SetValve,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalEndpoint {
    pub module_id: u32,
    pub capabilities: BTreeSet<Capability>,
}

impl HalEndpoint {
    fn full(module_id: u32) -> Self {
        Self { module_id, capabilities: [Capability::ReadPressure, Capability::SetValve].into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValveCommand {
    pub module_id: u32,
    pub mode: ValveMode,
    pub timestamp: f64,
}

impl std::fmt::Display for ValveCommand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} -> module {} at {:.6} s", self.mode, self.module_id, self.timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureSample {
    pub module_id: u32,
    pub pressure: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ack {
    pub module_id: u32,
    pub mode: ValveMode,
    pub time: f64,
}

/// Contract every backend implements. Calls are made by a single owner.
pub trait Hal {
    fn endpoints(&self) -> Vec<HalEndpoint>;

    /// Current backend time in seconds.
    fn now(&self) -> f64;

    fn read_pressure(&mut self, module_id: u32) -> Result<PressureSample, HalError>;

    fn set_valve(&mut self, cmd: ValveCommand) -> Result<Ack, HalError>;

    /// Advances time by `dt` and returns the new time.
    fn tick(&mut self, dt: f64) -> Result<f64, HalError>;

    /// Plant ground truth, for backends that have one.
    fn ground_truth(&self) -> Option<&Plant> {
        None
    }

    /// Plant anomalies since the last call.
    fn take_plant_events(&mut self) -> Vec<PlantEvent> {
        Vec::new()
    }

    /// True once a finite backend has nothing left to deliver.
    fn at_end(&self) -> bool {
        false
    }
}

fn check_tick(dt: f64) -> Result<(), HalError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(HalError::InvalidTick(dt))
    }
}

pub struct SimulatedBackend {
    plant: Plant,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    stuck: BTreeSet<u32>,
    last_command: BTreeMap<u32, f64>,
    events: Vec<PlantEvent>,
    applied: usize,
}

impl SimulatedBackend {
    /// Sensor noise and seed come from the plant parameters.
    pub fn new(plant: Plant) -> Self {
        let params = *plant.params();
        let noise = (params.noise_sigma > 0.0).then(|| Normal::new(0.0, params.noise_sigma).expect("finite sigma"));
        Self {
            plant,
            noise,
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            stuck: BTreeSet::new(),
            last_command: BTreeMap::new(),
            events: Vec::new(),
            applied: 0,
        }
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn plant_mut(&mut self) -> &mut Plant {
        &mut self.plant
    }

    /// Fault injection: the valve ignores commands and stays at Hold.
    pub fn inject_stuck_valve(&mut self, module_id: u32) -> Result<(), HalError> {
        self.plant.set_valve(module_id, ValveMode::Hold)?;
        self.stuck.insert(module_id);
        Ok(())
    }

    /// Number of commands forwarded to the plant.
    pub fn applied_commands(&self) -> usize {
        self.applied
    }

    fn endpoint_exists(&self, module_id: u32) -> Result<(), HalError> {
        self.plant.layout().module(module_id).map(|_| ()).ok_or(HalError::NoSuchEndpoint(module_id))
    }
}

impl Hal for SimulatedBackend {
    fn endpoints(&self) -> Vec<HalEndpoint> {
        self.plant.layout().modules().iter().map(|m| HalEndpoint::full(m.id)).collect()
    }

    fn now(&self) -> f64 {
        self.plant.time()
    }

    fn read_pressure(&mut self, module_id: u32) -> Result<PressureSample, HalError> {
        self.endpoint_exists(module_id)?;
        let truth = self.plant.state().chambers[module_id as usize - 1].pressure;
        let noise = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
        Ok(PressureSample { module_id, pressure: quantize6(truth + noise), time: self.plant.time() })
    }

    fn set_valve(&mut self, cmd: ValveCommand) -> Result<Ack, HalError> {
        self.endpoint_exists(cmd.module_id)?;
        if let Some(&previous) = self.last_command.get(&cmd.module_id) {
            if cmd.timestamp < previous {
                return Err(HalError::NonMonotonicCommand {
                    module_id: cmd.module_id,
                    timestamp: cmd.timestamp,
                    previous,
                });
            }
        }
        self.last_command.insert(cmd.module_id, cmd.timestamp);
        if !self.stuck.contains(&cmd.module_id) {
            self.plant.set_valve(cmd.module_id, cmd.mode)?;
        }
        self.applied += 1;
        Ok(Ack { module_id: cmd.module_id, mode: cmd.mode, time: self.plant.time() })
    }

    fn tick(&mut self, dt: f64) -> Result<f64, HalError> {
        check_tick(dt)?;
        let events = self.plant.step(dt)?;
        self.events.extend(events);
        Ok(self.plant.time())
    }

    fn ground_truth(&self) -> Option<&Plant> {
        Some(&self.plant)
    }

    fn take_plant_events(&mut self) -> Vec<PlantEvent> {
        std::mem::take(&mut self.events)
    }
}

/// Pressure samples and valve commands captured from a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    pub samples: Vec<PressureSample>,
    pub commands: Vec<ValveCommand>,
}

pub struct ReplayBackend {
    /// Sample frames in time order; each maps module id to pressure.
    frames: Vec<(f64, BTreeMap<u32, f64>)>,
    endpoints: BTreeSet<u32>,
    commands: Vec<ValveCommand>,
    cursor: usize,
    clock: f64,
    mismatches: Vec<HalError>,
}

impl ReplayBackend {
    pub fn new(recording: Recording) -> Self {
        let mut frames: Vec<(f64, BTreeMap<u32, f64>)> = Vec::new();
        let mut samples = recording.samples;
        samples.sort_by(|a, b| a.time.total_cmp(&b.time));
        for s in samples {
            match frames.last_mut() {
                Some((t, frame)) if (*t - s.time).abs() <= TIME_EPS => {
                    frame.insert(s.module_id, s.pressure);
                }
                _ => frames.push((s.time, BTreeMap::from([(s.module_id, s.pressure)]))),
            }
        }
        let endpoints = frames.iter().flat_map(|(_, f)| f.keys().copied()).collect();
        let clock = frames.first().map_or(0.0, |(t, _)| *t);
        Self { frames, endpoints, commands: recording.commands, cursor: 0, clock, mismatches: Vec::new() }
    }

    /// Every divergence reported so far.
    pub fn mismatches(&self) -> &[HalError] {
        &self.mismatches
    }

    /// Recorded commands the controller has not (yet) reissued.
    pub fn remaining_commands(&self) -> &[ValveCommand] {
        &self.commands[self.cursor..]
    }

    pub fn matched_commands(&self) -> usize {
        self.cursor
    }
}

fn same_command(a: &ValveCommand, b: &ValveCommand) -> bool {
    a.module_id == b.module_id && a.mode == b.mode && (a.timestamp - b.timestamp).abs() <= TIME_EPS
}

impl Hal for ReplayBackend {
    fn endpoints(&self) -> Vec<HalEndpoint> {
        self.endpoints.iter().map(|&id| HalEndpoint::full(id)).collect()
    }

    fn now(&self) -> f64 {
        self.clock
    }

    fn read_pressure(&mut self, module_id: u32) -> Result<PressureSample, HalError> {
        if !self.endpoints.contains(&module_id) {
            return Err(HalError::NoSuchEndpoint(module_id));
        }
        let last = self.frames.last().map_or(f64::NEG_INFINITY, |(t, _)| *t);
        if self.clock > last + TIME_EPS {
            return Err(HalError::EndOfRecording { time: self.clock });
        }
        let upto = self.frames.partition_point(|(t, _)| *t <= self.clock + TIME_EPS);
        self.frames[..upto]
            .iter()
            .rev()
            .find_map(|(t, frame)| frame.get(&module_id).map(|&p| PressureSample { module_id, pressure: p, time: *t }))
            .ok_or(HalError::EndOfRecording { time: self.clock })
    }

    fn set_valve(&mut self, cmd: ValveCommand) -> Result<Ack, HalError> {
        if !self.endpoints.contains(&cmd.module_id) {
            return Err(HalError::NoSuchEndpoint(cmd.module_id));
        }
        match self.commands.get(self.cursor) {
            Some(expected) if same_command(expected, &cmd) => {
                self.cursor += 1;
                Ok(Ack { module_id: cmd.module_id, mode: cmd.mode, time: self.clock })
            }
            other => {
                let expected = other.map_or_else(|| "end of recorded commands".to_string(), |c| c.to_string());
                let err = HalError::CommandMismatch { expected, actual: cmd };
                self.mismatches.push(err.clone());
                Err(err)
            }
        }
    }

    fn tick(&mut self, dt: f64) -> Result<f64, HalError> {
        check_tick(dt)?;
        self.clock = quantize6(self.clock + dt);
        Ok(self.clock)
    }

    fn at_end(&self) -> bool {
        self.frames.last().is_none_or(|(t, _)| self.clock >= *t - TIME_EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{calibrate_kappa, RingGeometry, SurrogateMaterial};
    use crate::plant::{PlantParams, StationLayout};

    fn sim(count: usize) -> SimulatedBackend {
        let kappa = calibrate_kappa(&RingGeometry::reference(), 100.0, 0.69, 15.0).unwrap();
        let layout = StationLayout::alternating(count, RingGeometry::reference(), 40.0, 20.0);
        let plant = Plant::new(layout, PlantParams::default(), SurrogateMaterial::with_kappa(kappa), None).unwrap();
        SimulatedBackend::new(plant)
    }

    fn cmd(module_id: u32, mode: ValveMode, timestamp: f64) -> ValveCommand {
        ValveCommand { module_id, mode, timestamp }
    }

    #[test]
    fn ticks_accumulate_time() {
        let mut hal = sim(1);
        hal.tick(0.001).unwrap();
        assert_eq!(hal.tick(0.001).unwrap(), 0.002);
        assert_eq!(hal.tick(-1.0), Err(HalError::InvalidTick(-1.0)));
        assert_eq!(hal.tick(0.0), Err(HalError::InvalidTick(0.0)));
    }

    #[test]
    fn simulated_reads_pass_plant_state_through() {
        let mut hal = sim(1);
        hal.set_valve(cmd(1, ValveMode::Inflate, 0.0)).unwrap();
        for _ in 0..1500 {
            hal.tick(0.001).unwrap();
        }
        let s = hal.read_pressure(1).unwrap();
        assert_eq!(s.pressure, 6.495);
        assert_eq!(s.time, 1.5);
    }

    #[test]
    fn unknown_module_is_rejected() {
        let mut hal = sim(5);
        assert_eq!(hal.read_pressure(99), Err(HalError::NoSuchEndpoint(99)));
        assert_eq!(hal.set_valve(cmd(99, ValveMode::Hold, 0.0)), Err(HalError::NoSuchEndpoint(99)));
        assert_eq!(hal.read_pressure(0), Err(HalError::NoSuchEndpoint(0)));
    }

    #[test]
    fn endpoints_cover_every_module_once() {
        let hal = sim(5);
        let ids: Vec<u32> = hal.endpoints().iter().map(|e| e.module_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
        assert!(hal.endpoints().iter().all(|e| e.capabilities.len() == 2));
    }

    #[test]
    fn command_timestamps_must_not_decrease() {
        let mut hal = sim(1);
        hal.set_valve(cmd(1, ValveMode::Inflate, 1.0)).unwrap();
        assert!(matches!(
            hal.set_valve(cmd(1, ValveMode::Hold, 0.5)),
            Err(HalError::NonMonotonicCommand { .. })
        ));
    }

    #[test]
    fn stuck_valve_ignores_commands() {
        let mut hal = sim(1);
        hal.inject_stuck_valve(1).unwrap();
        hal.set_valve(cmd(1, ValveMode::Inflate, 0.0)).unwrap();
        for _ in 0..100 {
            hal.tick(0.001).unwrap();
        }
        assert_eq!(hal.read_pressure(1).unwrap().pressure, 0.0);
    }

    #[test]
    fn noisy_reads_are_seeded() {
        let kappa = calibrate_kappa(&RingGeometry::reference(), 100.0, 0.69, 15.0).unwrap();
        let make = || {
            let layout = StationLayout::alternating(1, RingGeometry::reference(), 40.0, 20.0);
            let params = PlantParams { noise_sigma: 0.05, rng_seed: 7, ..PlantParams::default() };
            SimulatedBackend::new(Plant::new(layout, params, SurrogateMaterial::with_kappa(kappa), None).unwrap())
        };
        let (mut a, mut b) = (make(), make());
        let xs: Vec<f64> = (0..50).map(|_| a.read_pressure(1).unwrap().pressure).collect();
        let ys: Vec<f64> = (0..50).map(|_| b.read_pressure(1).unwrap().pressure).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().any(|&p| p != 0.0));
    }

    fn recording() -> Recording {
        let samples = (0..3)
            .flat_map(|k| {
                let t = f64::from(k) * 0.001;
                [1, 2].map(|id| PressureSample { module_id: id, pressure: f64::from(k) + f64::from(id) / 10.0, time: t })
            })
            .collect();
        Recording { samples, commands: vec![cmd(1, ValveMode::Inflate, 0.0), cmd(2, ValveMode::Deflate, 0.001)] }
    }

    #[test]
    fn replay_serves_samples_at_or_before_clock() {
        let mut replay = ReplayBackend::new(recording());
        assert_eq!(replay.read_pressure(2).unwrap().pressure, 0.2);
        replay.tick(0.0015).unwrap();
        let s = replay.read_pressure(1).unwrap();
        assert_eq!((s.pressure, s.time), (1.1, 0.001));
        replay.tick(0.0005).unwrap();
        assert_eq!(replay.read_pressure(1).unwrap().pressure, 2.1);
        replay.tick(0.001).unwrap();
        assert!(matches!(replay.read_pressure(1), Err(HalError::EndOfRecording { .. })));
    }

    #[test]
    fn replay_accepts_recorded_commands() {
        let mut replay = ReplayBackend::new(recording());
        replay.set_valve(cmd(1, ValveMode::Inflate, 0.0)).unwrap();
        replay.set_valve(cmd(2, ValveMode::Deflate, 0.001)).unwrap();
        assert!(replay.mismatches().is_empty());
        assert!(replay.remaining_commands().is_empty());
    }

    #[test]
    fn replay_reports_divergent_command() {
        let mut replay = ReplayBackend::new(recording());
        let err = replay.set_valve(cmd(1, ValveMode::Deflate, 0.0)).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("Inflate") && text.contains("Deflate"), "{text}");
        assert_eq!(replay.mismatches().len(), 1);
        assert_eq!(replay.remaining_commands().len(), 2);
    }
}
