#![allow(dead_code)]

use std::collections::BTreeMap;

use peristaltic_core::control::{calibrate_baseline, ControlConfig, EventLog};
use peristaltic_core::geometry::{calibrate_kappa, RingGeometry, SurrogateMaterial};
use peristaltic_core::hal::SimulatedBackend;
use peristaltic_core::plant::{ObjectSpec, ObjectState, Plant, PlantParams, StationLayout};

pub const DT: f64 = 0.001;

pub fn material() -> SurrogateMaterial {
    let kappa = calibrate_kappa(&RingGeometry::reference(), 100.0, 0.69, 15.0).unwrap();
    SurrogateMaterial::with_kappa(kappa)
}

pub fn layout(count: usize) -> StationLayout {
    StationLayout::alternating(count, RingGeometry::reference(), 40.0, 20.0)
}

pub fn object(ratio: f64, length: f64) -> ObjectState {
    ObjectState::new(ObjectSpec { radius: ratio * RingGeometry::reference().inner_radius, length }, 0.0)
}

pub fn backend(count: usize, params: PlantParams, object: Option<ObjectState>) -> SimulatedBackend {
    SimulatedBackend::new(Plant::new(layout(count), params, material(), object).unwrap())
}

/// Calibrates every compression module of an empty station of the same shape.
pub fn baselines(count: usize, params: PlantParams) -> BTreeMap<u32, f64> {
    let mut hal = backend(count, params, None);
    let cfg = ControlConfig::default();
    let settings = cfg.calibration_settings(DT);
    let mut log = EventLog::default();
    layout(count)
        .compression_ids()
        .into_iter()
        .map(|id| (id, calibrate_baseline(&mut hal, id, &settings, &mut log).unwrap()))
        .collect()
}

pub fn config(baselines: BTreeMap<u32, f64>) -> ControlConfig {
    let mut cfg = ControlConfig::default();
    cfg.detection.baseline_rates = baselines;
    cfg
}
