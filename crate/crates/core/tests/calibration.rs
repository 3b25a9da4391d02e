mod common;

use common::*;
use peristaltic_core::control::{calibrate_baseline, ControlConfig, ControlError, EventKind, EventLog};
use peristaltic_core::plant::PlantParams;

fn calibrate(params: PlantParams, ratio: Option<f64>, module: u32) -> (Result<f64, ControlError>, EventLog) {
    let mut hal = backend(5, params, ratio.map(|r| object(r, 96.0)));
    let settings = ControlConfig::default().calibration_settings(DT);
    let mut log = EventLog::default();
    (calibrate_baseline(&mut hal, module, &settings, &mut log), log)
}

#[test]
fn noise_free_baseline_is_the_free_rate() {
    for id in [1, 3, 5] {
        let (rate, log) = calibrate(PlantParams::default(), None, id);
        let rate = rate.unwrap();
        assert!((rate - 4.33).abs() < 1e-6, "C-{id}: {rate}");
        assert!(matches!(log.events().last().unwrap().kind, EventKind::Calibrated { module_id, .. } if module_id == id));
    }
}

#[test]
fn noisy_baseline_stays_within_two_percent() {
    for seed in [1, 2, 3, 42, 1234] {
        let params = PlantParams { noise_sigma: 0.05, rng_seed: seed, ..PlantParams::default() };
        let rate = calibrate(params, None, 5).0.unwrap();
        assert!((rate / 4.33 - 1.0).abs() < 0.02, "seed {seed}: {rate}");
    }
}

#[test]
fn noisy_baseline_is_reproducible() {
    let params = PlantParams { noise_sigma: 0.05, rng_seed: 9, ..PlantParams::default() };
    assert_eq!(calibrate(params, None, 3).0.unwrap(), calibrate(params, None, 3).0.unwrap());
}

#[test]
fn object_in_the_ring_contaminates_calibration() {
    let (err, _) = calibrate(PlantParams::default(), Some(0.7), 1);
    match err.unwrap_err() {
        ControlError::CalibrationContaminated { module_id, slope, limit } => {
            assert_eq!(module_id, 1);
            assert!(slope > limit);
            assert!((slope - 8.48).abs() < 0.05, "{slope}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn module_above_the_object_calibrates_cleanly() {
    let rate = calibrate(PlantParams::default(), Some(0.7), 5).0.unwrap();
    assert!((rate - 4.33).abs() < 1e-6);
}
