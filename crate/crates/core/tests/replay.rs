mod common;

use common::*;
use peristaltic_core::control::{run_station, ControlConfig, Outcome, RunReport, RunSettings};
use peristaltic_core::hal::{Recording, ReplayBackend, ValveCommand};
use peristaltic_core::plant::PlantParams;
use peristaltic_core::telemetry::{read_recording, TelemetryWriter};

fn record(params: PlantParams, cfg: &ControlConfig) -> (RunReport, Vec<u8>) {
    let mut hal = backend(5, params, Some(object(0.7, 96.0)));
    let mut writer = TelemetryWriter::new(Vec::new()).unwrap();
    let report = run_station(&mut hal, &layout(5), cfg.clone(), RunSettings::default(), Some(&mut writer)).unwrap();
    (report, writer.into_inner().unwrap())
}

fn replay(recording: Recording, cfg: &ControlConfig) -> (RunReport, ReplayBackend) {
    let mut hal = ReplayBackend::new(recording);
    let report = run_station(&mut hal, &layout(5), cfg.clone(), RunSettings::default(), None).unwrap();
    (report, hal)
}

#[test]
fn recorded_run_replays_without_mismatch() {
    let params = PlantParams { noise_sigma: 0.05, rng_seed: 5, ..PlantParams::default() };
    let cfg = config(baselines(5, params));
    let (original, bytes) = record(params, &cfg);
    let recording = read_recording(bytes.as_slice()).unwrap();
    let recorded: Vec<ValveCommand> = recording.commands.clone();

    let (replayed, hal) = replay(recording, &cfg);
    assert!(hal.mismatches().is_empty(), "{:?}", hal.mismatches());
    assert!(hal.remaining_commands().is_empty());
    assert_eq!(hal.matched_commands(), recorded.len());
    assert_eq!(replayed.outcome, Outcome::EndOfRecording);
    assert_eq!(replayed.cycles, original.cycles);
    assert_eq!(replayed.log.commands().copied().collect::<Vec<_>>(), recorded);
}

#[test]
fn identical_runs_write_identical_telemetry() {
    let params = PlantParams { noise_sigma: 0.05, rng_seed: 8, ..PlantParams::default() };
    let cfg = config(baselines(5, params));
    assert_eq!(record(params, &cfg).1, record(params, &cfg).1);
}

#[test]
fn changed_controller_diverges_from_recording() {
    let cfg = config(baselines(5, PlantParams::default()));
    let (_, bytes) = record(PlantParams::default(), &cfg);
    let mut strict = cfg.clone();
    strict.detection.threshold_ratio = 3.0;
    let (report, hal) = replay(read_recording(bytes.as_slice()).unwrap(), &strict);
    assert_eq!(report.outcome, Outcome::Faulted);
    assert_eq!(hal.mismatches().len(), 1);
}
