use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use peristaltic_core::control::{calibrate_baseline, run_station, EventLog, RunReport, RunSettings};
use peristaltic_core::fixed::format6;
use peristaltic_core::geometry::{sweep, validate_geometry, SweepParameter, SweepResult, ValidationReport};
use peristaltic_core::hal::SimulatedBackend;
use peristaltic_core::plant::{LayoutRule, Plant, StationLayout};
use peristaltic_core::telemetry::TelemetryWriter;

use crate::config::RunConfig;
use crate::CliError;

pub const SWEEP_HEADER: [&str; 2] = ["value", "d_c_over_r"];
pub const INFEASIBLE: &str = "infeasible";

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub settings: Option<String>,
    pub modules: Vec<(u32, ValidationReport)>,
    pub layout: Vec<LayoutRule>,
}

impl ValidationSummary {
    pub fn passed(&self) -> bool {
        self.settings.is_none() && self.layout.is_empty() && self.modules.iter().all(|(_, r)| r.passed())
    }
}

impl fmt::Display for ValidationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, report) in &self.modules {
            writeln!(f, "module {id}: {report}")?;
        }
        for rule in &self.layout {
            writeln!(f, "station: {rule}")?;
        }
        if let Some(msg) = &self.settings {
            writeln!(f, "settings: {msg}")?;
        }
        write!(f, "{}", if self.passed() { "ok" } else { "FAILED" })
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> ValidationSummary {
    let layout = cfg.layout();
    let modules = layout.modules().iter().map(|m| (m.id, validate_geometry(&m.geometry))).collect();
    let settings = cfg.check().err().map(|e| e.to_string());
    ValidationSummary { settings, modules, layout: layout.violations() }
}

fn simulated(cfg: &RunConfig, with_object: bool) -> Result<(SimulatedBackend, StationLayout), CliError> {
    cfg.check()?;
    let layout = cfg.layout().validated()?;
    let object = with_object.then(|| cfg.object_state());
    let plant = Plant::new(layout.clone(), cfg.plant, cfg.material()?, object)?;
    Ok((SimulatedBackend::new(plant), layout))
}

/// Baseline inflation rate of every compression module, measured on the
/// simulated station.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<BTreeMap<u32, f64>, CliError> {
    let (mut hal, layout) = simulated(cfg, cfg.calibration.object_present)?;
    let settings = cfg.control().calibration_settings(cfg.plant.dt);
    let mut log = EventLog::default();
    let mut rates = BTreeMap::new();
    for id in layout.compression_ids() {
        rates.insert(id, calibrate_baseline(&mut hal, id, &settings, &mut log)?);
    }
    Ok(rates)
}

/// Runs the station and streams telemetry into `writer`. Without
/// `baselines` the station is calibrated first.
pub fn run_to_writer<W: Write>(
    cfg: &RunConfig,
    baselines: Option<BTreeMap<u32, f64>>,
    writer: W,
) -> Result<RunReport, CliError> {
    let baselines = match baselines {
        Some(b) => b,
        None => cmd_calibrate(&RunConfig { calibration: Default::default(), ..cfg.clone() })?,
    };
    let (mut hal, layout) = simulated(cfg, true)?;
    let compression = layout.compression_ids();
    if let Some(id) = baselines.keys().find(|id| !compression.contains(id)) {
        return Err(CliError::Invalid(format!("baseline for module {id}, which is not a compression module of the station")));
    }
    let mut control = cfg.control();
    control.detection.baseline_rates = baselines;
    let settings = RunSettings { dt: cfg.plant.dt, duration_s: cfg.run.duration_s };
    let mut sink = TelemetryWriter::new(writer)?;
    let report = run_station(&mut hal, &layout, control, settings, Some(&mut sink))?;
    sink.flush()?;
    Ok(report)
}

pub fn cmd_run(cfg: &RunConfig, baselines: Option<BTreeMap<u32, f64>>, out: &Path) -> Result<RunReport, CliError> {
    let file = File::create(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    run_to_writer(cfg, baselines, BufWriter::new(file))
}

pub fn run_summary(report: &RunReport) -> String {
    let z = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |z| format!("{} mm", format6(z)));
    let mut out = format!(
        "outcome: {}\ncycles: {}\nlevel: {}\ndetections: {}\ndrops: {}\nconflicts: {}\ninitial z: {}\nfinal z: {}\nsimulated time: {} s\nfaults: {}\n",
        report.outcome,
        report.cycles,
        report.level,
        report.detections,
        report.drops,
        report.conflicts,
        z(report.initial_object_z),
        z(report.final_object_z),
        format6(report.sim_time),
        report.faults.len(),
    );
    for fault in &report.faults {
        out.push_str(&format!("  - {fault}\n"));
    }
    out
}

pub fn cmd_sweep(cfg: &RunConfig, parameter: SweepParameter, values: &[f64]) -> Result<SweepResult, CliError> {
    let geometry = cfg.geometry();
    let report = validate_geometry(&geometry);
    if !report.passed() {
        return Err(CliError::Invalid(format!("base geometry: {report}")));
    }
    Ok(sweep(&geometry, &cfg.material()?, cfg.plant.p_max_kpa, parameter, values)?)
}

pub fn write_sweep<W: Write>(writer: W, result: &SweepResult) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let io = |e: csv::Error| CliError::Telemetry(e.into());
    w.write_record(SWEEP_HEADER).map_err(io)?;
    for s in &result.samples {
        let d = s.normalized_inflation.map_or_else(|| INFEASIBLE.to_string(), format6);
        w.write_record([format6(s.value), d]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Telemetry(e.into()))?;
    Ok(())
}
