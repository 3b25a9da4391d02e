//! Telemetry and baseline CSV files.
//!
//! Telemetry has one row per module per sample instant, followed by event
//! rows at the same timestamp. Command events double as the recording the
//! replay backend checks against, so a telemetry file is also a replay file.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::fixed::format6;
use crate::hal::{PressureSample, Recording, ValveCommand};
use crate::plant::{ModuleKind, ValveMode};

pub const TELEMETRY_HEADER: [&str; 9] =
    ["time_s", "module_id", "kind", "pressure_kPa", "valve", "inflation_mm", "object_z_mm", "phase", "event"];

pub const BASELINE_HEADER: [&str; 2] = ["module_id", "rate_kPa_per_s"];

const COMMAND_PREFIX: &str = "command ";

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { found: String, expected: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// One telemetry row. Event rows leave the per-sample fields empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetrySample {
    pub time: f64,
    pub module_id: u32,
    pub kind: Option<ModuleKind>,
    pub pressure: Option<f64>,
    pub valve: Option<ValveMode>,
    pub inflation: Option<f64>,
    pub object_z: Option<f64>,
    pub phase: String,
    pub event: String,
}

impl TelemetrySample {
    pub fn is_event(&self) -> bool {
        !self.event.is_empty()
    }

    fn fields(&self) -> [String; 9] {
        let num = |v: Option<f64>| v.map(format6).unwrap_or_default();
        [
            format6(self.time),
            self.module_id.to_string(),
            self.kind.map(|k| k.as_str().to_string()).unwrap_or_default(),
            num(self.pressure),
            self.valve.map(|v| v.as_str().to_string()).unwrap_or_default(),
            num(self.inflation),
            num(self.object_z),
            self.phase.clone(),
            self.event.clone(),
        ]
    }
}

/// Destination for telemetry rows.
pub trait TelemetrySink {
    fn record(&mut self, row: TelemetrySample) -> Result<(), TelemetryError>;
}

impl TelemetrySink for Vec<TelemetrySample> {
    fn record(&mut self, row: TelemetrySample) -> Result<(), TelemetryError> {
        self.push(row);
        Ok(())
    }
}

pub struct TelemetryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TelemetryWriter<W> {
    pub fn new(writer: W) -> Result<Self, TelemetryError> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        inner.write_record(TELEMETRY_HEADER)?;
        Ok(Self { inner })
    }

    pub fn flush(&mut self) -> Result<(), TelemetryError> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, TelemetryError> {
        self.inner.into_inner().map_err(|e| TelemetryError::Io(e.into_error()))
    }
}

impl<W: Write> TelemetrySink for TelemetryWriter<W> {
    fn record(&mut self, row: TelemetrySample) -> Result<(), TelemetryError> {
        self.inner.write_record(row.fields())?;
        Ok(())
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), TelemetryError> {
    if found.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(TelemetryError::Header { found: found.iter().collect::<Vec<_>>().join(","), expected: expected.join(",") })
    }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str) -> Result<T, TelemetryError>
where
    T::Err: std::fmt::Display,
{
    let line = record.position().map_or(0, |p| p.line());
    let raw = record.get(idx).ok_or_else(|| TelemetryError::Parse { line, message: format!("missing {name}") })?;
    raw.parse().map_err(|e| TelemetryError::Parse { line, message: format!("bad {name} {raw:?}: {e}") })
}

/// Extracts pressure samples and valve commands from a telemetry file.
pub fn read_recording<R: Read>(reader: R) -> Result<Recording, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &TELEMETRY_HEADER)?;
    let mut recording = Recording::default();
    for record in rdr.records() {
        let record = record?;
        let time: f64 = parse_field(&record, 0, "time_s")?;
        let module_id: u32 = parse_field(&record, 1, "module_id")?;
        let event = record.get(8).unwrap_or("");
        if event.is_empty() {
            let pressure: f64 = parse_field(&record, 3, "pressure_kPa")?;
            recording.samples.push(PressureSample { module_id, pressure, time });
        } else if event.starts_with(COMMAND_PREFIX) {
            let mode: ValveMode = parse_field(&record, 4, "valve")?;
            recording.commands.push(ValveCommand { module_id, mode, timestamp: time });
        }
    }
    Ok(recording)
}

pub fn write_baselines<W: Write>(writer: W, baselines: &BTreeMap<u32, f64>) -> Result<(), TelemetryError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(BASELINE_HEADER)?;
    for (id, rate) in baselines {
        w.write_record([id.to_string(), format6(*rate)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_baselines<R: Read>(reader: R) -> Result<BTreeMap<u32, f64>, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &BASELINE_HEADER)?;
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let id: u32 = parse_field(&record, 0, "module_id")?;
        let rate: f64 = parse_field(&record, 1, "rate_kPa_per_s")?;
        out.insert(id, rate);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(time: f64, module_id: u32, pressure: f64) -> TelemetrySample {
        TelemetrySample {
            time,
            module_id,
            kind: Some(ModuleKind::Compression),
            pressure: Some(pressure),
            valve: Some(ValveMode::Hold),
            inflation: Some(0.0),
            object_z: Some(0.0),
            phase: "0:Grasp".into(),
            event: String::new(),
        }
    }

    #[test]
    fn header_is_exact() {
        let w = TelemetryWriter::new(Vec::new()).unwrap();
        let bytes = w.into_inner().unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "time_s,module_id,kind,pressure_kPa,valve,inflation_mm,object_z_mm,phase,event\n"
        );
    }

    #[test]
    fn rows_use_six_decimals() {
        let mut w = TelemetryWriter::new(Vec::new()).unwrap();
        w.record(sample(0.001, 1, 6.495)).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0.001000,1,Compression,6.495000,Hold,0.000000,0.000000,0:Grasp,");
    }

    #[test]
    fn recording_round_trip() {
        let mut w = TelemetryWriter::new(Vec::new()).unwrap();
        w.record(sample(0.0, 1, 0.0)).unwrap();
        w.record(TelemetrySample {
            valve: Some(ValveMode::Inflate),
            pressure: None,
            inflation: None,
            event: "command Inflate".into(),
            ..sample(0.0, 1, 0.0)
        })
        .unwrap();
        w.record(TelemetrySample { event: "grasped level=0".into(), ..sample(0.0, 0, 0.0) }).unwrap();
        w.record(sample(0.001, 1, 0.00433)).unwrap();
        let bytes = w.into_inner().unwrap();
        let rec = read_recording(bytes.as_slice()).unwrap();
        assert_eq!(rec.samples.len(), 2);
        assert_eq!(rec.samples[1].pressure, 0.00433);
        assert_eq!(rec.commands, vec![ValveCommand { module_id: 1, mode: ValveMode::Inflate, timestamp: 0.0 }]);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = read_recording("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TelemetryError::Header { .. }));
    }

    #[test]
    fn baselines_round_trip() {
        let rates = BTreeMap::from([(1, 4.33), (3, 4.329_999_9), (5, 4.33)]);
        let mut buf = Vec::new();
        write_baselines(&mut buf, &rates).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "module_id,rate_kPa_per_s\n1,4.330000\n3,4.330000\n5,4.330000\n");
        let back = read_baselines(buf.as_slice()).unwrap();
        assert_eq!(back.keys().copied().collect::<Vec<_>>(), vec![1, 3, 5]);
    }
}
