//! TOML run configuration.
//!
//! Every section is optional and an empty file describes the nominal
//! five-module scenario. A `[geometry]` table, when present, must list all
//! ring dimensions.
//!
//! ```toml
//! [geometry]
//! outer_radius_R = 40.0
//! inner_radius_r = 25.0
//! step_height_m = 4.0
//! chamber_spacing_l = 12.0
//! wall_thickness_t = 2.0
//! chamber_length_s = 28.8
//! chamber_count_N = 5
//!
//! [station]
//! modules = ["C", "L", "C", "L", "C"]
//! compression_height_mm = 40.0
//! longitudinal_height_mm = 20.0
//!
//! [object]
//! radius_ratio = 0.7
//! length_mm = 96.0
//!
//! [plant]
//! noise_sigma = 0.05
//! rng_seed = 7
//!
//! [run]
//! duration_s = 300.0
//! output = "telemetry.csv"
//! ```

use std::path::{Path, PathBuf};

use peristaltic_core::control::{ControlConfig, DetectionConfig};
use peristaltic_core::geometry::{calibrate_kappa, RingGeometry, SurrogateMaterial};
use peristaltic_core::plant::{ModuleKind, ObjectSpec, ObjectState, PlantParams, StationLayout};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    pub youngs_modulus_kpa: f64,
    pub poisson_ratio: f64,
    /// `d_c / r` the reference ring reaches at full pressure; used to fit
    /// `kappa` unless `kappa` is given directly.
    pub target_ratio: f64,
    pub kappa: Option<f64>,
}

impl Default for MaterialSection {
    fn default() -> Self {
        Self {
            youngs_modulus_kpa: SurrogateMaterial::YOUNGS_MODULUS_KPA,
            poisson_ratio: SurrogateMaterial::POISSON_RATIO,
            target_ratio: 0.69,
            kappa: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationSection {
    /// Bottom to top.
    pub modules: Vec<ModuleKind>,
    pub compression_height_mm: f64,
    pub longitudinal_height_mm: f64,
}

impl Default for StationSection {
    fn default() -> Self {
        use ModuleKind::{Compression as C, Longitudinal as L};
        Self { modules: vec![C, L, C, L, C], compression_height_mm: 40.0, longitudinal_height_mm: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSection {
    /// Object radius as a fraction of the ring inner radius.
    pub radius_ratio: f64,
    pub length_mm: f64,
    pub z_mm: f64,
}

impl Default for ObjectSection {
    fn default() -> Self {
        Self { radius_ratio: 0.7, length_mm: 96.0, z_mm: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Leave the object in the station while calibrating.
    pub object_present: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub duration_s: f64,
    pub output: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { duration_s: 300.0, output: PathBuf::from("telemetry.csv") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Option<RingGeometry>,
    pub material: MaterialSection,
    pub station: StationSection,
    pub object: ObjectSection,
    pub plant: PlantParams,
    pub detection: DetectionConfig,
    pub control: ControlConfig,
    pub calibration: CalibrationSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn geometry(&self) -> RingGeometry {
        self.geometry.unwrap_or_default()
    }

    /// Unvalidated layout; see [`StationLayout::violations`].
    pub fn layout(&self) -> StationLayout {
        StationLayout::stacked(
            &self.station.modules,
            self.geometry(),
            self.station.compression_height_mm,
            self.station.longitudinal_height_mm,
        )
    }

    pub fn material(&self) -> Result<SurrogateMaterial, CliError> {
        let m = &self.material;
        let kappa = match m.kappa {
            Some(k) => k,
            None => calibrate_kappa(&self.geometry(), m.youngs_modulus_kpa, m.target_ratio, self.plant.p_max_kpa)?,
        };
        let material = SurrogateMaterial { youngs_modulus_kpa: m.youngs_modulus_kpa, poisson_ratio: m.poisson_ratio, kappa };
        if !material.is_valid() {
            return Err(CliError::Invalid(format!(
                "material: need E > 0, 0 < nu < 0.5 and kappa > 0 (got E = {}, nu = {}, kappa = {})",
                material.youngs_modulus_kpa, material.poisson_ratio, material.kappa
            )));
        }
        Ok(material)
    }

    pub fn object_state(&self) -> ObjectState {
        let o = &self.object;
        ObjectState::new(
            ObjectSpec { radius: o.radius_ratio * self.geometry().inner_radius, length: o.length_mm },
            o.z_mm,
        )
    }

    /// Controller settings with the detection overrides folded in and the
    /// pressure ceiling taken from the plant.
    pub fn control(&self) -> ControlConfig {
        let mut control = self.control.clone();
        control.p_max_kpa = self.plant.p_max_kpa;
        control.detection = self.detection.clone();
        control
    }

    /// Checks the scalar settings that do not depend on the station layout.
    pub fn check(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Invalid(m));
        if !(self.run.duration_s > 0.0) || !self.run.duration_s.is_finite() {
            return invalid(format!("run.duration_s must be positive, got {}", self.run.duration_s));
        }
        let o = &self.object;
        if !(o.radius_ratio > 0.0 && o.radius_ratio < 1.0) {
            return invalid(format!("object.radius_ratio must lie in (0, 1), got {}", o.radius_ratio));
        }
        if !(o.length_mm > 0.0) || !(o.z_mm >= 0.0) {
            return invalid("object.length_mm must be positive and object.z_mm non-negative".to_string());
        }
        self.plant.check()?;
        self.control().check()?;
        Ok(())
    }
}
