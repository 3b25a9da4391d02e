//! Fixed-step simulation of a stacked actuator station.
//!
//! Each module is a single pneumatic chamber driven by a three-way valve.
//! Pressure follows a piecewise-constant rate model, so forward Euler is exact
//! between valve and contact events. Compression modules squeeze radially
//! and grip the payload; longitudinal modules extend axially and lift every
//! module stacked above them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::quantize6;
use crate::geometry::{surrogate_inflation, GeometryError, RingGeometry, SurrogateMaterial};

/// Below this `r_o / r` a grip does not change the pressure rate.
pub const CONTACT_RATE_FLOOR: f64 = 0.4;
/// `r_o / r` at which `k_contact_at_0p7` is specified.
pub const CONTACT_RATE_ANCHOR: f64 = 0.7;
/// Longitudinal stroke at full pressure, as a fraction of module height.
pub const STROKE_FRACTION: f64 = 0.3;

const SPAN_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid station layout: {}", join_rules(.0))]
    Layout(Vec<LayoutRule>),
    #[error("module {module}: {source}")]
    Geometry { module: u32, source: GeometryError },
    #[error("invalid object: {0}")]
    Object(String),
    #[error("invalid plant parameters: {0}")]
    Params(String),
    #[error("no module with id {0}")]
    UnknownModule(u32),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("object too thin for contact: gap {gap:.4} mm exceeds maximum inflation {max_inflation:.4} mm")]
    ContactUnreachable { gap: f64, max_inflation: f64 },
}

fn join_rules(rules: &[LayoutRule]) -> String {
    rules.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModuleKind {
    #[serde(alias = "C", alias = "compression")]
    Compression,
    #[serde(alias = "L", alias = "longitudinal")]
    Longitudinal,
}

impl ModuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Compression => "Compression",
            Self::Longitudinal => "Longitudinal",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Self::Compression => 'C',
            Self::Longitudinal => 'L',
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Compression" | "compression" | "C" => Ok(Self::Compression),
            "Longitudinal" | "longitudinal" | "L" => Ok(Self::Longitudinal),
            other => Err(format!("unknown module kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValveMode {
    Inflate,
    Hold,
    Deflate,
}

impl ValveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Inflate => "Inflate",
            Self::Hold => "Hold",
            Self::Deflate => "Deflate",
        }
    }
}

impl fmt::Display for ValveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ValveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Inflate" => Ok(Self::Inflate),
            "Hold" => Ok(Self::Hold),
            "Deflate" => Ok(Self::Deflate),
            other => Err(format!("unknown valve mode {other:?}")),
        }
    }
}

/// One ring in the stack. `z_origin` is the bottom face at rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleSpec {
    pub id: u32,
    pub kind: ModuleKind,
    pub geometry: RingGeometry,
    pub height: f64,
    pub z_origin: f64,
}

impl ModuleSpec {
    /// Full axial stroke of a longitudinal module.
    pub fn max_stroke(&self) -> f64 {
        STROKE_FRACTION * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayoutRule {
    NonEmpty,
    IdsContiguous,
    HeightPositive,
    ZOriginsIncreasing,
    EndsWithCompression,
    KindsAlternate,
}

impl fmt::Display for LayoutRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NonEmpty => "station must contain at least one module",
            Self::IdsContiguous => "module ids must be unique and contiguous from 1",
            Self::HeightPositive => "module heights must be positive",
            Self::ZOriginsIncreasing => "z origins must increase strictly with id",
            Self::EndsWithCompression => "alternation rule: first and last modules must be Compression",
            Self::KindsAlternate => "alternation rule: kinds must alternate Compression/Longitudinal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationLayout {
    modules: Vec<ModuleSpec>,
}

impl StationLayout {
    /// Stacks modules bottom to top with ids from 1. Not validated.
    pub fn stacked(
        kinds: &[ModuleKind],
        geometry: RingGeometry,
        compression_height: f64,
        longitudinal_height: f64,
    ) -> Self {
        let mut z = 0.0;
        let modules = kinds
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let height = match kind {
                    ModuleKind::Compression => compression_height,
                    ModuleKind::Longitudinal => longitudinal_height,
                };
                let spec = ModuleSpec { id: i as u32 + 1, kind, geometry, height, z_origin: z };
                z += height;
                spec
            })
            .collect();
        Self { modules }
    }

    /// Alternating C/L stack of `count` modules.
    pub fn alternating(count: usize, geometry: RingGeometry, compression_height: f64, longitudinal_height: f64) -> Self {
        let kinds: Vec<ModuleKind> = (0..count)
            .map(|i| if i % 2 == 0 { ModuleKind::Compression } else { ModuleKind::Longitudinal })
            .collect();
        Self::stacked(&kinds, geometry, compression_height, longitudinal_height)
    }

    /// Unchecked; see [`StationLayout::validated`].
    pub fn from_modules(modules: Vec<ModuleSpec>) -> Self {
        Self { modules }
    }

    pub fn violations(&self) -> Vec<LayoutRule> {
        let mut rules = Vec::new();
        let m = &self.modules;
        if m.is_empty() {
            rules.push(LayoutRule::NonEmpty);
            return rules;
        }
        if m.iter().enumerate().any(|(i, spec)| spec.id != i as u32 + 1) {
            rules.push(LayoutRule::IdsContiguous);
        }
        if m.iter().any(|spec| !(spec.height > 0.0)) {
            rules.push(LayoutRule::HeightPositive);
        }
        if m.windows(2).any(|w| !(w[1].z_origin > w[0].z_origin)) {
            rules.push(LayoutRule::ZOriginsIncreasing);
        }
        if m[0].kind != ModuleKind::Compression || m[m.len() - 1].kind != ModuleKind::Compression {
            rules.push(LayoutRule::EndsWithCompression);
        }
        if m.windows(2).any(|w| w[0].kind == w[1].kind) {
            rules.push(LayoutRule::KindsAlternate);
        }
        rules
    }

    pub fn validated(self) -> Result<Self, PlantError> {
        let rules = self.violations();
        if rules.is_empty() {
            Ok(self)
        } else {
            Err(PlantError::Layout(rules))
        }
    }

    pub fn modules(&self) -> &[ModuleSpec] {
        &self.modules
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn module(&self, id: u32) -> Option<&ModuleSpec> {
        id.checked_sub(1).and_then(|i| self.modules.get(i as usize))
    }

    pub fn compression_ids(&self) -> Vec<u32> {
        self.modules
            .iter()
            .filter(|m| m.kind == ModuleKind::Compression)
            .map(|m| m.id)
            .collect()
    }

    /// Number of working units (C, L, C triples) in the stack.
    pub fn level_count(&self) -> usize {
        self.modules.len().saturating_sub(1) / 2
    }

    /// Top face of the stack at rest.
    pub fn rest_top(&self) -> f64 {
        self.modules.last().map_or(0.0, |m| m.z_origin + m.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamberState {
    pub pressure: f64,
    pub valve: ValveMode,
    /// Radial squeeze for compression modules, axial stroke for longitudinal ones.
    pub inflation: f64,
    pub in_contact: bool,
}

impl Default for ChamberState {
    fn default() -> Self {
        Self { pressure: 0.0, valve: ValveMode::Hold, inflation: 0.0, in_contact: false }
    }
}

/// Cylindrical payload dimensions in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub radius: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub spec: ObjectSpec,
    /// Bottom face.
    pub z: f64,
    pub supporters: BTreeSet<u32>,
}

impl ObjectState {
    pub fn new(spec: ObjectSpec, z: f64) -> Self {
        Self { spec, z, supporters: BTreeSet::new() }
    }

    pub fn top(&self) -> f64 {
        self.z + self.spec.length
    }

    pub fn is_held(&self) -> bool {
        !self.supporters.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub p_max_kpa: f64,
    /// Inflation rate with no object in contact.
    pub k_free: f64,
    /// Inflation rate while gripping an object of radius 0.7 r.
    pub k_contact_at_0p7: f64,
    pub k_vent: f64,
    pub dt: f64,
    /// Standard deviation of the pressure sensor noise.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            p_max_kpa: 15.0,
            k_free: 4.33,
            k_contact_at_0p7: 8.48,
            k_vent: 12.0,
            dt: 0.001,
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }
}

impl PlantParams {
    pub fn check(&self) -> Result<(), PlantError> {
        let bad = |what: &str| Err(PlantError::Params(what.to_string()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.p_max_kpa) {
            return bad("p_max_kpa must be positive");
        }
        if !positive(self.k_free) || !positive(self.k_contact_at_0p7) || !positive(self.k_vent) {
            return bad("all pressure rates must be positive");
        }
        if !positive(self.dt) {
            return bad("dt must be positive");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }

    /// Rate gain per unit of `r_o / r` above the detection floor, fitted
    /// through the free rate and the rate at 0.7 r.
    pub fn contact_slope(&self) -> f64 {
        (self.k_contact_at_0p7 / self.k_free - 1.0) / (CONTACT_RATE_ANCHOR - CONTACT_RATE_FLOOR)
    }

    pub fn contact_rate(&self, radius_ratio: f64) -> f64 {
        self.k_free * (1.0 + self.contact_slope() * (radius_ratio - CONTACT_RATE_FLOOR).max(0.0))
    }
}

/// Instantaneous `dP/dt` for one chamber, clamped at the pressure bounds.
pub fn pressure_rate(
    state: &ChamberState,
    kind: ModuleKind,
    contact: bool,
    radius_ratio: f64,
    params: &PlantParams,
) -> f64 {
    let rate = match state.valve {
        ValveMode::Hold => 0.0,
        ValveMode::Inflate if contact && kind == ModuleKind::Compression => params.contact_rate(radius_ratio),
        ValveMode::Inflate => params.k_free,
        ValveMode::Deflate => -params.k_vent,
    };
    if (rate > 0.0 && state.pressure >= params.p_max_kpa) || (rate < 0.0 && state.pressure <= 0.0) {
        0.0
    } else {
        rate
    }
}

/// Full-pressure displacement of a module in millimetres.
pub fn max_inflation(module: &ModuleSpec, mat: &SurrogateMaterial, params: &PlantParams) -> Result<f64, GeometryError> {
    match module.kind {
        ModuleKind::Compression => {
            let ratio = surrogate_inflation(&module.geometry, mat, params.p_max_kpa)?;
            Ok(ratio * module.geometry.inner_radius)
        }
        ModuleKind::Longitudinal => Ok(module.max_stroke()),
    }
}

/// Displacement at pressure `pressure_kpa`, linear between zero and full pressure.
pub fn inflation_of(
    pressure_kpa: f64,
    module: &ModuleSpec,
    mat: &SurrogateMaterial,
    params: &PlantParams,
) -> Result<f64, GeometryError> {
    Ok(pressure_kpa / params.p_max_kpa * max_inflation(module, mat, params)?)
}

fn spans_overlap(lo_a: f64, hi_a: f64, lo_b: f64, hi_b: f64) -> bool {
    lo_a.max(lo_b) < hi_a.min(hi_b) - SPAN_EPS
}

/// Whether a compression module at its current `z_origin` grips the object.
pub fn contact_check(module: &ModuleSpec, z_origin: f64, chamber: &ChamberState, object: &ObjectState) -> bool {
    if module.kind != ModuleKind::Compression {
        return false;
    }
    let gap = module.geometry.inner_radius - object.spec.radius;
    chamber.inflation >= gap - SPAN_EPS
        && spans_overlap(z_origin, z_origin + module.height, object.z, object.top())
}

/// Seconds of free inflation from zero before a ring of inner radius `r`
/// touches an object of radius `radius_ratio * r`.
pub fn time_to_contact(
    radius_ratio: f64,
    params: &PlantParams,
    geometry: &RingGeometry,
    mat: &SurrogateMaterial,
) -> Result<f64, PlantError> {
    let r = geometry.inner_radius;
    let gap = r - radius_ratio * r;
    let max_inflation = surrogate_inflation(geometry, mat, params.p_max_kpa)
        .map_err(|source| PlantError::Geometry { module: 0, source })?
        * r;
    if gap > max_inflation {
        return Err(PlantError::ContactUnreachable { gap, max_inflation });
    }
    Ok(gap.max(0.0) / max_inflation * params.p_max_kpa / params.k_free)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantEvent {
    /// The object lost every supporter and fell to `to_z`.
    Drop { time: f64, from_z: f64, to_z: f64 },
    /// Supporters moved by different amounts; the object followed `followed`.
    Conflict { time: f64, supporters: Vec<u32>, followed: u32 },
}

impl PlantEvent {
    pub fn time(&self) -> f64 {
        match self {
            Self::Drop { time, .. } | Self::Conflict { time, .. } => *time,
        }
    }
}

/// Immutable snapshot of everything that changes over time.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub time: f64,
    pub chambers: Vec<ChamberState>,
    /// Current bottom face of each module, indexed by `id - 1`.
    pub z_origins: Vec<f64>,
    pub object: Option<ObjectState>,
}

impl PlantState {
    pub fn chamber(&self, id: u32) -> Option<&ChamberState> {
        id.checked_sub(1).and_then(|i| self.chambers.get(i as usize))
    }
}

#[derive(Debug, Clone)]
pub struct Plant {
    layout: StationLayout,
    params: PlantParams,
    max_inflation: Vec<f64>,
    state: PlantState,
}

impl Plant {
    pub fn new(
        layout: StationLayout,
        params: PlantParams,
        material: SurrogateMaterial,
        object: Option<ObjectState>,
    ) -> Result<Self, PlantError> {
        let layout = layout.validated()?;
        params.check()?;
        let max_inflation = layout
            .modules()
            .iter()
            .map(|m| max_inflation(m, &material, &params).map_err(|source| PlantError::Geometry { module: m.id, source }))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(obj) = &object {
            if !(obj.spec.radius > 0.0) || !(obj.spec.length > 0.0) || !(obj.z >= 0.0) {
                return Err(PlantError::Object(format!(
                    "radius {} mm, length {} mm and z {} mm must be positive",
                    obj.spec.radius, obj.spec.length, obj.z
                )));
            }
            if let Some(m) = layout.modules().iter().find(|m| obj.spec.radius >= m.geometry.inner_radius) {
                return Err(PlantError::Object(format!(
                    "radius {} mm does not fit module {} (inner radius {} mm)",
                    obj.spec.radius, m.id, m.geometry.inner_radius
                )));
            }
        }
        let n = layout.len();
        let z_origins = layout.modules().iter().map(|m| m.z_origin).collect();
        let mut plant = Self {
            layout,
            params,
            max_inflation,
            state: PlantState { time: 0.0, chambers: vec![ChamberState::default(); n], z_origins, object },
        };
        plant.refresh_contacts();
        if let Some(obj) = plant.state.object.as_mut() {
            obj.supporters = Self::contacts(&plant.state.chambers);
        }
        Ok(plant)
    }

    pub fn layout(&self) -> &StationLayout {
        &self.layout
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    /// Full-pressure displacement of module `id`.
    pub fn max_inflation(&self, id: u32) -> Option<f64> {
        id.checked_sub(1).and_then(|i| self.max_inflation.get(i as usize).copied())
    }

    pub fn set_valve(&mut self, id: u32, mode: ValveMode) -> Result<(), PlantError> {
        let chamber = id
            .checked_sub(1)
            .and_then(|i| self.state.chambers.get_mut(i as usize))
            .ok_or(PlantError::UnknownModule(id))?;
        chamber.valve = mode;
        Ok(())
    }

    /// Overrides the pressure rates, e.g. to inject a blocked vent.
    pub fn params_mut(&mut self) -> &mut PlantParams {
        &mut self.params
    }

    fn contacts(chambers: &[ChamberState]) -> BTreeSet<u32> {
        chambers
            .iter()
            .enumerate()
            .filter(|(_, c)| c.in_contact)
            .map(|(i, _)| i as u32 + 1)
            .collect()
    }

    fn refresh_contacts(&mut self) {
        let state = &mut self.state;
        for (i, module) in self.layout.modules().iter().enumerate() {
            let chamber = &mut state.chambers[i];
            chamber.in_contact = match &state.object {
                Some(obj) => contact_check(module, state.z_origins[i], chamber, obj),
                None => false,
            };
        }
    }

    /// Advances the plant by `dt` seconds using the stored valve modes.
    pub fn step(&mut self, dt: f64) -> Result<Vec<PlantEvent>, PlantError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(PlantError::InvalidStep(dt));
        }
        let p_max = self.params.p_max_kpa;
        let mut events = Vec::new();
        self.state.time = quantize6(self.state.time + dt);
        let time = self.state.time;

        let object_radius = self.state.object.as_ref().map(|o| o.spec.radius);
        for (i, module) in self.layout.modules().iter().enumerate() {
            let chamber = &mut self.state.chambers[i];
            let ratio = object_radius.map_or(0.0, |ro| ro / module.geometry.inner_radius);
            let rate = pressure_rate(chamber, module.kind, chamber.in_contact, ratio, &self.params);
            chamber.pressure = (chamber.pressure + rate * dt).clamp(0.0, p_max);
            chamber.inflation = chamber.pressure / p_max * self.max_inflation[i];
        }

        // Each longitudinal stroke lifts the whole sub-stack above it.
        let mut lift = 0.0;
        let mut deltas = vec![0.0; self.layout.len()];
        for (i, module) in self.layout.modules().iter().enumerate() {
            let z = module.z_origin + lift;
            deltas[i] = z - self.state.z_origins[i];
            self.state.z_origins[i] = z;
            if module.kind == ModuleKind::Longitudinal {
                lift += self.state.chambers[i].inflation;
            }
        }

        if let Some(obj) = self.state.object.as_mut() {
            if let (Some(&lowest), Some(&highest)) = (obj.supporters.first(), obj.supporters.last()) {
                let delta_of = |id: u32| deltas[id as usize - 1];
                let consistent = obj.supporters.iter().all(|&id| (delta_of(id) - delta_of(highest)).abs() <= 1e-12);
                if consistent {
                    obj.z += delta_of(highest);
                } else {
                    events.push(PlantEvent::Conflict {
                        time,
                        supporters: obj.supporters.iter().copied().collect(),
                        followed: lowest,
                    });
                    obj.z += delta_of(lowest);
                }
                obj.z = obj.z.max(0.0);
            }
        }

        self.refresh_contacts();
        let supporters = Self::contacts(&self.state.chambers);
        let dropped = match self.state.object.as_ref() {
            Some(obj) => obj.is_held() && supporters.is_empty(),
            None => false,
        };
        if let Some(obj) = self.state.object.as_mut() {
            obj.supporters = supporters;
        }
        if dropped {
            let from_z = self.state.object.as_ref().map_or(0.0, |o| o.z);
            let to_z = self.landing_height(from_z);
            if let Some(obj) = self.state.object.as_mut() {
                obj.z = to_z;
            }
            self.refresh_contacts();
            let supporters = Self::contacts(&self.state.chambers);
            if let Some(obj) = self.state.object.as_mut() {
                obj.supporters = supporters;
            }
            events.push(PlantEvent::Drop { time, from_z, to_z });
        }
        Ok(events)
    }

    /// Top face of the highest closed compression ring below `z`, or the floor.
    fn landing_height(&self, z: f64) -> f64 {
        let Some(radius) = self.state.object.as_ref().map(|o| o.spec.radius) else {
            return 0.0;
        };
        self.layout
            .modules()
            .iter()
            .enumerate()
            .filter(|(_, m)| m.kind == ModuleKind::Compression)
            .filter_map(|(i, m)| {
                let top = self.state.z_origins[i] + m.height;
                let blocks = self.state.chambers[i].inflation >= m.geometry.inner_radius - radius - SPAN_EPS;
                (blocks && top <= z + SPAN_EPS).then_some(top)
            })
            .fold(0.0, f64::max)
    }
}
