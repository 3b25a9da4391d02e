//! Actuation-ring geometry, the chamber-arrangement constraint and the
//! reduced-order inflation surrogate used for design sweeps.
//!
//! The chambers of a compression ring are laid out around the mid-line
//! circumference, so chamber length `s`, spacing `l` and count `N` are tied
//! together by `(s + l) * N = pi * (R + r)`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance accepted on the arc constraint.
pub const ARC_CONSTRAINT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("chamber length infeasible for spacing l = {spacing} mm and N = {count} chambers (s = {length:.4} mm)")]
    ChamberLengthInfeasible { spacing: f64, count: u32, length: f64 },
    #[error("uncalibratable geometry: uniformity factor vanishes at N = {count}")]
    Uncalibratable { count: u32 },
    #[error("calibration target ratio must be positive, got {0}")]
    NonPositiveTarget(f64),
    #[error("empty sweep")]
    EmptySweep,
    #[error("invalid geometry: {0}")]
    Invalid(ValidationReport),
    #[error("pressure must be finite and non-negative, got {0} kPa")]
    InvalidPressure(f64),
}

/// Ring dimensions in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingGeometry {
    #[serde(rename = "outer_radius_R")]
    pub outer_radius: f64,
    #[serde(rename = "inner_radius_r")]
    pub inner_radius: f64,
    #[serde(rename = "step_height_m")]
    pub step_height: f64,
    #[serde(rename = "chamber_spacing_l")]
    pub chamber_spacing: f64,
    #[serde(rename = "wall_thickness_t")]
    pub wall_thickness: f64,
    #[serde(rename = "chamber_length_s")]
    pub chamber_length: f64,
    #[serde(rename = "chamber_count_N")]
    pub chamber_count: u32,
}

impl RingGeometry {
    /// The representative ring used for all experiments.
    pub const fn reference() -> Self {
        Self {
            outer_radius: 40.0,
            inner_radius: 25.0,
            step_height: 4.0,
            chamber_spacing: 12.0,
            wall_thickness: 2.0,
            chamber_length: 28.8,
            chamber_count: 5,
        }
    }

    /// Mid-line circumference `pi * (R + r)` the chambers are distributed over.
    pub fn mid_circumference(&self) -> f64 {
        PI * (self.outer_radius + self.inner_radius)
    }

    /// `(s + l) * N`
    pub fn occupied_arc(&self) -> f64 {
        (self.chamber_length + self.chamber_spacing) * f64::from(self.chamber_count)
    }

    /// Relative mismatch between the occupied arc and the mid-line circumference.
    pub fn arc_relative_error(&self) -> f64 {
        let arc = self.mid_circumference();
        (self.occupied_arc() - arc).abs() / arc
    }

    /// Copy with a different chamber count and `s` re-solved from the constraint.
    pub fn with_chamber_count(&self, count: u32) -> Result<Self, GeometryError> {
        let s = solve_chamber_length(self.outer_radius, self.inner_radius, self.chamber_spacing, count)?;
        Ok(Self { chamber_count: count, chamber_length: s, ..*self })
    }

    /// Copy with a different spacing and `s` re-solved from the constraint.
    pub fn with_chamber_spacing(&self, spacing: f64) -> Result<Self, GeometryError> {
        let s = solve_chamber_length(self.outer_radius, self.inner_radius, spacing, self.chamber_count)?;
        Ok(Self { chamber_spacing: spacing, chamber_length: s, ..*self })
    }
}

impl Default for RingGeometry {
    fn default() -> Self {
        Self::reference()
    }
}

/// Named rules checked by [`validate_geometry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeometryRule {
    FiniteFields,
    OuterExceedsInner,
    InnerRadiusPositive,
    WallThicknessPositive,
    ChamberLengthPositive,
    SpacingNonNegative,
    ChamberCountPositive,
    ArcConstraint,
}

impl GeometryRule {
    pub fn name(self) -> &'static str {
        match self {
            Self::FiniteFields => "finite_fields",
            Self::OuterExceedsInner => "outer_radius_R > inner_radius_r",
            Self::InnerRadiusPositive => "inner_radius_r > 0",
            Self::WallThicknessPositive => "wall_thickness_t > 0",
            Self::ChamberLengthPositive => "chamber_length_s > 0",
            Self::SpacingNonNegative => "chamber_spacing_l >= 0",
            Self::ChamberCountPositive => "chamber_count_N >= 1",
            Self::ArcConstraint => "arc_constraint (s + l) * N = pi * (R + r)",
        }
    }
}

impl fmt::Display for GeometryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<GeometryRule>,
    /// `|(s + l) N - pi (R + r)| / (pi (R + r))`, NaN when not computable.
    pub arc_relative_error: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, rule: GeometryRule) -> bool {
        self.violations.contains(&rule)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "pass (arc relative error {:.6})", self.arc_relative_error);
        }
        write!(f, "fail:")?;
        for (i, rule) in self.violations.iter().enumerate() {
            let sep = if i == 0 { " " } else { "; " };
            write!(f, "{sep}{rule}")?;
        }
        Ok(())
    }
}

/// Checks every ring invariant; violations are reported, not raised.
pub fn validate_geometry(g: &RingGeometry) -> ValidationReport {
    let mut violations = Vec::new();
    let fields = [
        g.outer_radius,
        g.inner_radius,
        g.step_height,
        g.chamber_spacing,
        g.wall_thickness,
        g.chamber_length,
    ];
    if fields.iter().any(|v| !v.is_finite()) {
        violations.push(GeometryRule::FiniteFields);
    }
    if !(g.outer_radius > g.inner_radius) {
        violations.push(GeometryRule::OuterExceedsInner);
    }
    if !(g.inner_radius > 0.0) {
        violations.push(GeometryRule::InnerRadiusPositive);
    }
    if !(g.wall_thickness > 0.0) {
        violations.push(GeometryRule::WallThicknessPositive);
    }
    if !(g.chamber_length > 0.0) {
        violations.push(GeometryRule::ChamberLengthPositive);
    }
    if !(g.chamber_spacing >= 0.0) {
        violations.push(GeometryRule::SpacingNonNegative);
    }
    if g.chamber_count < 1 {
        violations.push(GeometryRule::ChamberCountPositive);
    }
    let arc_relative_error = g.arc_relative_error();
    if !(arc_relative_error <= ARC_CONSTRAINT_TOLERANCE) {
        violations.push(GeometryRule::ArcConstraint);
    }
    ValidationReport { violations, arc_relative_error }
}

/// `s = pi (R + r) / N - l`
pub fn solve_chamber_length(
    outer_radius: f64,
    inner_radius: f64,
    spacing: f64,
    count: u32,
) -> Result<f64, GeometryError> {
    let length = if count == 0 {
        f64::NAN
    } else {
        PI * (outer_radius + inner_radius) / f64::from(count) - spacing
    };
    if !(length > 0.0) {
        return Err(GeometryError::ChamberLengthInfeasible { spacing, count, length });
    }
    Ok(length)
}

/// Elastomer parameters for the surrogate. Only `E` and `kappa` enter the
/// model; Poisson's ratio is carried for reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMaterial {
    pub youngs_modulus_kpa: f64,
    pub poisson_ratio: f64,
    pub kappa: f64,
}

impl SurrogateMaterial {
    pub const YOUNGS_MODULUS_KPA: f64 = 100.0;
    pub const POISSON_RATIO: f64 = 0.45;

    pub fn with_kappa(kappa: f64) -> Self {
        Self {
            youngs_modulus_kpa: Self::YOUNGS_MODULUS_KPA,
            poisson_ratio: Self::POISSON_RATIO,
            kappa,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.youngs_modulus_kpa > 0.0
            && self.poisson_ratio > 0.0
            && self.poisson_ratio < 0.5
            && self.kappa > 0.0
    }
}

/// Uniformity factor `1 - exp(-((N - 1) / 2)^2)`; zero for a single chamber.
pub fn uniformity_factor(count: u32) -> f64 {
    let x = (f64::from(count) - 1.0) / 2.0;
    1.0 - (-x * x).exp()
}

/// Normalized inflation `d_c / r` at gauge pressure `pressure_kpa`:
/// `kappa * P s / (E t r) * U(N)`.
pub fn surrogate_inflation(
    g: &RingGeometry,
    mat: &SurrogateMaterial,
    pressure_kpa: f64,
) -> Result<f64, GeometryError> {
    let report = validate_geometry(g);
    if !report.passed() {
        return Err(GeometryError::Invalid(report));
    }
    if !(pressure_kpa >= 0.0) || !pressure_kpa.is_finite() {
        return Err(GeometryError::InvalidPressure(pressure_kpa));
    }
    Ok(surrogate_unchecked(g, mat.youngs_modulus_kpa, mat.kappa, pressure_kpa))
}

fn surrogate_unchecked(g: &RingGeometry, youngs_modulus: f64, kappa: f64, pressure: f64) -> f64 {
    kappa * pressure * g.chamber_length / (youngs_modulus * g.wall_thickness * g.inner_radius)
        * uniformity_factor(g.chamber_count)
}

/// Closed-form inversion of [`surrogate_inflation`] for `kappa`.
pub fn calibrate_kappa(
    g: &RingGeometry,
    youngs_modulus_kpa: f64,
    target_ratio: f64,
    pressure_kpa: f64,
) -> Result<f64, GeometryError> {
    let report = validate_geometry(g);
    if !report.passed() {
        return Err(GeometryError::Invalid(report));
    }
    if !(target_ratio > 0.0) {
        return Err(GeometryError::NonPositiveTarget(target_ratio));
    }
    if !(pressure_kpa > 0.0) || !pressure_kpa.is_finite() {
        return Err(GeometryError::InvalidPressure(pressure_kpa));
    }
    let unit = surrogate_unchecked(g, youngs_modulus_kpa, 1.0, pressure_kpa);
    if unit == 0.0 {
        return Err(GeometryError::Uncalibratable { count: g.chamber_count });
    }
    Ok(target_ratio / unit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "N")]
    ChamberCount,
    #[serde(rename = "l")]
    ChamberSpacing,
    #[serde(rename = "t")]
    WallThickness,
}

impl SweepParameter {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::ChamberCount => "N",
            Self::ChamberSpacing => "l",
            Self::WallThickness => "t",
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" => Ok(Self::ChamberCount),
            "l" => Ok(Self::ChamberSpacing),
            "t" => Ok(Self::WallThickness),
            other => Err(format!("unknown sweep parameter {other:?} (expected N, l or t)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub value: f64,
    /// `None` marks an infeasible design point.
    pub normalized_inflation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub samples: Vec<SweepSample>,
}

impl SweepResult {
    /// Feasible sample with the largest `d_c / r`; the first one wins ties.
    pub fn argmax(&self) -> Option<SweepSample> {
        self.samples
            .iter()
            .filter(|s| s.normalized_inflation.is_some())
            .fold(None, |best: Option<SweepSample>, s| match best {
                Some(b) if b.normalized_inflation >= s.normalized_inflation => Some(b),
                _ => Some(*s),
            })
    }
}

/// Evaluates the surrogate along one design axis. `N` and `l` sweeps re-solve
/// `s` from the arc constraint; `t` sweeps hold everything else fixed.
pub fn sweep(
    base: &RingGeometry,
    mat: &SurrogateMaterial,
    pressure_kpa: f64,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<SweepResult, GeometryError> {
    if values.is_empty() {
        return Err(GeometryError::EmptySweep);
    }
    let samples = values
        .iter()
        .map(|&value| {
            let geometry = match parameter {
                SweepParameter::ChamberCount => {
                    if value >= 1.0 && value.fract() == 0.0 && value <= f64::from(u32::MAX) {
                        base.with_chamber_count(value as u32).ok()
                    } else {
                        None
                    }
                }
                SweepParameter::ChamberSpacing => base.with_chamber_spacing(value).ok(),
                SweepParameter::WallThickness => Some(RingGeometry { wall_thickness: value, ..*base }),
            };
            let normalized_inflation =
                geometry.and_then(|g| surrogate_inflation(&g, mat, pressure_kpa).ok());
            SweepSample { value, normalized_inflation }
        })
        .collect();
    Ok(SweepResult { parameter, samples })
}
