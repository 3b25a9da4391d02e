//! Simulation and control of a peristaltic ring-actuator conveyor.
//!
//! [`geometry`] sizes a single soft ring, [`plant`] simulates a stack of
//! rings moving a cylindrical payload, [`hal`] puts a hardware-shaped
//! interface in front of it (or in front of a recording), and [`control`]
//! sequences grasp and transport cycles using pressure-rate contact
//! detection. [`telemetry`] reads and writes the CSV files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod fixed;
pub mod geometry;
pub mod hal;
pub mod plant;
pub mod telemetry;
