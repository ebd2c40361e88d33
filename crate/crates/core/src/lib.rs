//! Simulator and analysis toolkit for collisional charging of a multilevel
//! transmon battery.
//!
//! A transmon circuit truncated to its lowest levels is charged by a stream
//! of identically prepared qubit ancillas. Each ancilla couples to the
//! battery through the charge operator for a fixed duration and is then
//! discarded; iterating the resulting quantum channel yields the charging
//! dynamics. The crate provides the spectral toolbox ([`transmon`]), the
//! collision dynamics ([`collision`]), energetic figures of merit
//! ([`observables`]), model fits and scaling laws ([`analysis`]), and the
//! batch/CLI layer ([`manifest`], [`sweep`], [`plots`]).

pub mod analysis;
pub mod collision;
pub mod error;
pub mod manifest;
pub mod observables;
pub mod plots;
pub mod qcore;
pub mod sweep;
pub mod transmon;

pub use error::{Error, Result};
