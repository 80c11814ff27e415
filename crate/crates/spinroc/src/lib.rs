//! Simulation toolkit for a driven two-level spin: noise-robust pulse
//! synthesis, composite-pulse robustness maps, randomized benchmarking, and
//! dynamical-decoupling nuclear-spin detection.
//!
//! Conventions (see [`units`]): angular rates in rad/s everywhere inside the
//! library, seconds for durations, radians for angles; interfaces that speak
//! MHz/kHz convert at the boundary.

pub mod error;
pub mod fitting;
pub mod landscape;
pub mod linalg;
pub mod noise;
pub mod pulse;
pub mod rb;
pub mod roc;
pub mod sensing;
pub mod state;
pub mod units;

pub use error::{Result, SpinError};
