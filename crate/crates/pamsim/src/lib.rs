//! Simulator and model-based controller for a two-degree-of-freedom platform
//! actuated by three pneumatic artificial muscles.
//!
//! The crate provides the physical component models (muscle, rigid platform,
//! servovalve), the differential-flatness machinery that turns reference
//! trajectories of the flat output (two tilt angles plus the third muscle
//! force) into feedforward mass flows, midpoint force allocation for the
//! redundant third muscle, smooth reference generation, and a closed-loop
//! executive with PI correction, sensor quantization, and telemetry.
//!
//! All model operations are pure functions over immutable parameter sets and
//! are safe to evaluate concurrently; only a running experiment (one
//! [`closed_loop::run_experiment`] call) is stateful, and independent runs
//! may execute in parallel.

pub mod allocation;
pub mod closed_loop;
pub mod config;
pub mod error;
pub mod flatness;
pub mod muscle;
pub mod platform;
pub mod reference;
pub mod valve;

pub use error::{ModelError, Result};
