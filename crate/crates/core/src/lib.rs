//! Particle-filter object tracking in `f64`, `f32` and software binary16.
//!
//! The binary16 paths come in a scalar and a packed (two lanes per
//! operation) flavor and count every arithmetic operation and conversion
//! they perform, so precision effects can be measured on any machine.

pub mod bench;
pub mod error;
pub mod filter;
pub mod halfnum;
pub mod io;
pub mod model;
pub mod precision;
pub mod rng;

pub use error::{Error, Result};
pub use filter::{run, run_observed, ParticleSet, RunConfig, RunOutput, Stage, StageEvent};
pub use halfnum::{Binary16, OpCounters, PackedOp, PackedPair};
pub use model::{Frame, ModelParams, PixelTemplate, Video};
pub use precision::{HalfKernel, Lane, PrecisionMode};
