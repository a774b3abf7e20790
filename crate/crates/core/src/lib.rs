//! Pipelined sampling for piecewise rectified-flow models.
//!
//! * [`schedule`]: noise table, time windows and per-timestep window coefficients.
//! * [`scheduler`]: the batched Euler step over samples at different timesteps.
//! * [`model`]: the velocity-model interface, desk-scale models and guidance pairing.
//! * [`engine`]: a homogeneous-batch-only compiled engine and its adaptive dispatcher.
//! * [`pipeline`]: the streaming pipeline and the sequential loop it reproduces.
//! * [`bench`]: closed-form throughput model and a wall-clock harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the element type.

pub mod bench;
pub mod busy;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod schedule;
pub mod scheduler;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Schedule = schedule::TimeWindowSchedule<f64>;
pub type Schedule32 = schedule::TimeWindowSchedule<f32>;
pub type NoiseTable = schedule::NoiseSchedule<f64>;
pub type NoiseTable32 = schedule::NoiseSchedule<f32>;
pub type Batch = scheduler::LatentBatch<f64>;
pub type Batch32 = scheduler::LatentBatch<f32>;
pub type Latents = matrix::Matrix<f64>;
pub type Latents32 = matrix::Matrix<f32>;
pub type Cond = model::Conditioning<f64>;
pub type Cond32 = model::Conditioning<f32>;
pub type Engine = engine::CompiledEngine<f64>;
pub type Engine32 = engine::CompiledEngine<f32>;
