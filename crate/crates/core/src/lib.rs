//! Minimum-rate quantized feedback control of unstable linear plants driven by
//! heavy-tailed noise.
//!
//! The scalar path is generic over [`Real`] (`f32` or `f64`); vector plants
//! run in `f64`. Aliases for both precisions are exported at the crate root.

// Negated comparisons are how NaN is rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod noise;
pub mod num;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod vector;

pub use error::{Error, Result};
pub use noise::{CorrelatedGaussianSpec, NoiseFamily, NoiseSpec};
pub use num::Real;
pub use params::{
    validate_config, CheckedConfig, ControllerConfig, InitialState, Overrides, Plant, Scheme, SystemModel, Violation,
    ViolationKind,
};
pub use rng::{Stream, TrajectoryRng};
pub use scalar::{simulate_trajectory, Mode, Symbol, TrajectoryTrace};
pub use schedule::TransmissionSchedule;
pub use vector::{simulate_vector, VectorTrace};

pub type SystemModelF64 = SystemModel<f64>;
pub type SystemModelF32 = SystemModel<f32>;
pub type ControllerConfigF64 = ControllerConfig<f64>;
pub type ControllerConfigF32 = ControllerConfig<f32>;
pub type CheckedConfigF64 = CheckedConfig<f64>;
pub type CheckedConfigF32 = CheckedConfig<f32>;
pub type OverridesF64 = Overrides<f64>;
pub type OverridesF32 = Overrides<f32>;
pub type TraceF64 = TrajectoryTrace<f64>;
pub type TraceF32 = TrajectoryTrace<f32>;
