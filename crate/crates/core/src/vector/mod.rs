//! Vector plants: block decomposition, channel sharing, grid coding of blocks,
//! and actuation through a low-dimensional control matrix.

mod allocate;
mod ballcode;
mod jordan;
mod sim;
mod stabilize;

pub use allocate::{allocate_schedules, BlockAllocation, SubspaceSchedule};
pub use ballcode::{grid_for_budget, BallCode};
pub use jordan::{eigenvalues, op_norm, real_jordan, SpectralBlock, SpectralDecomposition};
pub use sim::{simulate_vector, simulate_with_plan, BlockPlan, VectorPlan, VectorStep, VectorTrace};
pub use stabilize::{krylov, stabilizable_decompose, CanonicalForm, ControlRealizer};
