//! Scalar quantized control: coder state machines, channel wrappers and simulation.

mod coder;
mod loops;
mod sim;

pub use coder::{
    advance, advance_bound, bin_index, control_law, control_step, encode_step, step_system, BoundStep, CoderState,
    Mode, Symbol, ZoomParams,
};
pub use loops::{wrap_delay, wrap_schedule, DelayLoop, LoopPolicy, LoopStep, PassiveLoop, ScheduleLoop, ZoomLoop};
pub use sim::{build_policy, rounds_of, run_loop, simulate_trajectory, RoundRecord, StepRecord, TrajectoryTrace};
