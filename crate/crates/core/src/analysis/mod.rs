//! Estimators, certificates and converse calculators over simulated traces.

mod batch;
mod certificates;
mod converse;
mod moments;
mod tails;

pub use batch::*;
pub use certificates::*;
pub use converse::*;
pub use moments::*;
pub use tails::*;
