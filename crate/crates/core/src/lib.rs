//! Layer-level architecture experiments on small image subsets.

pub mod data;
pub mod error;
#[cfg(any(test, feature = "fault-injection"))]
pub mod fault;
pub mod fsutil;
pub mod model;
pub mod mutations;
pub mod nn;
pub mod orchestrator;
pub mod selfcheck;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
