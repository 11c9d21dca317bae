//! Joint recall at desk scale: task generation, sparse attention pattern
//! generators, a generalized state-space machine interpreter, executable
//! expressiveness checks, a hand-rolled reverse-mode trainer, and a benchmark
//! grid runner.
//!
//! The companion guide under `book/` walks through each piece; start with
//! [`task`] for the synthetic task and [`patterns`] for the attention
//! pattern family.

pub mod bench;
pub mod error;
pub mod gssm;
pub mod linalg;
pub mod nn;
pub mod patterns;
pub mod task;
pub mod theory;

pub use error::{Error, Result};
