//! Group symmetrizer for recurrent policies in cooperative two-player games.

pub mod envs;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod group;
pub mod nn;
pub mod rollout;
pub mod symmetrizer;
pub mod training;

pub use error::{EqcError, Result};
pub use exec::Exec;
