//! Tabular option keyboards over successor-feature bases.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod mdp;
pub mod ok;
pub mod basis;
pub mod planner;

pub use error::{Error, Result};
