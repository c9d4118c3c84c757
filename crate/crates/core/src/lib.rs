//! Distributed algorithms built from centralized optimization blocks and
//! consensus trackers interconnected through a small gain `δ`.

pub mod blocks;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod instance;
pub mod interconnection;
pub mod problem;
pub mod trace;
pub mod trackers;

pub use error::{Error, Result};
