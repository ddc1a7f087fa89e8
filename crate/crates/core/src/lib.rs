//! Goal-conditioned hierarchical RL with landmark-guided active exploration
//! and state-specific regularization of the low-level critic, on 2D
//! point-mass mazes.

pub mod cli;
pub mod envs;
pub mod exploration;
pub mod error;
pub mod nn;
pub mod planner;
pub mod policy;
pub mod reach;
pub mod replay;
pub mod repr;
pub mod trainer;

pub use error::{LespError, Result};
