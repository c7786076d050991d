//! Decentralized formation control for unicycle agents trained with a
//! centralized critic and per-agent deterministic actors.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod formation;
pub mod harness;
pub mod learner;
pub mod nn;
pub mod replay;
pub mod se2;

pub use error::{Error, Result};
