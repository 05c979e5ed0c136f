//! Queue-aware cache content update scheduling.
//!
//! A macro base station refreshes cached contents whose users announce
//! their requests `Δ` slots ahead. The crate models the scheduling problem as
//! an average-cost Markov decision process ([`model`]), solves it exactly by
//! relative value iteration ([`solver`]), approximates it with a deep
//! Q-network ([`neural`], [`dqn`]), and compares policies by simulation
//! ([`harness`]). [`cli`] wires everything into the `aoi-cache` binary.

pub mod agents;
pub mod cli;
pub mod config;
pub mod dqn;
pub mod error;
pub mod harness;
pub mod model;
pub mod neural;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
