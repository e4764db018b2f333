//! Knowledge-guided policies for reinforcement learning.
//!
//! A fuzzy rule base gives an action preference for each state; a small
//! learned network refines that preference and PPO trains the combination.

pub mod controller;
pub mod envs;
pub mod error;
pub mod fuzzy;
pub mod policy;
pub mod ppo;
pub mod refine;
pub mod registry;
pub mod ruledsl;
pub mod rules;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
