//! Config-driven experiment runner: multi-seed training, ablations and
//! curve aggregation on top of `kogun`.

pub mod config;
pub mod error;
pub mod experiment;
