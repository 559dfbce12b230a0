//! Experiment runner for `gammacell-core`: TOML configs, a rayon worker
//! pool, an on-disk result cache, CSV/JSON reports, SVG plots and the
//! `gammacell` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod plot;
pub mod pool;
pub mod report;
pub mod xp;

pub use config::Config;
pub use error::{Error, Result};
pub use pool::Pool;
pub use report::{Report, Row};
pub use xp::{Command, Runner};
