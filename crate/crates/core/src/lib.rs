//! Cell-problem homogenization and geometric linearization of multi-well
//! integral functionals.
//!
//! The crate is `no_std` (with `alloc`). Everything here is pure computation:
//! energy densities and their metrics, P1 discretizations of cubes, a
//! limited-memory quasi-Newton minimizer, cell-problem drivers, envelope
//! bounds and rigidity/Korn diagnostics. File formats, caching, the worker
//! pool and the command-line front end live in the `gammacell` crate.
#![no_std]
#![warn(rust_2018_idioms, missing_copy_implementations, unused_qualifications)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod cell;
pub mod density;
pub mod envelope;
mod error;
pub mod exec;
pub mod grid;
pub mod mat;
pub mod minimize;
pub mod rigidity;
mod sum;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use mat::Mat;
