#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Model selection for transition densities of controlled Markov chains with
//! penalized histograms on dyadic partitions.

pub mod density;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod histogram;
pub mod losses;
pub mod numeric;
pub mod occupation;
pub mod selector;
pub mod simulators;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
