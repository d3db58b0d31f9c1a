//! Micromodes of Student-t location posteriors under heavy-tailed data,
//! and Zig-Zag exit times from them.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod heavytail;
pub mod micromode;
pub mod posterior;
pub mod rng;
pub mod stats;
pub mod zigzag;

pub use error::{Error, Result};
pub use heavytail::{DataConfig, Dataset};
pub use micromode::{Detection, Micromode};
pub use posterior::Model;
