#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cqed;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod oracles;
pub mod quantum;
pub mod runner;
pub mod tomography;

pub use error::{Error, Result};
