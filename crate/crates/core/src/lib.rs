//! Stochastic economic dispatch under wind uncertainty.
//!
//! Four chance-constraint formulations (CC, WCC, LDT-CC, LDT-WCC), dual-based
//! energy and reserve prices, a DC-network variant with LMPs, and a Monte-Carlo
//! harness for out-of-sample cost.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convexcore;
pub mod cuttingplane;
pub mod error;
pub mod evaluate;
pub mod formulations;
pub mod model;
pub mod network;
pub mod pricing;
pub mod probkit;

pub use error::{Error, Result};
