//! Policy-gradient training of goal-directed recommendation paths over a
//! simulated user.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod error;
pub mod estimators;
pub mod mining;
pub mod oracle;
pub mod policy;
pub mod rewards;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
