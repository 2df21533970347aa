//! Early-warning pipeline for circulatory failure in ICU time series.
//!
//! Stages: [`clean`] → [`impute`] → [`endpoint`] → [`features`] (with
//! [`shapelets`]) → [`model`] → [`alarm`]. [`synth`] generates cohorts with
//! known ground truth and [`pipeline`] wires the stages to files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alarm;
pub mod binfmt;
pub mod catalog;
pub mod clean;
pub mod error;
pub mod endpoint;
pub mod features;
pub mod grid;
pub mod impute;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod records;
pub mod rng;
pub mod shapelets;
pub mod stats;
pub mod synth;
pub mod time;

pub use error::{Error, Result};
