//! Detecting semantic-segmentation errors by comparing an image with a
//! re-synthesis of its predicted segmentation.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod models;
pub mod nn;
pub mod patches;
pub mod rng;
pub mod store;
pub mod toyworld;
pub mod training;

pub use error::{Error, ErrorKind, Result};
