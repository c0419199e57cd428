//! Desk-scale lab for linear-encoder MIMO channel prediction: a Jakes
//! channel simulator with LS/MMSE estimation, a minimal reverse-mode
//! autodiff engine, a TMLP-mixer encoder (with an attention baseline),
//! and the training / evaluation harness around them.

pub mod autodiff;
pub mod channel_sim;
pub mod config;
pub mod error;
pub mod eval;
pub mod format;
pub mod model;
pub mod plot;
pub mod training;

pub use error::{LabError, Result};
