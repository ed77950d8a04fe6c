//! Variational Laplace: fixed-point iteration, model catalogue, asymptotic
//! diagnostics and a seeded experiment harness.

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod harness;
pub mod models;
pub mod numkit;
pub mod vl;

pub use error::{Error, Result};
