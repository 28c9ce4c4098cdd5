//! Permuted negative-binomial score tests for differential expression.
//!
//! The crate fits a null NB GLM per gene, evaluates score statistics for the
//! observed and permuted treatment vectors with a fast precomputed kernel,
//! and calibrates them by permutation, optionally with anytime-valid
//! adaptive stopping under Benjamini-Hochberg FDR control.

pub mod adaptive;
pub mod analysis;
pub mod benchmark;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod perm;
pub mod rng;
pub mod score;
pub mod sim;
pub mod special;
pub mod theory;
pub mod treatment;
pub mod wald;

pub use error::{Error, Result};
