//! Matrix-information metrics over feature and weight matrices.
//!
//! Features are `d x N` matrices with one column per sample. Their cosine
//! Gram matrix `G(Z) = ẐᵀẐ` is the object every quantity here is computed on:
//! matrix entropy, matrix mutual information and its ratio (MIR), and the
//! entropy difference ratio (HDR).

pub mod collapse;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{FeatureMatrix, GramMatrix, Spectrum};
