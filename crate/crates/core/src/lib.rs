//! Detecting and correcting the sequence-length artifact of mean-pooled
//! cosine similarity.
//!
//! Under anisotropic representations (token states scattered around a shared
//! direction), the cosine between mean-pooled vectors grows with the lengths
//! of the pooled sequences regardless of content. This crate provides the
//! closed-form prediction of that effect, a model-free synthetic check,
//! length-invariant matrix metrics (linear CKA, RV), and a confound-regression
//! audit over externally extracted activations.

pub mod align;
pub mod audit;
pub mod bundle;
pub mod error;
pub mod metrics;
pub mod report;
pub mod repr;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod theory;

pub use error::{BundleError, Error, Result};
pub use metrics::Metric;
pub use repr::{LayerRange, PooledVector, TokenMatrix};
pub use theory::{AnisotropyParams, LengthPair};
