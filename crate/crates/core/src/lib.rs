//! Bayesian network student models for computerized adaptive testing.
//!
//! The crate covers the whole pipeline: building candidate network
//! structures for a test ([`zoo`]), learning their parameters with EM when
//! skills are latent ([`learning`]), running adaptive tests that pick the
//! question with the largest expected information gain ([`session`]), and
//! comparing structures by cross-validated answer-prediction success ratios
//! ([`evaluation`]). [`data`] holds the dataset schema and a synthetic
//! generator.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod learning;
pub mod network;
pub mod session;
pub mod zoo;

pub use error::{Error, Result};
pub use inference::{log_likelihood, posterior_marginals, InferenceEngine, LogLikelihood};
pub use network::{Cpt, Distribution, Evidence, Network, Role, Scale, Variable, Violation};
