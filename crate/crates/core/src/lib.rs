//! Mining forum dumps for threads of interest.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`embedding`] trains a skip-gram word embedding on the forum's own text.
//! 2. [`identify`] picks seed threads by keyword thresholds and expands the set
//!    with threads whose [`threadspace`] projection is close to some seed.
//! 3. [`classify`] assigns relevant threads to user-defined classes with one
//!    class-biased random forest per class, each fed thread projections whose
//!    word vectors are reweighted by the class's softmax affinity.
//!
//! [`metrics`] holds the evaluation harness (stratified k-fold, accuracy,
//! weighted F1, Fleiss kappa).

pub mod classify;
pub mod corpus;
pub mod embedding;
mod error;
pub mod identify;
pub mod metrics;
pub mod preprocess;
pub mod synth;
pub mod threadspace;

pub use error::{Error, Result};
