//! Compile-time features for steering fuzzers toward vulnerability-prone code.
//!
//! The pipeline parses textual LLVM IR ([`ir`]), builds control-flow and call
//! graphs ([`graphs`]), turns every function and basic block into a row of
//! counts ([`features`]), stores those rows as semicolon-separated tables
//! ([`dataset`]), and trains two binary classifiers on them: a gradient
//! boosted tree ensemble ([`gbdt`]) and a small feedforward network
//! ([`dnn`]). [`metrics`] and [`tuning`] evaluate and select models.

pub mod dataset;
pub mod dnn;
pub mod features;
pub mod gbdt;
pub mod graphs;
pub mod ir;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod toy;
pub mod tuning;

pub use dataset::{FeatureProfile, FeatureTable, TableKind};
pub use model::{AnyModel, Classifier, ModelError};
