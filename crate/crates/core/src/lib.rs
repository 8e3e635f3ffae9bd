//! Training and evaluation toolkit for generative entity typing with
//! curriculum learning.
//!
//! A small sequence-to-sequence model reads a Hearst-prompted context around
//! an entity mention and generates free-form type phrases. Training units
//! are (instance, type) pairs partitioned by annotation source and type
//! length; the curriculum strategies (staged and self-paced, optionally with
//! prior-knowledge weights) decide which units each epoch trains on. Beam
//! search with confidence thresholding turns the model into a type
//! generator, and the metrics module scores generated types against gold
//! sets and an allowed-types oracle.
//!
//! Everything is deterministic given a seed: corpus synthesis, parameter
//! initialization, batching, decoding, and every serialized artifact.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod curriculum;
pub mod decode;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod prompt;
