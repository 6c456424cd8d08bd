//! Downstream training and probing machinery for dialogue-level speech
//! features: an on-disk feature store, corpus pooling and sub-dialogue
//! augmentation, a small reverse-mode kernel, single- and multi-task
//! Transformer heads, the training loop, metrics and reports, and a
//! synthetic corpus generator with closed-form oracles.

pub mod corpus;
pub mod evalreport;
pub mod feature_store;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synthgen;
pub mod trainer;
