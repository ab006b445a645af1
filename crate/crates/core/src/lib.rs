//! Adversarial authorship obfuscation at desk scale.
//!
//! A sequence-to-sequence Transformer rewrites sentences in a
//! style-neutral way. It is trained against a Siamese convolutional style
//! critic (Wasserstein objective with gradient penalty) and a per-token GRU
//! fluency critic, with a pooled-embedding content score keeping the output
//! close to the input. The crate also ships the data pipeline, two
//! word-substitution baselines, and the evaluation harness (attack
//! classifiers, perplexity, BLEU, embedding F-score) for closed-set and
//! open-set protocols.

pub mod adversaries;
pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod generator;
pub mod numerics;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
