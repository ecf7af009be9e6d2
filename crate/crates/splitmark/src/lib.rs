//! Split-learning model fingerprinting: embed adversarial-example
//! fingerprints into a client/server-partitioned model during training and
//! verify ownership later through the fingerprint verification success rate
//! (FVSR), even against label-inference and pruning adversaries.
//!
//! The crate is organized around the lifecycle of a fingerprinted model:
//!
//! - [`engine`] — a small differentiable NN engine (dense/conv/relu/pool
//!   layers, softmax cross-entropy, SGD) with input gradients for FGSM.
//! - [`data`] — MNIST IDX ingestion, synthetic corpora and seeded batching.
//! - [`wire`] / [`transport`] / [`protocol`] — the split-learning session:
//!   framed messages carrying smashed data and split-layer gradients over an
//!   in-process channel or TCP, in the three classic SplitNN topologies, with
//!   an optional eavesdropper tap.
//! - [`fingerprint`] — FGSM fingerprint generation and dataset injection.
//! - [`trainer`] — training orchestration, verification and metrics.
//! - [`attack`] — the adversary suite: gradient-matching label inference,
//!   model stealing and magnitude pruning.
//! - [`report`] / [`config`] / [`runner`] — experiment configs, manifests and
//!   CSV/JSON reports behind the `splitmark` command-line tool.
//!
//! ## Runnable examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release -p splitmark --example train_split
//! cargo run --release -p splitmark --example embed_fingerprints
//! cargo run --release -p splitmark --example topologies
//! cargo run --release -p splitmark --example tcp_session
//! cargo run --release -p splitmark --example label_inference
//! cargo run --release -p splitmark --example pruning_attack
//! cargo run --release -p splitmark --example mnist_pipeline
//! ```

pub mod attack;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod fingerprint;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod trainer;
pub mod transport;
pub mod wire;

pub use error::{Error, Result};
