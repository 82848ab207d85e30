//! Exemplar selection for in-context learning with cheap *exact* unlearning.
//!
//! The core idea: select k few-shot exemplars by clustering example embeddings
//! with a quantized k-means whose centroids snap to a randomly-phased lattice.
//! Snapping makes the trained model insensitive to most single-example
//! deletions, so a deletion request can be certified stable in time that
//! depends only on the iteration count and dimension — not on the corpus size.
//! When the certificate fails, we retrain from scratch with fresh randomness,
//! which is always exact.
//!
//! Modules:
//! - [`corpus`]: datasets, embeddings, and a deterministic test embedder
//! - [`lattice`]: the randomly-phased quantization lattice
//! - [`qkmeans`]: quantized k-means training, deletion certificates, deletion
//! - [`selectors`]: the three selection strategies and their unlearning rules
//! - [`engine`]: deletion streams, reports, and exactness verification
//! - [`costmodel`]: FLOPS accounting and unlearning/inference break-even
//! - [`snapshot`]: canonical bit-exact model serialization
//! - [`synth`]: seeded synthetic corpora for benchmarks and tests

pub mod corpus;
pub mod costmodel;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod qkmeans;
pub mod rng;
pub mod selectors;
pub mod snapshot;
pub mod synth;

pub use error::{Error, Result};
