//! Pairwise-difference alignment for vision-language embeddings.
//!
//! The crate builds datasets of textual differences between captioned items,
//! finetunes a small text encoder so that differences of (frozen) image
//! embeddings line up with the embeddings of those difference texts, and
//! provides the inference and evaluation machinery that uses the aligned
//! space: difference-based classification, comparative prompting, and
//! localization metrics.
//!
//! Everything runs against a seeded synthetic attribute world
//! ([`toyworld`]) so the geometric claims can be checked with closed-form
//! oracles.

pub mod cli;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod pipeline;
pub mod toyworld;
pub mod train;

pub use embed::{cosine_distance, cosine_similarity, normalize, Embedding, EmbeddingTable};
pub use error::{Error, Result};
