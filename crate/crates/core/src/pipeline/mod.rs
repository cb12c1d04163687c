//! Comparison-dataset construction: pair sampling, prompts, generation
//! clients, filtering, and record assembly.

pub mod client;
pub mod dataset;
pub mod filter;
pub mod prompt;

pub use client::{truncate_tokens, GenerationClient, HttpClient, HttpClientConfig, RetryPolicy};
pub use dataset::{
    generate_dataset, sample_pairs, usable_only, ComparisonRecord, DifferenceSource, FilterStatus, GenerationOptions,
    RecordSource,
};
pub use filter::{filter_generation, FilterOutcome, RejectReason, TruncationRule};
pub use prompt::{build_prompt, PromptStyle};
