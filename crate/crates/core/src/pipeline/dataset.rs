//! Pair sampling and comparison-dataset assembly.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::client::{truncate_tokens, GenerationClient, RetryPolicy};
use crate::pipeline::filter::{filter_generation, FilterOutcome, RejectReason, TruncationRule};
use crate::pipeline::prompt::{build_prompt, PromptStyle};
use crate::toyworld::{attribute_difference_text, ItemRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    Llm,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FilterStatus {
    Accepted,
    Rejected { reason: RejectReason },
    Truncated { rule: TruncationRule },
}

/// One ordered pair with its difference text. `(a, b)` and `(b, a)` are
/// distinct records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub id_a: String,
    pub id_b: String,
    pub caption_a: String,
    pub caption_b: String,
    /// Cleaned text for usable records; the raw generation for rejected ones.
    pub difference_text: String,
    pub source: RecordSource,
    pub filter_status: FilterStatus,
}

impl ComparisonRecord {
    /// Accepted or truncated-then-accepted.
    pub fn is_usable(&self) -> bool {
        !matches!(self.filter_status, FilterStatus::Rejected { .. })
    }
}

pub fn usable_only(records: &[ComparisonRecord]) -> Vec<ComparisonRecord> {
    records.iter().filter(|r| r.is_usable()).cloned().collect()
}

/// Samples `n_source` ids without replacement and emits every ordered pair
/// of them, in lexicographic order of sampled position.
pub fn sample_pairs(ids: &[String], n_source: usize, seed: u64) -> Result<Vec<(String, String)>> {
    if n_source > ids.len() {
        return Err(Error::Config(format!("n_source {n_source} exceeds the {} available ids", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<&String> = index::sample(&mut rng, ids.len(), n_source).into_iter().map(|i| &ids[i]).collect();
    let mut pairs = Vec::with_capacity(n_source * n_source.saturating_sub(1));
    for (p, a) in picked.iter().enumerate() {
        for (q, b) in picked.iter().enumerate() {
            if p != q {
                pairs.push(((*a).clone(), (*b).clone()));
            }
        }
    }
    Ok(pairs)
}

pub enum DifferenceSource<'a> {
    /// Template differences computed from item attributes.
    Oracle,
    Client(&'a dyn GenerationClient),
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationOptions {
    pub style: PromptStyle,
    pub max_inflight: usize,
    pub max_tokens: usize,
    pub retry: RetryPolicy,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions { style: PromptStyle::Coco, max_inflight: 4, max_tokens: 80, retry: RetryPolicy::default() }
    }
}

fn assemble(a: &ItemRecord, b: &ItemRecord, raw: Option<String>, source: RecordSource) -> ComparisonRecord {
    let (difference_text, filter_status) = match raw {
        None => (String::new(), FilterStatus::Rejected { reason: RejectReason::Transport }),
        Some(raw) => match filter_generation(&raw) {
            FilterOutcome::Accept { text, truncated: None } => (text, FilterStatus::Accepted),
            FilterOutcome::Accept { text, truncated: Some(rule) } => (text, FilterStatus::Truncated { rule }),
            FilterOutcome::Reject(reason) => (raw, FilterStatus::Rejected { reason }),
        },
    };
    ComparisonRecord {
        id_a: a.id.clone(),
        id_b: b.id.clone(),
        caption_a: a.caption.clone(),
        caption_b: b.caption.clone(),
        difference_text,
        source,
        filter_status,
    }
}

/// Produces one record per pair, in input order. Transport failures after
/// the retry budget become `rejected(transport)` records.
pub fn generate_dataset(
    source: &DifferenceSource<'_>,
    items: &[ItemRecord],
    pairs: &[(String, String)],
    opts: &GenerationOptions,
) -> Result<Vec<ComparisonRecord>> {
    if pairs.is_empty() {
        return Err(Error::Config("no pairs to generate".into()));
    }
    let by_id: HashMap<&str, &ItemRecord> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let resolved: Vec<(&ItemRecord, &ItemRecord)> = pairs
        .iter()
        .map(|(a, b)| {
            let get = |id: &String| {
                by_id.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("unknown item id {id:?}")))
            };
            Ok((get(a)?, get(b)?))
        })
        .collect::<Result<_>>()?;

    match source {
        DifferenceSource::Oracle => Ok(resolved
            .iter()
            .map(|(a, b)| {
                let text = attribute_difference_text(&a.attributes, &b.attributes, &[]);
                assemble(a, b, Some(text), RecordSource::Synthetic)
            })
            .collect()),
        DifferenceSource::Client(client) => {
            let next = AtomicUsize::new(0);
            let workers = opts.max_inflight.clamp(1, resolved.len());
            let work = || {
                let mut done = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((a, b)) = resolved.get(i) else { break };
                    let prompt = build_prompt(opts.style, &a.caption, &b.caption);
                    let raw = opts
                        .retry
                        .run(|| client.complete(&prompt, opts.max_tokens))
                        .map(|t| truncate_tokens(&t, opts.max_tokens).to_owned());
                    done.push((i, raw));
                }
                done
            };
            let finished: Vec<(usize, Result<String>)> = thread::scope(|s| {
                let handles: Vec<_> = (0..workers).map(|_| s.spawn(work)).collect();
                handles.into_iter().flat_map(|h| h.join().expect("generation worker panicked")).collect()
            });
            let mut raws: Vec<Option<Result<String>>> = (0..resolved.len()).map(|_| None).collect();
            for (i, r) in finished {
                raws[i] = Some(r);
            }
            let mut records = Vec::with_capacity(resolved.len());
            for ((a, b), raw) in resolved.iter().zip(raws) {
                let raw = match raw.expect("every pair is processed") {
                    Ok(t) => Some(t),
                    Err(Error::Transport(_)) => None,
                    Err(e) => return Err(e),
                };
                records.push(assemble(a, b, raw, RecordSource::Llm));
            }
            Ok(records)
        }
    }
}
