//! A seeded synthetic attribute world with known ground truth.
//!
//! Each item has one value per attribute slot (size, color, kind). Its image
//! embedding is `normalize(G * onehot(attributes) + sigma * noise)` where `G`
//! has orthonormal columns, so at `sigma = 0` embedding differences are exact
//! attribute-difference directions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{normalize, Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::train::encoder::{positional_slot, tokenize, EncoderParams, EncoderSpec};

pub const SIZES: [&str; 2] = ["small", "large"];
pub const COLORS: [&str; 4] = ["red", "blue", "yellow", "green"];
pub const KINDS: [&str; 16] = [
    "cat", "dog", "bird", "fish", "horse", "rabbit", "frog", "bear", "lion", "mouse", "sheep", "cow", "duck", "owl",
    "wolf", "fox",
];

/// Returned by [`oracle_difference`] when two items share every attribute.
pub const EMPTY_DIFFERENCE: &str = "The two images have the same attributes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorldConfig {
    pub n_items: usize,
    pub n_kinds: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig { n_items: 100, n_kinds: 5, dim: 32, noise_sigma: 0.05, seed: 0 }
    }
}

impl ToyWorldConfig {
    pub fn n_slots(&self) -> usize {
        SIZES.len() + COLORS.len() + self.n_kinds
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_kinds == 0 || self.n_kinds > KINDS.len() {
            return Err(Error::Config(format!("n_kinds must be in 1..={}, got {}", KINDS.len(), self.n_kinds)));
        }
        if self.dim < self.n_slots() {
            return Err(Error::Config(format!(
                "dim {} is smaller than the {} attribute slots",
                self.dim,
                self.n_slots()
            )));
        }
        if !(0.0..1.0).contains(&self.noise_sigma) {
            return Err(Error::Config(format!("noise_sigma must be in [0, 1), got {}", self.noise_sigma)));
        }
        if self.n_items == 0 {
            return Err(Error::Config("n_items must be positive".into()));
        }
        if self.n_items > 1_000_000 {
            return Err(Error::Config("n_items above 1e6 is not supported".into()));
        }
        Ok(())
    }
}

/// Indices into [`SIZES`], [`COLORS`], [`KINDS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Attributes {
    pub size: usize,
    pub color: usize,
    pub kind: usize,
}

impl Attributes {
    pub fn values(&self) -> [&'static str; 3] {
        [SIZES[self.size], COLORS[self.color], KINDS[self.kind]]
    }

    /// Column indices of `G` that are active for these attributes.
    pub fn slots(&self) -> [usize; 3] {
        [self.size, SIZES.len() + self.color, SIZES.len() + COLORS.len() + self.kind]
    }

    pub fn caption(&self) -> String {
        let [size, color, kind] = self.values();
        format!("a photo of a {size}, {color} {kind}")
    }

    pub fn from_values(values: &[String]) -> Result<Self> {
        let find = |list: &[&str], v: &str| {
            list.iter().position(|x| *x == v).ok_or_else(|| Error::Data(format!("unknown attribute value {v:?}")))
        };
        match values {
            [s, c, k] => Ok(Attributes { size: find(&SIZES, s)?, color: find(&COLORS, c)?, kind: find(&KINDS, k)? }),
            _ => Err(Error::Data(format!("expected 3 attribute values, got {}", values.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyItem {
    pub id: String,
    pub attributes: Attributes,
    pub caption: String,
}

/// One line of the world dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub attributes: Vec<String>,
    pub caption: String,
}

impl From<&ToyItem> for ItemRecord {
    fn from(item: &ToyItem) -> Self {
        ItemRecord {
            id: item.id.clone(),
            attributes: item.attributes.values().iter().map(|s| s.to_string()).collect(),
            caption: item.caption.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: ToyWorldConfig,
    pub items: Vec<ToyItem>,
    pub images: EmbeddingTable,
    /// Orthonormal columns of the ground-truth mixing matrix, one per slot.
    pub mixing: Vec<Embedding>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gram-Schmidt (two passes) over seeded Gaussian columns.
fn orthonormal_columns(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Result<Vec<Embedding>> {
    let mut cols: Vec<Embedding> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c.as_slice()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c.as_slice()).for_each(|(a, b)| *a -= p * b);
            }
        }
        cols.push(normalize(&Embedding::new(v)?)?);
    }
    Ok(cols)
}

pub fn generate_world(config: &ToyWorldConfig) -> Result<ToyWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mixing = orthonormal_columns(&mut rng, config.dim, config.n_slots())?;
    let mut items = Vec::with_capacity(config.n_items);
    let mut rows = Vec::with_capacity(config.n_items);
    for i in 0..config.n_items {
        let attributes = Attributes {
            size: rng.random_range(0..SIZES.len()),
            color: rng.random_range(0..COLORS.len()),
            kind: rng.random_range(0..config.n_kinds),
        };
        let mut v = vec![0.0; config.dim];
        for s in attributes.slots() {
            v.iter_mut().zip(mixing[s].as_slice()).for_each(|(a, b)| *a += b);
        }
        for a in v.iter_mut() {
            *a += config.noise_sigma * gaussian(&mut rng);
        }
        rows.push(normalize(&Embedding::new(v)?)?);
        items.push(ToyItem { id: format!("item-{i:04}"), caption: attributes.caption(), attributes });
    }
    let ids = items.iter().map(|it| it.id.clone()).collect();
    let images = EmbeddingTable::from_rows(ids, &rows, true)?;
    Ok(ToyWorld { config: config.clone(), items, images, mixing })
}

/// Per-slot values held by `first` but not `second`, and vice versa.
pub fn attribute_difference<S: AsRef<str>>(first: &[S], second: &[S]) -> (Vec<String>, Vec<String>) {
    let mut only_first = Vec::new();
    let mut only_second = Vec::new();
    for (a, b) in first.iter().zip(second) {
        if a.as_ref() != b.as_ref() {
            only_first.push(a.as_ref().to_owned());
            only_second.push(b.as_ref().to_owned());
        }
    }
    (only_first, only_second)
}

/// "The first image has attributes of {A1}, while the second image has
/// attributes of {A2}", lists comma-joined.
pub fn difference_sentence(only_first: &[String], only_second: &[String]) -> String {
    format!(
        "The first image has attributes of {}, while the second image has attributes of {}",
        only_first.join(", "),
        only_second.join(", ")
    )
}

/// Slot-wise difference text for two attribute-value lists, skipping any
/// value in `excluded`. Falls back to [`EMPTY_DIFFERENCE`].
pub fn attribute_difference_text<S: AsRef<str>>(first: &[S], second: &[S], excluded: &[String]) -> String {
    let (mut a, mut b) = attribute_difference(first, second);
    a.retain(|v| !excluded.contains(v));
    b.retain(|v| !excluded.contains(v));
    if a.is_empty() && b.is_empty() {
        return EMPTY_DIFFERENCE.to_owned();
    }
    difference_sentence(&a, &b)
}

/// Template difference text between two toy items.
pub fn oracle_difference(a: &ToyItem, b: &ToyItem) -> String {
    attribute_difference_text(&a.attributes.values(), &b.attributes.values(), &[])
}

/// Words of the fixed templates used with the toy world.
const TEMPLATE_WORDS: &str = "the first image has attributes of while second two images have same \
    a photo an contains larger smaller animal flower is";

impl ToyWorld {
    pub fn item(&self, id: &str) -> Option<&ToyItem> {
        self.images.position(id).map(|i| &self.items[i])
    }

    pub fn records(&self) -> Vec<ItemRecord> {
        self.items.iter().map(ItemRecord::from).collect()
    }

    /// All attribute values with their mixing column.
    pub fn slot_names(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        for (i, s) in SIZES.iter().enumerate() {
            out.push((*s, i));
        }
        for (i, c) in COLORS.iter().enumerate() {
            out.push((*c, SIZES.len() + i));
        }
        for (i, k) in KINDS.iter().take(self.config.n_kinds).enumerate() {
            out.push((*k, SIZES.len() + COLORS.len() + i));
        }
        out
    }

    /// Noise-free image direction `normalize(G * onehot)`.
    pub fn clean_embedding(&self, attributes: &Attributes) -> Result<Embedding> {
        let mut v = Embedding::zeros(self.config.dim);
        for s in attributes.slots() {
            v = v.try_add(&self.mixing[s])?;
        }
        normalize(&v)
    }

    /// Hand-built encoder that maps the toy templates exactly onto the world
    /// geometry: attribute words in the first position bucket encode `+G e_k`,
    /// in later buckets `-G e_k`; every other word encodes to zero.
    ///
    /// Captions and class prompts therefore encode to their clean image
    /// direction, and difference sentences to the attribute-difference
    /// direction.
    pub fn ground_truth_encoder(&self, vocab: usize) -> Result<EncoderParams> {
        let spec = EncoderSpec {
            vocab,
            token_dim: self.config.dim,
            hidden: Vec::new(),
            dim: self.config.dim,
            bucket_width: 12,
            n_buckets: 2,
        };
        let mut p = EncoderParams::zeros(spec)?;
        let d = self.config.dim;
        for o in 0..d {
            p.layers[0].weight[o * d + o] = 1.0;
        }
        let mut used = std::collections::HashMap::new();
        for (name, slot) in self.slot_names() {
            for bucket in 0..2 {
                let row = positional_slot(name, bucket, vocab);
                if let Some(prev) = used.insert(row, name) {
                    return Err(Error::Config(format!(
                        "hash collision between {prev:?} and {name:?} at vocab {vocab}"
                    )));
                }
                let sign = if bucket == 0 { 1.0 } else { -1.0 };
                let col = self.mixing[slot].as_slice();
                for k in 0..d {
                    p.position_table[row * d + k] = sign * col[k];
                }
            }
        }
        for w in tokenize(TEMPLATE_WORDS) {
            for bucket in 0..2 {
                if let Some(name) = used.get(&positional_slot(&w, bucket, vocab)) {
                    return Err(Error::Config(format!("template word {w:?} collides with {name:?} at vocab {vocab}")));
                }
            }
        }
        Ok(p)
    }

    /// Writes `<stem>.jsonl` (items) and `<stem>.embt` (image embeddings).
    pub fn dump(&self, items_path: &Path, images_path: &Path) -> Result<()> {
        write_jsonl(items_path, &self.records())?;
        self.images.write(images_path)
    }
}

pub fn read_items(path: &Path) -> Result<Vec<ItemRecord>> {
    read_jsonl(path)
}
