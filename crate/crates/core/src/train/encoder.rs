//! A small trainable text encoder.
//!
//! Text is lowercased and split on non-alphanumeric characters. Every token
//! contributes two learned rows: a position-free row from the token table and
//! a row from the position table keyed by `(token, coarse position bucket)`.
//! The mean of those rows goes through a tanh MLP whose final layer is linear,
//! and the output is L2-normalized.
//!
//! The position table is zero at initialization, so a freshly initialized
//! encoder is a pure bag of words: it cannot tell "A, while B" from
//! "B, while A" until it is trained on ordered data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};

/// Architecture hyperparameters; two encoders are shape-compatible iff their
/// specs are equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// Hash space size for both tables.
    pub vocab: usize,
    pub token_dim: usize,
    /// Hidden layer widths (tanh). Empty means a single linear projection.
    pub hidden: Vec<usize>,
    /// Output embedding dimension.
    pub dim: usize,
    /// Tokens per position bucket.
    pub bucket_width: usize,
    pub n_buckets: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec { vocab: 4096, token_dim: 32, hidden: Vec::new(), dim: 32, bucket_width: 12, n_buckets: 2 }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.token_dim == 0 || self.dim == 0 {
            return Err(Error::Config("encoder vocab, token_dim and dim must be positive".into()));
        }
        if self.bucket_width == 0 || self.n_buckets == 0 {
            return Err(Error::Config("bucket_width and n_buckets must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.vocab > u32::MAX as usize {
            return Err(Error::Config("vocab does not fit in 32 bits".into()));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of each layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.token_dim];
        widths.extend(&self.hidden);
        widths.push(self.dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn bucket(&self, position: usize) -> usize {
        (position / self.bucket_width).min(self.n_buckets - 1)
    }
}

/// Dense affine layer; `weight` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// All trainable parameters of the text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub spec: EncoderSpec,
    /// `vocab x token_dim`, row-major.
    pub token_table: Vec<f64>,
    /// `vocab x token_dim`, row-major, keyed by `(token, bucket)`.
    pub position_table: Vec<f64>,
    pub layers: Vec<Layer>,
}

/// Hashed feature rows for one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub unigram: Vec<usize>,
    pub positional: Vec<usize>,
}

impl Tokenized {
    pub fn len(&self) -> usize {
        self.unigram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unigram.is_empty()
    }
}

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

pub fn unigram_slot(token: &str, vocab: usize) -> usize {
    (fnv1a(&[token.as_bytes()]) % vocab as u64) as usize
}

pub fn positional_slot(token: &str, bucket: usize, vocab: usize) -> usize {
    let b = (bucket as u32).to_le_bytes();
    (fnv1a(&[token.as_bytes(), &[0xff], &b]) % vocab as u64) as usize
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `acts[0]` is the pooled token feature.
    acts: Vec<Vec<f64>>,
    norm: f64,
    pub output: Vec<f64>,
}

impl EncoderParams {
    /// Gaussian token rows, scaled Gaussian weights, zero biases, and an
    /// all-zero position table.
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let token_table = (0..spec.vocab * spec.token_dim).map(|_| unit.sample(&mut rng)).collect();
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let s = 1.0 / (i as f64).sqrt();
                let mut l = Layer::zeros(i, o);
                l.weight.iter_mut().for_each(|w| *w = s * unit.sample(&mut rng));
                l
            })
            .collect();
        Ok(EncoderParams { position_table: vec![0.0; spec.vocab * spec.token_dim], token_table, layers, spec })
    }

    /// Same shapes, every parameter zero. Also used as a gradient buffer.
    pub fn zeros(spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_shapes().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(EncoderParams {
            token_table: vec![0.0; spec.vocab * spec.token_dim],
            position_table: vec![0.0; spec.vocab * spec.token_dim],
            layers,
            spec,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.spec.clone()).expect("spec already validated")
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Flat views of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = vec![&self.token_table, &self.position_table];
        for l in &self.layers {
            t.push(&l.weight);
            t.push(&l.bias);
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = vec![&mut self.token_table, &mut self.position_table];
        for l in &mut self.layers {
            t.push(&mut l.weight);
            t.push(&mut l.bias);
        }
        t
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn tokenize(&self, text: &str) -> Tokenized {
        let toks = tokenize(text);
        let v = self.spec.vocab;
        Tokenized {
            unigram: toks.iter().map(|t| unigram_slot(t, v)).collect(),
            positional: toks.iter().enumerate().map(|(p, t)| positional_slot(t, self.spec.bucket(p), v)).collect(),
        }
    }

    pub fn forward(&self, tok: &Tokenized) -> Result<ForwardCache> {
        if tok.is_empty() {
            return Err(Error::Encode("text has no tokens".into()));
        }
        let d = self.spec.token_dim;
        let mut h0 = vec![0.0; d];
        for (&u, &q) in tok.unigram.iter().zip(&tok.positional) {
            let ur = &self.token_table[u * d..(u + 1) * d];
            let qr = &self.position_table[q * d..(q + 1) * d];
            for k in 0..d {
                h0[k] += ur[k] + qr[k];
            }
        }
        let inv = 1.0 / tok.len() as f64;
        h0.iter_mut().for_each(|v| *v *= inv);

        let mut acts = vec![h0];
        let last = self.layers.len() - 1;
        let mut output = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(acts.last().expect("nonempty"));
            if l == last {
                output = z;
            } else {
                acts.push(z.into_iter().map(f64::tanh).collect());
            }
        }
        let norm = output.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Normalization(format!("encoder output has norm {norm}")));
        }
        output.iter_mut().for_each(|v| *v /= norm);
        Ok(ForwardCache { acts, norm, output })
    }

    /// Accumulates `d loss / d params` into `grads`, given `d loss / d output`
    /// for the normalized output of `cache`.
    pub fn backward(&self, tok: &Tokenized, cache: &ForwardCache, grad_output: &[f64], grads: &mut EncoderParams) {
        let y = &cache.output;
        let proj: f64 = y.iter().zip(grad_output).map(|(a, b)| a * b).sum();
        let mut dz: Vec<f64> = grad_output.iter().zip(y).map(|(g, yv)| (g - yv * proj) / cache.norm).collect();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.acts[l];
            let g = &mut grads.layers[l];
            for o in 0..layer.outputs {
                g.bias[o] += dz[o];
                let row = &mut g.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += dz[o] * x;
                }
            }
            let mut dx = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += dz[o] * w;
                }
            }
            if l > 0 {
                // input of layer l is tanh(z_{l-1})
                for (d, a) in dx.iter_mut().zip(input) {
                    *d *= 1.0 - a * a;
                }
            }
            dz = dx;
        }

        let d = self.spec.token_dim;
        let inv = 1.0 / tok.len() as f64;
        for (&u, &q) in tok.unigram.iter().zip(&tok.positional) {
            for k in 0..d {
                grads.token_table[u * d + k] += dz[k] * inv;
                grads.position_table[q * d + k] += dz[k] * inv;
            }
        }
    }

    pub fn encode_tokens(&self, tok: &Tokenized) -> Result<Embedding> {
        Embedding::new(self.forward(tok)?.output)
    }
}

/// Encodes `text` to a unit-norm embedding.
pub fn encode_text(params: &EncoderParams, text: &str) -> Result<Embedding> {
    let tok = params.tokenize(text);
    if tok.is_empty() {
        return Err(Error::Encode(format!("no tokens in {text:?}")));
    }
    params.encode_tokens(&tok)
}

/// Elementwise mean of two shape-identical encoders.
pub fn ensemble_weights(a: &EncoderParams, b: &EncoderParams) -> Result<EncoderParams> {
    if a.spec != b.spec {
        return Err(Error::Dim { expected: a.param_count(), got: b.param_count() });
    }
    let mut out = a.clone();
    for (dst, src) in out.tensors_mut().into_iter().zip(b.tensors()) {
        for (x, y) in dst.iter_mut().zip(src) {
            *x = (*x + y) / 2.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_spec() -> EncoderSpec {
        EncoderSpec { vocab: 64, token_dim: 8, hidden: vec![12], dim: 6, bucket_width: 3, n_buckets: 2 }
    }

    #[test]
    fn tokenizer_folds_case_and_splits() {
        assert_eq!(tokenize("Cat, DOG!x-1"), vec!["cat", "dog", "x", "1"]);
        assert!(tokenize(" ,;  ").is_empty());
    }

    #[test]
    fn encode_is_deterministic_and_case_insensitive() {
        let p = EncoderParams::init(EncoderSpec::default(), 3).unwrap();
        let a = encode_text(&p, "Cat DOG").unwrap();
        assert_eq!(a, encode_text(&p, "cat dog").unwrap());
        assert_eq!(a, encode_text(&p, "Cat DOG").unwrap());
    }

    #[test]
    fn encode_rejects_empty() {
        let p = EncoderParams::init(small_spec(), 0).unwrap();
        assert!(matches!(encode_text(&p, "  ...  "), Err(Error::Encode(_))));
    }

    #[test]
    fn encoded_norm_is_one() {
        let p = EncoderParams::init(small_spec(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let words = ["red", "large", "bird", "while", "the", "second", "a", "photo"];
        for _ in 0..100 {
            let n = rng.random_range(1..12);
            let text: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
            let e = encode_text(&p, &text.join(" ")).unwrap();
            assert!((e.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fresh_encoder_is_bag_of_words() {
        let p = EncoderParams::init(EncoderSpec::default(), 5).unwrap();
        let a = encode_text(&p, "first large cat while second small dog").unwrap();
        let b = encode_text(&p, "first small dog while second large cat").unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_is_elementwise_mean() {
        let p = EncoderParams::init(small_spec(), 1).unwrap();
        assert_eq!(ensemble_weights(&p, &p).unwrap(), p);
        let zero = p.zeros_like();
        let mut double = p.clone();
        double.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v *= 2.0));
        assert_eq!(ensemble_weights(&zero, &double).unwrap(), p);

        let q = EncoderParams::init(small_spec(), 2).unwrap();
        let e = ensemble_weights(&p, &q).unwrap();
        for ((a, b), m) in p.tensors().iter().zip(q.tensors()).zip(e.tensors()) {
            for ((x, y), z) in a.iter().zip(b).zip(m) {
                assert!((z - (x + y) / 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ensemble_rejects_shape_mismatch() {
        let p = EncoderParams::init(small_spec(), 1).unwrap();
        let mut other = small_spec();
        other.hidden = vec![4];
        let q = EncoderParams::init(other, 1).unwrap();
        assert!(matches!(ensemble_weights(&p, &q), Err(Error::Dim { .. })));
    }
}
