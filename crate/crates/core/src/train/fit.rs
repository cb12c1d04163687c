//! SGD finetuning loop with an exponential learning-rate schedule.

use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{normalize, Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::pipeline::ComparisonRecord;
use crate::train::encoder::{EncoderParams, Tokenized};
use crate::train::loss::{batch_loss, LossKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr: f64,
    pub lr_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Threads sharing each batch's forward and backward passes.
    pub workers: usize,
    /// When false the position table is left untouched.
    pub train_positional: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 1.0,
            lr: 10.0,
            lr_gamma: 0.9,
            epochs: 20,
            batch_size: 512,
            loss: LossKind::Contrastive,
            seed: 0,
            workers: 1,
            train_positional: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::Config(format!("lr_gamma must be in (0, 1], got {}", self.lr_gamma)));
        }
        if self.batch_size == 0 || (self.loss == LossKind::Contrastive && self.batch_size < 2) {
            return Err(Error::Config(format!("batch_size {} too small for {} loss", self.batch_size, self.loss)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `k` (0-based): `lr * gamma^k`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi(epoch as i32)
    }
}

/// One training example: a frozen image-side target and its text.
#[derive(Debug, Clone)]
pub struct TrainRow {
    pub target: Embedding,
    pub tokens: Tokenized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub rows: usize,
    /// Rows dropped because the two image embeddings coincide.
    pub skipped_zero_difference: usize,
    pub workers: usize,
}

/// Loss and summed parameter gradient for one batch.
///
/// With `workers > 1` the rows are split into contiguous shards; shard
/// gradients are reduced in shard order, so results depend only on the
/// worker count.
pub fn batch_gradient(
    params: &EncoderParams,
    targets: &[&Embedding],
    tokens: &[&Tokenized],
    kind: LossKind,
    tau: f64,
    workers: usize,
) -> Result<(f64, EncoderParams)> {
    let n = targets.len();
    let shards = shard_ranges(n, workers.max(1));

    let forward: Vec<Result<Vec<_>>> = if shards.len() == 1 {
        vec![tokens.iter().map(|t| params.forward(t)).collect()]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = shards
                .iter()
                .map(|r| {
                    let toks = &tokens[r.clone()];
                    s.spawn(move || toks.iter().map(|t| params.forward(t)).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("forward worker panicked")).collect()
        })
    };
    let mut caches = Vec::with_capacity(n);
    for shard in forward {
        caches.extend(shard?);
    }

    let ys: Vec<Embedding> = caches.iter().map(|c| Embedding::new(c.output.clone())).collect::<Result<_>>()?;
    let xs: Vec<Embedding> = targets.iter().map(|&x| x.clone()).collect();
    let out = batch_loss(kind, &xs, &ys, tau)?;

    let backward_shard = |range: std::ops::Range<usize>| {
        let mut g = params.zeros_like();
        for i in range {
            params.backward(tokens[i], &caches[i], &out.grad_y[i], &mut g);
        }
        g
    };
    let mut partials: Vec<EncoderParams> = if shards.len() == 1 {
        vec![backward_shard(0..n)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = shards.iter().map(|r| s.spawn(|| backward_shard(r.clone()))).collect();
            handles.into_iter().map(|h| h.join().expect("backward worker panicked")).collect()
        })
    };
    let mut total = partials.remove(0);
    for p in &partials {
        for (dst, src) in total.tensors_mut().into_iter().zip(p.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    Ok((out.loss, total))
}

fn shard_ranges(n: usize, workers: usize) -> Vec<std::ops::Range<usize>> {
    let w = workers.min(n.max(1));
    let base = n / w;
    let extra = n % w;
    let mut start = 0;
    (0..w)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Runs `cfg.epochs` epochs of minibatch SGD over `rows`.
pub fn fit_rows(mut params: EncoderParams, rows: &[TrainRow], cfg: &TrainConfig) -> Result<(EncoderParams, TrainLog)> {
    cfg.validate()?;
    for r in rows {
        if r.target.dim() != params.dim() {
            return Err(Error::dim(params.dim(), r.target.dim()));
        }
    }
    let mut log = TrainLog { rows: rows.len(), workers: cfg.workers, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let min_batch = if cfg.loss == LossKind::Contrastive { 2 } else { 1 };

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            let targets: Vec<&Embedding> = chunk.iter().map(|&i| &rows[i].target).collect();
            let tokens: Vec<&Tokenized> = chunk.iter().map(|&i| &rows[i].tokens).collect();
            let (loss, mut grad) =
                batch_gradient(&params, &targets, &tokens, cfg.loss, cfg.tau, cfg.workers).map_err(|e| match e {
                    // Weights that overflowed on the previous step.
                    Error::Normalization(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
                    e => e,
                })?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {}",
                    losses.len()
                )));
            }
            if !cfg.train_positional {
                grad.position_table.iter_mut().for_each(|g| *g = 0.0);
            }
            for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                for (w, d) in p.iter_mut().zip(g) {
                    *w -= lr * d;
                }
            }
            if !params.is_finite() {
                return Err(Error::Numerical(format!("parameters became non-finite at epoch {epoch}")));
            }
            losses.push(loss);
        }
        let mean_loss = if losses.is_empty() { f64::NAN } else { losses.iter().sum::<f64>() / losses.len() as f64 };
        log.epochs.push(EpochLog { epoch, mean_loss, lr });
    }
    Ok((params, log))
}

/// Builds training rows `normalize(g(a) - g(b))` paired with the record's
/// difference text. Only usable (accepted or truncated) records are used.
pub fn difference_rows(
    params: &EncoderParams,
    records: &[ComparisonRecord],
    images: &EmbeddingTable,
) -> Result<(Vec<TrainRow>, usize)> {
    let usable: Vec<&ComparisonRecord> = records.iter().filter(|r| r.is_usable()).collect();
    for r in &usable {
        for id in [&r.id_a, &r.id_b] {
            if images.position(id).is_none() {
                return Err(Error::Data(format!("record id {id:?} not in image table")));
            }
        }
    }
    let mut rows = Vec::with_capacity(usable.len());
    let mut skipped = 0;
    for r in usable {
        let diff = images.require(&r.id_a)?.try_sub(&images.require(&r.id_b)?)?;
        let target = match normalize(&diff) {
            Ok(t) => t,
            Err(Error::Normalization(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let tokens = params.tokenize(&r.difference_text);
        if tokens.is_empty() {
            return Err(Error::Data(format!("record ({}, {}) has no tokens", r.id_a, r.id_b)));
        }
        rows.push(TrainRow { target, tokens });
    }
    Ok((rows, skipped))
}

/// Finetunes the text encoder on pairwise difference records. The image
/// table is read-only.
pub fn fit(
    params: EncoderParams,
    records: &[ComparisonRecord],
    images: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainLog)> {
    cfg.validate()?;
    let (rows, skipped) = difference_rows(&params, records, images)?;
    let (params, mut log) = fit_rows(params, &rows, cfg)?;
    log.skipped_zero_difference = skipped;
    Ok((params, log))
}

/// Standard caption alignment (`g(I_i)` against `f(T_i)`), used to give the
/// toy encoder a pretrained starting point before difference finetuning.
pub fn fit_captions(
    params: EncoderParams,
    captions: &[(String, String)],
    images: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainLog)> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(captions.len());
    for (id, caption) in captions {
        let target = normalize(&images.require(id)?)?;
        let tokens = params.tokenize(caption);
        if tokens.is_empty() {
            return Err(Error::Data(format!("caption of {id:?} has no tokens")));
        }
        rows.push(TrainRow { target, tokens });
    }
    fit_rows(params, &rows, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_exponential() {
        let cfg = TrainConfig { lr: 0.5, lr_gamma: 0.9, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 0.5);
        assert_eq!(cfg.lr_at(3), 0.5 * 0.9f64.powi(3));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let ok = TrainConfig { batch_size: 1, loss: LossKind::Mse, ..Default::default() };
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { lr_gamma: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn shards_cover_range() {
        assert_eq!(shard_ranges(10, 3), vec![0..4, 4..7, 7..10]);
        assert_eq!(shard_ranges(2, 8), vec![0..1, 1..2]);
    }
}
