//! Central finite-difference verification of the analytic encoder gradients.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::train::encoder::{EncoderParams, Tokenized};
use crate::train::fit::batch_gradient;
use crate::train::loss::{batch_loss, LossKind};

/// Image-difference targets and the texts they should align with.
#[derive(Debug, Clone)]
pub struct DifferenceBatch {
    pub targets: Vec<Embedding>,
    pub texts: Vec<String>,
    pub pair_ids: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub loss: LossKind,
    pub tau: f64,
    pub eps: f64,
    /// Number of parameters to probe.
    pub n_params: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_index: usize,
}

fn batch_value(
    params: &EncoderParams,
    targets: &[Embedding],
    toks: &[Tokenized],
    kind: LossKind,
    tau: f64,
) -> Result<f64> {
    let ys = toks.iter().map(|t| params.encode_tokens(t)).collect::<Result<Vec<_>>>()?;
    Ok(batch_loss(kind, targets, &ys, tau)?.loss)
}

fn flat_mut(params: &mut EncoderParams, mut idx: usize) -> &mut f64 {
    for t in params.tensors_mut() {
        if idx < t.len() {
            return &mut t[idx];
        }
        idx -= t.len();
    }
    panic!("flat parameter index out of range")
}

/// Flat indices of parameters that can influence the batch loss: the table
/// rows touched by the batch plus every layer parameter.
fn active_indices(params: &EncoderParams, toks: &[Tokenized]) -> Vec<usize> {
    let d = params.spec.token_dim;
    let table = params.token_table.len();
    let mut uni = BTreeSet::new();
    let mut pos = BTreeSet::new();
    for t in toks {
        uni.extend(t.unigram.iter().copied());
        pos.extend(t.positional.iter().copied());
    }
    let mut out = Vec::new();
    for r in uni {
        out.extend(r * d..(r + 1) * d);
    }
    for r in pos {
        out.extend(table + r * d..table + (r + 1) * d);
    }
    out.extend(2 * table..params.param_count());
    out
}

/// Compares analytic and central-difference gradients on a random subset of
/// parameters. Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(params: &EncoderParams, batch: &DifferenceBatch, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.n_params == 0 {
        return Err(Error::Config("grad_check needs at least one parameter".into()));
    }
    if !(cfg.eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {}", cfg.eps)));
    }
    if batch.targets.len() != batch.texts.len() || batch.targets.is_empty() {
        return Err(Error::Config("batch targets and texts must be nonempty and equal length".into()));
    }
    let toks: Vec<Tokenized> = batch.texts.iter().map(|t| params.tokenize(t)).collect();
    let target_refs: Vec<&Embedding> = batch.targets.iter().collect();
    let tok_refs: Vec<&Tokenized> = toks.iter().collect();
    let (_, grad) = batch_gradient(params, &target_refs, &tok_refs, cfg.loss, cfg.tau, 1)?;
    let flat_grad: Vec<f64> = grad.tensors().concat();

    let active = active_indices(params, &toks);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen: Vec<usize> = if cfg.n_params >= active.len() {
        active.clone()
    } else {
        index::sample(&mut rng, active.len(), cfg.n_params).into_iter().map(|i| active[i]).collect()
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: chosen.len(), worst_index: 0 };
    for &i in &chosen {
        let orig = *flat_mut(&mut probe, i);
        *flat_mut(&mut probe, i) = orig + cfg.eps;
        let plus = batch_value(&probe, &batch.targets, &toks, cfg.loss, cfg.tau)?;
        *flat_mut(&mut probe, i) = orig - cfg.eps;
        let minus = batch_value(&probe, &batch.targets, &toks, cfg.loss, cfg.tau)?;
        *flat_mut(&mut probe, i) = orig;
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let analytic = flat_grad[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
