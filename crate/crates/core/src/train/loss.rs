//! Batch objectives over (image-difference, text) embedding pairs.
//!
//! Both losses return gradients with respect to the text side only; the image
//! side is frozen.

use serde::{Deserialize, Serialize};

use crate::embed::{dot, Embedding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Contrastive,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("unknown loss {other:?} (contrastive|mse)"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// `d loss / d y_i`, one row per batch element.
    pub grad_y: Vec<Vec<f64>>,
}

const UNIT_TOLERANCE: f64 = 1e-4;

fn check_shapes(xs: &[Embedding], ys: &[Embedding]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::dim(xs.len(), ys.len()));
    }
    let dim = xs.first().map(Embedding::dim).unwrap_or(0);
    for e in xs.iter().chain(ys) {
        if e.dim() != dim {
            return Err(Error::dim(dim, e.dim()));
        }
    }
    Ok(dim)
}

/// Symmetric CLIP-style cross-entropy over the similarity matrix `X Y^T / tau`.
///
/// The loss averages over the `n` matched pairs:
/// `-1/(2n) * sum_k [log softmax_col(S)_kk + log softmax_row(S)_kk]`.
pub fn contrastive_loss(xs: &[Embedding], ys: &[Embedding], tau: f64) -> Result<LossOutput> {
    check_shapes(xs, ys)?;
    let n = xs.len();
    if n == 0 {
        return Err(Error::Precondition("empty batch".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Precondition(format!("temperature must be positive, got {tau}")));
    }
    for (side, rows) in [("X", xs), ("Y", ys)] {
        for (i, r) in rows.iter().enumerate() {
            let norm = r.norm();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Precondition(format!("row {i} of {side} has norm {norm}")));
            }
        }
    }

    let s: Vec<Vec<f64>> =
        xs.iter().map(|x| ys.iter().map(|y| dot(x.as_slice(), y.as_slice()) / tau).collect()).collect();

    // row softmax: over j for fixed i; column softmax: over i for fixed j
    let mut p_row = vec![vec![0.0; n]; n];
    let mut p_col = vec![vec![0.0; n]; n];
    let mut loss = 0.0;
    for i in 0..n {
        let m = s[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s[i].iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss -= s[i][i] - lse;
        for j in 0..n {
            p_row[i][j] = (s[i][j] - lse).exp();
        }
    }
    for j in 0..n {
        let m = (0..n).map(|i| s[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).map(|i| (s[i][j] - m).exp()).sum();
        let lse = m + z.ln();
        loss -= s[j][j] - lse;
        for i in 0..n {
            p_col[i][j] = (s[i][j] - lse).exp();
        }
    }
    let scale = 1.0 / (2.0 * n as f64);
    loss *= scale;

    let dim = xs[0].dim();
    let mut grad_y = vec![vec![0.0; dim]; n];
    for j in 0..n {
        for i in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let ds = scale * (p_row[i][j] + p_col[i][j] - 2.0 * delta) / tau;
            if ds != 0.0 {
                for (g, x) in grad_y[j].iter_mut().zip(xs[i].as_slice()) {
                    *g += ds * x;
                }
            }
        }
    }
    Ok(LossOutput { loss, grad_y })
}

/// Summed squared error `sum_i ||x_i - y_i||^2`.
pub fn mse_loss(xs: &[Embedding], ys: &[Embedding]) -> Result<LossOutput> {
    check_shapes(xs, ys)?;
    let mut loss = 0.0;
    let grad_y = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(a, b)| {
                    let d = b - a;
                    loss += d * d;
                    2.0 * d
                })
                .collect()
        })
        .collect();
    Ok(LossOutput { loss, grad_y })
}

pub fn batch_loss(kind: LossKind, xs: &[Embedding], ys: &[Embedding], tau: f64) -> Result<LossOutput> {
    match kind {
        LossKind::Contrastive => contrastive_loss(xs, ys, tau),
        LossKind::Mse => mse_loss(xs, ys),
    }
}
