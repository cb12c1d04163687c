//! Inference in the aligned space: prompt-based zeroshot classification,
//! difference-based classification, comparative prompting, and selection of
//! the most confused class pairs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, normalize, Embedding};
use crate::error::{Error, Result};
use crate::train::encoder::{encode_text, EncoderParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Standard,
    Extended,
    ComparativeUpdated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEntry {
    pub class: String,
    pub prompt: String,
    pub embedding: Embedding,
}

/// Prompt-bank file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLine {
    pub class: String,
    pub prompt: String,
    pub kind: PromptKind,
}

/// One unit-norm prompt embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub kind: PromptKind,
    pub entries: Vec<PromptEntry>,
}

impl PromptBank {
    pub fn new(kind: PromptKind, entries: Vec<PromptEntry>) -> Result<Self> {
        let mut seen = HashMap::new();
        let dim = entries.first().map(|e| e.embedding.dim());
        let mut normed = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            if seen.insert(e.class.clone(), i).is_some() {
                return Err(Error::Data(format!("class {:?} appears twice in prompt bank", e.class)));
            }
            if Some(e.embedding.dim()) != dim {
                return Err(Error::dim(dim.unwrap_or(0), e.embedding.dim()));
            }
            normed.push(PromptEntry { embedding: normalize(&e.embedding)?, ..e });
        }
        Ok(PromptBank { kind, entries: normed })
    }

    /// Encodes every prompt line with `encoder`. All lines must share a kind.
    pub fn from_lines(lines: &[PromptLine], encoder: &EncoderParams) -> Result<Self> {
        let kind = lines.first().map(|l| l.kind).unwrap_or(PromptKind::Standard);
        if let Some(l) = lines.iter().find(|l| l.kind != kind) {
            return Err(Error::Data(format!("mixed prompt kinds: {:?} and {:?}", kind, l.kind)));
        }
        let entries = lines
            .iter()
            .map(|l| {
                Ok(PromptEntry {
                    class: l.class.clone(),
                    prompt: l.prompt.clone(),
                    embedding: encode_text(encoder, &l.prompt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(kind, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.class == class)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.class.clone()).collect()
    }

    pub fn lines(&self) -> Vec<PromptLine> {
        self.entries
            .iter()
            .map(|e| PromptLine { class: e.class.clone(), prompt: e.prompt.clone(), kind: self.kind })
            .collect()
    }

    /// Restricts the bank to `classes`, in the given order.
    pub fn subset(&self, classes: &[usize]) -> PromptBank {
        PromptBank { kind: self.kind, entries: classes.iter().map(|&i| self.entries[i].clone()).collect() }
    }
}

/// Embedding of a textual description of how class B differs from class A
/// (`f_{B-A}`). The direction matters: `(B, A)` and `(A, B)` are different
/// objects.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDifference {
    pub class_b: String,
    pub class_a: String,
    pub difference_text: String,
    pub embedding: Embedding,
}

/// Class-difference file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDifferenceLine {
    pub class_b: String,
    pub class_a: String,
    pub difference_text: String,
}

impl ClassDifference {
    pub fn encode(line: &ClassDifferenceLine, encoder: &EncoderParams) -> Result<Self> {
        Ok(ClassDifference {
            class_b: line.class_b.clone(),
            class_a: line.class_a.clone(),
            difference_text: line.difference_text.clone(),
            embedding: encode_text(encoder, &line.difference_text)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub class: String,
    pub scores: Vec<f64>,
}

/// Argmax cosine similarity over the bank; ties go to the lowest index.
pub fn zeroshot_classify(image: &Embedding, bank: &PromptBank) -> Result<Prediction> {
    if bank.is_empty() {
        return Err(Error::Config("empty prompt bank".into()));
    }
    let scores = bank.entries.iter().map(|e| cosine_similarity(image, &e.embedding)).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(Prediction { index: best, class: bank.entries[best].class.clone(), scores })
}

/// Which image of a pair plays the "first" role of a difference text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    First,
    Second,
}

impl Order {
    pub fn flip(self) -> Order {
        match self {
            Order::First => Order::Second,
            Order::Second => Order::First,
        }
    }
}

/// `First` iff `(g_i - g_j) . f >= (g_j - g_i) . f`.
pub fn diff_classify(g_i: &Embedding, g_j: &Embedding, f_diff: &Embedding) -> Result<Order> {
    let forward = g_i.try_sub(g_j)?.dot(f_diff)?;
    let backward = g_j.try_sub(g_i)?.dot(f_diff)?;
    Ok(if forward >= backward { Order::First } else { Order::Second })
}

/// `normalize(alpha * f_a + (1 - alpha) * (f_b - f_b_minus_a))`.
pub fn comparative_prompt(f_a: &Embedding, f_b: &Embedding, f_b_minus_a: &Embedding, alpha: f64) -> Result<Embedding> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let correction = f_b.try_sub(f_b_minus_a)?;
    normalize(&f_a.lincomb(alpha, &correction, 1.0 - alpha)?)
}

/// Updates both classes of every pair for which a directional difference is
/// available. Each pair's updates read the bank as it was before that pair.
pub fn apply_comparative_prompting(
    bank: &PromptBank,
    diffs: &[ClassDifference],
    pairs: &[(usize, usize)],
    alpha: f64,
) -> Result<PromptBank> {
    let mut out = bank.clone();
    out.kind = PromptKind::ComparativeUpdated;
    let find = |b: &str, a: &str| diffs.iter().find(|d| d.class_b == b && d.class_a == a);
    for &(a, b) in pairs {
        let ea = out.entries[a].embedding.clone();
        let eb = out.entries[b].embedding.clone();
        let (ca, cb) = (bank.entries[a].class.as_str(), bank.entries[b].class.as_str());
        if let Some(d) = find(cb, ca) {
            out.entries[a].embedding = comparative_prompt(&ea, &eb, &d.embedding, alpha)?;
        }
        if let Some(d) = find(ca, cb) {
            out.entries[b].embedding = comparative_prompt(&eb, &ea, &d.embedding, alpha)?;
        }
    }
    Ok(out)
}

/// Top-`k` unordered class pairs `(a, b)`, `a < b`, ranked by
/// `confusion[a][b] + confusion[b][a]` descending, ties by `(a, b)`.
pub fn select_confused_pairs(confusion: &[Vec<u64>], k: usize) -> Result<Vec<(usize, usize)>> {
    let n = confusion.len();
    if confusion.iter().any(|row| row.len() != n) {
        return Err(Error::Config("confusion matrix must be square".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut scored: Vec<(u64, usize, usize)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            scored.push((confusion[a][b] + confusion[b][a], a, b));
        }
    }
    scored.sort_by(|x, y| y.0.cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    Ok(scored.into_iter().take(k).map(|(_, a, b)| (a, b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn bank(vs: &[&[f64]]) -> PromptBank {
        PromptBank::new(
            PromptKind::Standard,
            vs.iter()
                .enumerate()
                .map(|(i, v)| PromptEntry { class: format!("c{i}"), prompt: String::new(), embedding: e(v) })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zeroshot_self_similarity_wins() {
        let b = bank(&[&[1.0, 0.0, 0.0], &[0.2, 0.9, 0.1], &[0.0, 0.0, 1.0]]);
        let img = e(&[0.2, 0.9, 0.1]);
        assert_eq!(zeroshot_classify(&img, &b).unwrap().index, 1);
        assert_eq!(zeroshot_classify(&img.scale(5.0), &b).unwrap().index, 1);
    }

    #[test]
    fn zeroshot_ties_pick_lowest_and_empty_errors() {
        let b = bank(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!(b.entries.len() == 2);
        assert_eq!(zeroshot_classify(&e(&[1.0, 1.0]), &b).unwrap().index, 0);
        let empty = PromptBank { kind: PromptKind::Standard, entries: vec![] };
        assert!(matches!(zeroshot_classify(&e(&[1.0]), &empty), Err(Error::Config(_))));
    }

    #[test]
    fn diff_classify_cases() {
        let gi = e(&[1.0, 0.0]);
        let gj = e(&[0.0, 1.0]);
        assert_eq!(diff_classify(&gi, &gj, &(&gi - &gj)).unwrap(), Order::First);
        assert_eq!(diff_classify(&gi, &gj, &e(&[1.0, 1.0])).unwrap(), Order::First);
        assert_eq!(diff_classify(&gj, &gi, &(&gi - &gj)).unwrap(), Order::Second);
    }

    #[test]
    fn comparative_prompt_limits() {
        let fa = e(&[1.0, 0.0]);
        let fb = e(&[0.0, 1.0]);
        let fd = normalize(&e(&[-1.0, 1.0])).unwrap();
        assert_eq!(comparative_prompt(&fa, &fb, &fd, 1.0).unwrap(), fa);
        let full = comparative_prompt(&fa, &fb, &fd, 0.0).unwrap();
        let want = normalize(&(&fb - &fd)).unwrap();
        for (x, y) in full.as_slice().iter().zip(want.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(comparative_prompt(&fa, &fb, &fd, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn comparative_prompt_half_blend() {
        let fa = e(&[1.0, 0.0]);
        let fb = e(&[0.0, 1.0]);
        let fd = normalize(&e(&[-1.0, 1.0])).unwrap();
        let r = 0.5f64.sqrt();
        // hand arithmetic: 0.5*(1,0) + 0.5*((0,1) - (-r, r))
        let raw = [0.5 + 0.5 * r, 0.5 - 0.5 * r];
        let n = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        let got = comparative_prompt(&fa, &fb, &fd, 0.5).unwrap();
        assert!((got.as_slice()[0] - raw[0] / n).abs() < 1e-12);
        assert!((got.as_slice()[1] - raw[1] / n).abs() < 1e-12);
        assert!(got.as_slice()[0] > got.as_slice()[1]);
    }

    #[test]
    fn confused_pairs_simple() {
        let mut m = vec![vec![0u64; 6]; 6];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 9;
        }
        assert_eq!(select_confused_pairs(&m, 3).unwrap(), vec![(0, 1), (0, 2), (0, 3)]);
        m[2][5] = 10;
        assert_eq!(select_confused_pairs(&m, 1).unwrap(), vec![(2, 5)]);
        assert_eq!(select_confused_pairs(&m, 100).unwrap().len(), 15);
        assert!(select_confused_pairs(&m, 0).is_err());
    }

    #[test]
    fn apply_updates_both_directions() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = |cb: &str, ca: &str, v: &[f64]| ClassDifference {
            class_b: cb.into(),
            class_a: ca.into(),
            difference_text: String::new(),
            embedding: normalize(&e(v)).unwrap(),
        };
        let diffs = vec![d("c1", "c0", &[-1.0, 1.0])];
        let out = apply_comparative_prompting(&b, &diffs, &[(0, 1)], 0.5).unwrap();
        assert_eq!(out.kind, PromptKind::ComparativeUpdated);
        assert_ne!(out.entries[0].embedding, b.entries[0].embedding);
        assert_eq!(out.entries[1].embedding, b.entries[1].embedding);
        let diffs = vec![diffs[0].clone(), d("c0", "c1", &[1.0, -1.0])];
        let out = apply_comparative_prompting(&b, &diffs, &[(0, 1)], 0.5).unwrap();
        assert_ne!(out.entries[1].embedding, b.entries[1].embedding);
    }
}
