//! Evaluation harness: difference-task construction, accuracy over seeds,
//! zeroshot confusion, localization distances, and report rendering.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_distance, Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::inference::{
    apply_comparative_prompting, diff_classify, select_confused_pairs, zeroshot_classify, ClassDifference, Order,
    PromptBank,
};
use crate::pipeline::ComparisonRecord;
use crate::toyworld::{attribute_difference_text, ItemRecord, EMPTY_DIFFERENCE};
use crate::train::encoder::{encode_text, EncoderParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStyle {
    /// "The first image has attributes of ..., while the second ..."
    Attribute,
    /// larger vs smaller animal
    Size,
    /// yellow vs blue flower
    Color,
    /// free-form generated differences from comparison records
    Llm,
}

impl std::str::FromStr for TaskStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(TaskStyle::Attribute),
            "size" => Ok(TaskStyle::Size),
            "color" => Ok(TaskStyle::Color),
            "llm" => Ok(TaskStyle::Llm),
            other => Err(Error::Config(format!("unknown task style {other:?} (attribute|size|color|llm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPair {
    pub id_i: String,
    pub id_j: String,
    pub text: String,
    pub gold: Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceTask {
    pub style: TaskStyle,
    pub seed: u64,
    pub pairs: Vec<TaskPair>,
}

/// Where task pairs come from.
pub enum TaskSource<'a> {
    /// Items with per-slot attribute values; `excluded` values are dropped
    /// from the rendered differences.
    Attributes {
        items: &'a [ItemRecord],
        excluded: &'a [String],
    },
    /// Two disjoint groups: `group_a` is the larger (size) or yellow (color)
    /// group, `group_b` the smaller or blue one.
    Groups {
        group_a: &'a [String],
        group_b: &'a [String],
    },
    Records(&'a [ComparisonRecord]),
}

pub fn size_text(first_is_larger: bool) -> &'static str {
    if first_is_larger {
        "The first image contains a larger animal, while the second contains a smaller animal"
    } else {
        "The first image contains a smaller animal, while the second contains a larger animal"
    }
}

pub fn color_text(first_is_yellow: bool) -> &'static str {
    if first_is_yellow {
        "The first flower is yellow, while the second is blue"
    } else {
        "The first flower is blue, while the second is yellow"
    }
}

fn group_text(style: TaskStyle, first_in_a: bool) -> Result<&'static str> {
    match style {
        TaskStyle::Size => Ok(size_text(first_in_a)),
        TaskStyle::Color => Ok(color_text(first_in_a)),
        other => Err(Error::Config(format!("style {other:?} does not use groups"))),
    }
}

/// Renders a group-style pair: `item_i` belongs to group A iff `i_in_a`, and
/// the text claims the first image is from group A iff `text_first_in_a`.
pub fn group_pair(style: TaskStyle, id_i: &str, id_j: &str, i_in_a: bool, text_first_in_a: bool) -> Result<TaskPair> {
    Ok(TaskPair {
        id_i: id_i.to_owned(),
        id_j: id_j.to_owned(),
        text: group_text(style, text_first_in_a)?.to_owned(),
        gold: if i_in_a == text_first_in_a { Order::First } else { Order::Second },
    })
}

/// Samples `n_pairs` labelled pairs. Each pair's text is drawn to describe
/// either the presented order (gold `first`) or its reverse (gold `second`)
/// with equal probability.
pub fn build_difference_task(
    style: TaskStyle,
    source: &TaskSource<'_>,
    seed: u64,
    n_pairs: usize,
) -> Result<DifferenceTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    match (style, source) {
        (TaskStyle::Attribute, TaskSource::Attributes { items, excluded }) => {
            if items.len() < 2 {
                return Err(Error::Config("attribute task needs at least two items".into()));
            }
            let mut attempts = 0usize;
            while pairs.len() < n_pairs {
                attempts += 1;
                if attempts > 1000 * n_pairs.max(1) {
                    return Err(Error::Config("could not find item pairs with differing attributes".into()));
                }
                let i = rng.random_range(0..items.len());
                let j = rng.random_range(0..items.len());
                if i == j {
                    continue;
                }
                let (a, b) = (&items[i], &items[j]);
                let forward = rng.random_bool(0.5);
                let text = if forward {
                    attribute_difference_text(&a.attributes, &b.attributes, excluded)
                } else {
                    attribute_difference_text(&b.attributes, &a.attributes, excluded)
                };
                if text == EMPTY_DIFFERENCE {
                    continue;
                }
                pairs.push(TaskPair {
                    id_i: a.id.clone(),
                    id_j: b.id.clone(),
                    text,
                    gold: if forward { Order::First } else { Order::Second },
                });
            }
        }
        (TaskStyle::Size | TaskStyle::Color, TaskSource::Groups { group_a, group_b }) => {
            if group_a.is_empty() || group_b.is_empty() {
                return Err(Error::Config("both groups must be nonempty".into()));
            }
            for _ in 0..n_pairs {
                let x = &group_a[rng.random_range(0..group_a.len())];
                let y = &group_b[rng.random_range(0..group_b.len())];
                let a_first = rng.random_bool(0.5);
                let text_first_in_a = rng.random_bool(0.5);
                let (i, j) = if a_first { (x, y) } else { (y, x) };
                pairs.push(group_pair(style, i, j, a_first, text_first_in_a)?);
            }
        }
        (TaskStyle::Llm, TaskSource::Records(records)) => {
            let usable: Vec<&ComparisonRecord> = records.iter().filter(|r| r.is_usable()).collect();
            if n_pairs > usable.len() {
                return Err(Error::Config(format!("asked for {n_pairs} pairs, only {} usable records", usable.len())));
            }
            for k in index::sample(&mut rng, usable.len(), n_pairs) {
                let r = usable[k];
                let forward = rng.random_bool(0.5);
                let (i, j) = if forward { (&r.id_a, &r.id_b) } else { (&r.id_b, &r.id_a) };
                pairs.push(TaskPair {
                    id_i: i.clone(),
                    id_j: j.clone(),
                    text: r.difference_text.clone(),
                    gold: if forward { Order::First } else { Order::Second },
                });
            }
        }
        (style, _) => return Err(Error::Config(format!("task source does not match style {style:?}"))),
    }
    Ok(DifferenceTask { style, seed, pairs })
}

/// Sample mean and standard error (`sd / sqrt(n)`, `sd` with `n - 1`).
pub fn accuracy_mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Config("no values to summarize".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    /// `f_{first - second}` is the described difference.
    pub first: String,
    pub second: String,
    /// `d(f_first - f_second, f_{first-second})`
    pub d_fwd: f64,
    /// `d(f_second - f_first, f_{first-second})`
    pub d_rev: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub localization: Vec<LocalizationRow>,
}

impl EvalReport {
    pub fn from_accuracies(label: impl Into<String>, seeds: Vec<u64>, per_seed: Vec<f64>) -> Result<Self> {
        let (mean, stderr) = accuracy_mean_stderr(&per_seed)?;
        Ok(EvalReport { label: label.into(), seeds, per_seed, mean, stderr, ..Default::default() })
    }

    pub fn localization_means(&self) -> Option<(f64, f64)> {
        if self.localization.is_empty() {
            return None;
        }
        let n = self.localization.len() as f64;
        Some((
            self.localization.iter().map(|r| r.d_fwd).sum::<f64>() / n,
            self.localization.iter().map(|r| r.d_rev).sum::<f64>() / n,
        ))
    }
}

/// Fraction of task pairs where the decision rule matches gold.
pub fn difference_accuracy(task: &DifferenceTask, images: &EmbeddingTable, encoder: &EncoderParams) -> Result<f64> {
    if task.pairs.is_empty() {
        return Err(Error::Config("task has no pairs".into()));
    }
    let mut cache: HashMap<&str, Embedding> = HashMap::new();
    let mut correct = 0usize;
    for p in &task.pairs {
        let gi = images.require(&p.id_i)?;
        let gj = images.require(&p.id_j)?;
        if !cache.contains_key(p.text.as_str()) {
            cache.insert(&p.text, encode_text(encoder, &p.text)?);
        }
        if diff_classify(&gi, &gj, &cache[p.text.as_str()])? == p.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / task.pairs.len() as f64)
}

/// One accuracy per task (each task is one seed's resampled pairs).
pub fn eval_difference(
    tasks: &[DifferenceTask],
    images: &EmbeddingTable,
    encoder: &EncoderParams,
) -> Result<EvalReport> {
    for t in tasks {
        for p in &t.pairs {
            for id in [&p.id_i, &p.id_j] {
                if images.position(id).is_none() {
                    return Err(Error::Data(format!("task id {id:?} not in image table")));
                }
            }
        }
    }
    let per_seed = tasks.iter().map(|t| difference_accuracy(t, images, encoder)).collect::<Result<Vec<_>>>()?;
    let label = tasks.first().map(|t| format!("difference-{:?}", t.style).to_lowercase()).unwrap_or_default();
    EvalReport::from_accuracies(label, tasks.iter().map(|t| t.seed).collect(), per_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroshotResult {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

/// Classifies each image against the bank; `labels` index into the bank.
pub fn eval_zeroshot(images: &[Embedding], labels: &[usize], bank: &PromptBank) -> Result<ZeroshotResult> {
    if images.len() != labels.len() {
        return Err(Error::dim(images.len(), labels.len()));
    }
    if images.is_empty() {
        return Err(Error::Config("no images to classify".into()));
    }
    let k = bank.len();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut correct = 0usize;
    for (img, &label) in images.iter().zip(labels) {
        if label >= k {
            return Err(Error::Data(format!("label {label} outside the {k}-class bank")));
        }
        let pred = zeroshot_classify(img, bank)?.index;
        confusion[label][pred] += 1;
        correct += usize::from(pred == label);
    }
    Ok(ZeroshotResult { accuracy: correct as f64 / images.len() as f64, confusion })
}

/// Accuracy on images of the given class pairs, each image classified
/// between the two classes of its pair only.
pub fn pair_restricted_accuracy(
    images: &[Embedding],
    labels: &[usize],
    bank: &PromptBank,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    if images.len() != labels.len() {
        return Err(Error::dim(images.len(), labels.len()));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for &(a, b) in pairs {
        if a >= bank.len() || b >= bank.len() {
            return Err(Error::Data(format!("pair ({a}, {b}) outside the {}-class bank", bank.len())));
        }
        let sub = bank.subset(&[a, b]);
        for (img, &label) in images.iter().zip(labels) {
            if label != a && label != b {
                continue;
            }
            total += 1;
            let pred = if zeroshot_classify(img, &sub)?.index == 0 { a } else { b };
            correct += usize::from(pred == label);
        }
    }
    if total == 0 {
        return Err(Error::Data("no images belong to the selected pairs".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeReport {
    pub alpha: f64,
    /// Class pairs whose prompts were updated.
    pub pairs: Vec<(String, String)>,
    /// Confusion matrix the pairs were selected from.
    pub selection_confusion: Vec<Vec<u64>>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub pair_accuracy_before: f64,
    pub pair_accuracy_after: f64,
}

/// Selects the `top_k` most confused pairs on the selection split, applies
/// comparative prompting to them, and scores both banks on the test split.
pub fn eval_comparative(
    bank: &PromptBank,
    diffs: &[ClassDifference],
    selection: (&[Embedding], &[usize]),
    test: (&[Embedding], &[usize]),
    top_k: usize,
    alpha: f64,
) -> Result<ComparativeReport> {
    let confusion = eval_zeroshot(selection.0, selection.1, bank)?.confusion;
    let pairs = select_confused_pairs(&confusion, top_k)?;
    let updated = apply_comparative_prompting(bank, diffs, &pairs, alpha)?;
    let names = |&(a, b): &(usize, usize)| (bank.entries[a].class.clone(), bank.entries[b].class.clone());
    Ok(ComparativeReport {
        alpha,
        pairs: pairs.iter().map(names).collect(),
        selection_confusion: confusion,
        accuracy_before: eval_zeroshot(test.0, test.1, bank)?.accuracy,
        accuracy_after: eval_zeroshot(test.0, test.1, &updated)?.accuracy,
        pair_accuracy_before: pair_restricted_accuracy(test.0, test.1, bank, &pairs)?,
        pair_accuracy_after: pair_restricted_accuracy(test.0, test.1, &updated, &pairs)?,
    })
}

/// Distances between class-prompt differences and described differences.
pub fn localization_report(bank: &PromptBank, diffs: &[ClassDifference]) -> Result<Vec<LocalizationRow>> {
    diffs
        .iter()
        .map(|d| {
            let get = |c: &str| {
                bank.index_of(c)
                    .map(|i| &bank.entries[i].embedding)
                    .ok_or_else(|| Error::Data(format!("class {c:?} not in prompt bank")))
            };
            let f_first = get(&d.class_b)?;
            let f_second = get(&d.class_a)?;
            let fwd = f_first.try_sub(f_second)?;
            let rev = -&fwd;
            Ok(LocalizationRow {
                first: d.class_b.clone(),
                second: d.class_a.clone(),
                d_fwd: cosine_distance(&fwd, &d.embedding)?,
                d_rev: cosine_distance(&rev, &d.embedding)?,
            })
        })
        .collect()
}

/// Localization rows with their column means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub rows: Vec<LocalizationRow>,
    pub mean_d_fwd: f64,
    pub mean_d_rev: f64,
}

impl LocalizationSummary {
    pub fn from_rows(rows: Vec<LocalizationRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("no class differences to localize".into()));
        }
        let n = rows.len() as f64;
        let mean_d_fwd = rows.iter().map(|r| r.d_fwd).sum::<f64>() / n;
        let mean_d_rev = rows.iter().map(|r| r.d_rev).sum::<f64>() / n;
        Ok(LocalizationSummary { rows, mean_d_fwd, mean_d_rev })
    }
}

/// Labels file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelLine {
    pub id: String,
    pub class: String,
}

/// Resolves labelled ids to image embeddings and bank class indices.
pub fn labelled_images(
    lines: &[LabelLine],
    images: &EmbeddingTable,
    bank: &PromptBank,
) -> Result<(Vec<Embedding>, Vec<usize>)> {
    let mut embs = Vec::with_capacity(lines.len());
    let mut labels = Vec::with_capacity(lines.len());
    for l in lines {
        embs.push(images.require(&l.id)?);
        labels.push(
            bank.index_of(&l.class)
                .ok_or_else(|| Error::Data(format!("label class {:?} not in prompt bank", l.class)))?,
        );
    }
    Ok((embs, labels))
}

/// Plain-text `method x dataset` table of `mean ± stderr` (percent).
pub fn render_table(rows: &[(String, String, f64, f64)]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for (m, d, _, _) in rows {
        if !methods.contains(&m.as_str()) {
            methods.push(m);
        }
        if !datasets.contains(&d.as_str()) {
            datasets.push(d);
        }
    }
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:width$}", "method");
    for d in &datasets {
        let _ = write!(out, "  {d:>16}");
    }
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "{m:width$}");
        for d in &datasets {
            let cell = rows
                .iter()
                .find(|(rm, rd, _, _)| rm == m && rd == d)
                .map(|(_, _, mean, se)| format!("{:.2} ± {:.2}", mean * 100.0, se * 100.0))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, "  {cell:>16}");
        }
        out.push('\n');
    }
    out
}
