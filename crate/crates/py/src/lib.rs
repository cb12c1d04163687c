//! Python bindings: toy worlds, comparison records, the text encoder and its
//! training loop, and the inference and evaluation helpers.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pdalign::eval::{accuracy_mean_stderr, build_difference_task, difference_accuracy, TaskSource, TaskStyle};
use pdalign::inference::{self, Order};
use pdalign::io::{read_jsonl, write_jsonl};
use pdalign::pipeline::{self, ComparisonRecord, DifferenceSource, FilterOutcome, GenerationOptions, PromptStyle};
use pdalign::toyworld::{generate_world, ToyWorld, ToyWorldConfig};
use pdalign::train::{self, checkpoint, EncoderParams, EncoderSpec, LossKind, TrainConfig, TrainLog};
use pdalign::{Embedding, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Numerical(m) => PyArithmeticError::new_err(m),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn emb(v: Vec<f64>) -> PyResult<Embedding> {
    Embedding::new(v).map_err(to_py)
}

fn label<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

/// Seeded synthetic world of attribute-labelled items and their image embeddings.
#[pyclass(name = "World")]
struct PyWorld {
    inner: ToyWorld,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (n_items=100, n_kinds=5, dim=32, noise_sigma=0.05, seed=0))]
    fn new(n_items: usize, n_kinds: usize, dim: usize, noise_sigma: f64, seed: u64) -> PyResult<Self> {
        let cfg = ToyWorldConfig { n_items, n_kinds, dim, noise_sigma, seed };
        Ok(PyWorld { inner: generate_world(&cfg).map_err(to_py)? })
    }

    fn __len__(&self) -> usize {
        self.inner.items.len()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.items.iter().map(|i| i.id.clone()).collect()
    }

    #[getter]
    fn captions(&self) -> Vec<String> {
        self.inner.items.iter().map(|i| i.caption.clone()).collect()
    }

    /// `[size, color, kind]` per item.
    #[getter]
    fn attributes(&self) -> Vec<Vec<String>> {
        self.inner.records().into_iter().map(|r| r.attributes).collect()
    }

    fn image(&self, id: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.images.require(id).map_err(to_py)?.into_vec())
    }

    fn images(&self) -> Vec<Vec<f64>> {
        (0..self.inner.images.len()).map(|i| self.inner.images.embedding(i).into_vec()).collect()
    }

    /// Hand-built encoder that reproduces the world geometry exactly.
    #[pyo3(signature = (vocab=4096))]
    fn ground_truth_encoder(&self, vocab: usize) -> PyResult<PyEncoder> {
        Ok(PyEncoder { inner: self.inner.ground_truth_encoder(vocab).map_err(to_py)? })
    }

    fn dump(&self, items_path: PathBuf, images_path: PathBuf) -> PyResult<()> {
        self.inner.dump(&items_path, &images_path).map_err(to_py)
    }
}

/// Ordered-pair comparison records.
#[pyclass(name = "Records")]
struct PyRecords {
    inner: Vec<ComparisonRecord>,
}

#[pymethods]
impl PyRecords {
    /// Template differences for every ordered pair of `n_source` sampled items.
    #[staticmethod]
    #[pyo3(signature = (world, n_source, seed=0))]
    fn oracle(world: &PyWorld, n_source: usize, seed: u64) -> PyResult<Self> {
        let items = world.inner.records();
        let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
        let pairs = pipeline::sample_pairs(&ids, n_source, seed).map_err(to_py)?;
        let inner =
            pipeline::generate_dataset(&DifferenceSource::Oracle, &items, &pairs, &GenerationOptions::default())
                .map_err(to_py)?;
        Ok(PyRecords { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRecords { inner: read_jsonl(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_jsonl(&path, &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn usable_count(&self) -> usize {
        self.inner.iter().filter(|r| r.is_usable()).count()
    }

    /// `(id_a, id_b, difference_text)` triples.
    fn pairs(&self) -> Vec<(String, String, String)> {
        self.inner.iter().map(|r| (r.id_a.clone(), r.id_b.clone(), r.difference_text.clone())).collect()
    }
}

#[pyclass(name = "Encoder")]
struct PyEncoder {
    inner: EncoderParams,
}

#[allow(clippy::too_many_arguments)]
fn train_config(
    epochs: usize,
    lr: f64,
    batch: usize,
    loss: &str,
    tau: f64,
    gamma: f64,
    seed: u64,
    workers: usize,
) -> PyResult<TrainConfig> {
    let loss: LossKind = loss.parse().map_err(to_py)?;
    Ok(TrainConfig { tau, lr, lr_gamma: gamma, epochs, batch_size: batch, loss, seed, workers, train_positional: true })
}

fn losses(log: &TrainLog) -> Vec<f64> {
    log.epochs.iter().map(|e| e.mean_loss).collect()
}

#[pymethods]
impl PyEncoder {
    #[new]
    #[pyo3(signature = (seed=0, vocab=4096, token_dim=32, hidden=Vec::new(), dim=32))]
    fn new(seed: u64, vocab: usize, token_dim: usize, hidden: Vec<usize>, dim: usize) -> PyResult<Self> {
        let spec = EncoderSpec { vocab, token_dim, hidden, dim, ..Default::default() };
        Ok(PyEncoder { inner: EncoderParams::init(spec, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEncoder { inner: checkpoint::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Unit-norm embedding of `text`.
    fn encode(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(train::encode_text(&self.inner, text).map_err(to_py)?.into_vec())
    }

    /// Finetunes on pairwise differences; returns the new encoder and the
    /// per-epoch mean losses.
    #[pyo3(signature = (world, records, epochs=20, lr=10.0, batch=512, loss="contrastive", tau=1.0, gamma=0.9, seed=0, workers=1))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &self,
        py: Python<'_>,
        world: &PyWorld,
        records: &PyRecords,
        epochs: usize,
        lr: f64,
        batch: usize,
        loss: &str,
        tau: f64,
        gamma: f64,
        seed: u64,
        workers: usize,
    ) -> PyResult<(PyEncoder, Vec<f64>)> {
        let cfg = train_config(epochs, lr, batch, loss, tau, gamma, seed, workers)?;
        let (params, log) =
            py.detach(|| train::fit(self.inner.clone(), &records.inner, &world.inner.images, &cfg)).map_err(to_py)?;
        Ok((PyEncoder { inner: params }, losses(&log)))
    }

    /// Caption alignment with the position table frozen.
    #[pyo3(signature = (world, epochs=20, lr=10.0, batch=32, seed=0))]
    fn pretrain(
        &self,
        py: Python<'_>,
        world: &PyWorld,
        epochs: usize,
        lr: f64,
        batch: usize,
        seed: u64,
    ) -> PyResult<(PyEncoder, Vec<f64>)> {
        let cfg = TrainConfig {
            train_positional: false,
            ..train_config(epochs, lr, batch, "contrastive", 1.0, 0.9, seed, 1)?
        };
        let captions: Vec<(String, String)> =
            world.inner.items.iter().map(|i| (i.id.clone(), i.caption.clone())).collect();
        let (params, log) = py
            .detach(|| train::fit_captions(self.inner.clone(), &captions, &world.inner.images, &cfg))
            .map_err(to_py)?;
        Ok((PyEncoder { inner: params }, losses(&log)))
    }

    /// Elementwise weight average with a same-shaped encoder.
    fn ensemble(&self, other: &PyEncoder) -> PyResult<PyEncoder> {
        Ok(PyEncoder { inner: train::ensemble_weights(&self.inner, &other.inner).map_err(to_py)? })
    }

    /// Attribute-style difference accuracy on `world`, as `(mean, stderr)`
    /// over `seeds`.
    #[pyo3(signature = (world, n_pairs=100, seeds=vec![0, 1, 2, 3, 4]))]
    fn difference_accuracy(&self, world: &PyWorld, n_pairs: usize, seeds: Vec<u64>) -> PyResult<(f64, f64)> {
        let items = world.inner.records();
        let source = TaskSource::Attributes { items: &items, excluded: &[] };
        let accs = seeds
            .iter()
            .map(|&s| {
                let task = build_difference_task(TaskStyle::Attribute, &source, s, n_pairs)?;
                difference_accuracy(&task, &world.inner.images, &self.inner)
            })
            .collect::<Result<Vec<_>, Error>>()
            .map_err(to_py)?;
        accuracy_mean_stderr(&accs).map_err(to_py)
    }
}

/// Cleans one raw generation. Returns a dict with `status`
/// (accepted, truncated or rejected) and `text`, `rule` or `reason`.
#[pyfunction]
fn filter_generation<'py>(py: Python<'py>, raw: &str) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    match pipeline::filter_generation(raw) {
        FilterOutcome::Accept { text, truncated: None } => {
            d.set_item("status", "accepted")?;
            d.set_item("text", text)?;
        }
        FilterOutcome::Accept { text, truncated: Some(rule) } => {
            d.set_item("status", "truncated")?;
            d.set_item("text", text)?;
            d.set_item("rule", label(&rule))?;
        }
        FilterOutcome::Reject(reason) => {
            d.set_item("status", "rejected")?;
            d.set_item("reason", label(&reason))?;
        }
    }
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (caption_a, caption_b, style="coco"))]
fn build_prompt(caption_a: &str, caption_b: &str, style: &str) -> PyResult<String> {
    let style: PromptStyle = style.parse().map_err(to_py)?;
    Ok(pipeline::build_prompt(style, caption_a, caption_b))
}

/// "first" if the difference text describes image i relative to image j.
#[pyfunction]
fn diff_classify(g_i: Vec<f64>, g_j: Vec<f64>, f_diff: Vec<f64>) -> PyResult<&'static str> {
    let order = inference::diff_classify(&emb(g_i)?, &emb(g_j)?, &emb(f_diff)?).map_err(to_py)?;
    Ok(match order {
        Order::First => "first",
        Order::Second => "second",
    })
}

#[pyfunction]
fn comparative_prompt(f_a: Vec<f64>, f_b: Vec<f64>, f_b_minus_a: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    let p = inference::comparative_prompt(&emb(f_a)?, &emb(f_b)?, &emb(f_b_minus_a)?, alpha).map_err(to_py)?;
    Ok(p.into_vec())
}

#[pyfunction]
fn select_confused_pairs(confusion: Vec<Vec<u64>>, k: usize) -> PyResult<Vec<(usize, usize)>> {
    inference::select_confused_pairs(&confusion, k).map_err(to_py)
}

#[pyfunction]
fn cosine_similarity(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    pdalign::cosine_similarity(&emb(u)?, &emb(v)?).map_err(to_py)
}

/// Symmetric contrastive loss of unit-norm rows; returns `(loss, grad_y)`.
#[pyfunction]
#[pyo3(signature = (xs, ys, tau=1.0))]
fn contrastive_loss(xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>, tau: f64) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let xs = xs.into_iter().map(emb).collect::<PyResult<Vec<_>>>()?;
    let ys = ys.into_iter().map(emb).collect::<PyResult<Vec<_>>>()?;
    let out = train::contrastive_loss(&xs, &ys, tau).map_err(to_py)?;
    Ok((out.loss, out.grad_y))
}

#[pymodule]
fn pdalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorld>()?;
    m.add_class::<PyRecords>()?;
    m.add_class::<PyEncoder>()?;
    m.add_function(wrap_pyfunction!(filter_generation, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(diff_classify, m)?)?;
    m.add_function(wrap_pyfunction!(comparative_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(select_confused_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    Ok(())
}
