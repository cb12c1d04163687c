//! Run configuration: defaults, a flat `[section] key = value` file format,
//! `PDALIGN_*` environment overrides and command-line overrides, applied in
//! that order.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TaskStyle;
use crate::pipeline::{HttpClientConfig, PromptStyle, RetryPolicy};
use crate::toyworld::ToyWorldConfig;
use crate::train::{EncoderSpec, LossKind, TrainConfig};

pub const ENV_PREFIX: &str = "PDALIGN_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    Oracle,
    Http,
}

/// Which labelled split the confusion matrix for pair selection comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSettings {
    pub style: PromptStyle,
    pub n_source: usize,
    pub client: ClientKind,
    pub max_inflight: usize,
    pub max_tokens: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub http: HttpClientConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub style: TaskStyle,
    pub n_seeds: usize,
    pub n_pairs: usize,
    /// Attribute values dropped from attribute-style texts.
    pub exclude: Vec<String>,
    pub alpha: f64,
    pub top_k: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub world: ToyWorldConfig,
    pub encoder: EncoderSpec,
    pub train: TrainConfig,
    pub pretrain: PretrainSettings,
    pub generate: GenerateSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            world: ToyWorldConfig::default(),
            encoder: EncoderSpec::default(),
            train: TrainConfig::default(),
            pretrain: PretrainSettings { lr: 10.0, epochs: 20, batch: 32 },
            generate: GenerateSettings {
                style: PromptStyle::Coco,
                n_source: 70,
                client: ClientKind::Oracle,
                max_inflight: 4,
                max_tokens: 80,
                retries: 3,
                backoff_ms: 1000,
                http: HttpClientConfig::default(),
            },
            eval: EvalSettings {
                style: TaskStyle::Attribute,
                n_seeds: 5,
                n_pairs: 100,
                exclude: Vec::new(),
                alpha: 0.9,
                top_k: 3,
                split: Split::Validation,
            },
        }
    }
}

/// Every recognised `section.key`.
pub const KEYS: &[&str] = &[
    "run.seed",
    "run.workers",
    "world.n_items",
    "world.n_kinds",
    "world.dim",
    "world.noise_sigma",
    "encoder.vocab",
    "encoder.token_dim",
    "encoder.hidden",
    "encoder.dim",
    "encoder.bucket_width",
    "encoder.n_buckets",
    "train.loss",
    "train.tau",
    "train.lr",
    "train.gamma",
    "train.epochs",
    "train.batch",
    "pretrain.lr",
    "pretrain.epochs",
    "pretrain.batch",
    "generate.style",
    "generate.n_source",
    "generate.client",
    "generate.max_inflight",
    "generate.max_tokens",
    "generate.retries",
    "generate.backoff_ms",
    "generate.url",
    "generate.prompt_field",
    "generate.max_tokens_field",
    "generate.response_pointer",
    "generate.timeout_secs",
    "eval.style",
    "eval.n_seeds",
    "eval.n_pairs",
    "eval.exclude",
    "eval.alpha",
    "eval.top_k",
    "eval.split",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Parses a serde unit-variant enum from its lowercase name.
fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.trim().to_owned()))
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "run.workers" => self.workers = parse(key, v)?,
            "world.n_items" => self.world.n_items = parse(key, v)?,
            "world.n_kinds" => self.world.n_kinds = parse(key, v)?,
            "world.dim" => self.world.dim = parse(key, v)?,
            "world.noise_sigma" => self.world.noise_sigma = parse(key, v)?,
            "encoder.vocab" => self.encoder.vocab = parse(key, v)?,
            "encoder.token_dim" => self.encoder.token_dim = parse(key, v)?,
            "encoder.hidden" => self.encoder.hidden = parse_list(key, v)?,
            "encoder.dim" => self.encoder.dim = parse(key, v)?,
            "encoder.bucket_width" => self.encoder.bucket_width = parse(key, v)?,
            "encoder.n_buckets" => self.encoder.n_buckets = parse(key, v)?,
            "train.loss" => self.train.loss = v.parse::<LossKind>()?,
            "train.tau" => self.train.tau = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.gamma" => self.train.lr_gamma = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch" => self.train.batch_size = parse(key, v)?,
            "pretrain.lr" => self.pretrain.lr = parse(key, v)?,
            "pretrain.epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain.batch" => self.pretrain.batch = parse(key, v)?,
            "generate.style" => self.generate.style = v.parse()?,
            "generate.n_source" => self.generate.n_source = parse(key, v)?,
            "generate.client" => self.generate.client = parse_enum(key, v)?,
            "generate.max_inflight" => self.generate.max_inflight = parse(key, v)?,
            "generate.max_tokens" => self.generate.max_tokens = parse(key, v)?,
            "generate.retries" => self.generate.retries = parse(key, v)?,
            "generate.backoff_ms" => self.generate.backoff_ms = parse(key, v)?,
            "generate.url" => self.generate.http.url = v.to_owned(),
            "generate.prompt_field" => self.generate.http.prompt_field = v.to_owned(),
            "generate.max_tokens_field" => self.generate.http.max_tokens_field = v.to_owned(),
            "generate.response_pointer" => self.generate.http.response_pointer = v.to_owned(),
            "generate.timeout_secs" => self.generate.http.timeout_secs = parse(key, v)?,
            "eval.style" => self.eval.style = v.parse()?,
            "eval.n_seeds" => self.eval.n_seeds = parse(key, v)?,
            "eval.n_pairs" => self.eval.n_pairs = parse(key, v)?,
            "eval.exclude" => self.eval.exclude = parse_list(key, v)?,
            "eval.alpha" => self.eval.alpha = parse(key, v)?,
            "eval.top_k" => self.eval.top_k = parse(key, v)?,
            "eval.split" => self.eval.split = parse_enum(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in the same text form `set` accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "run.seed" => self.seed.to_string(),
            "run.workers" => self.workers.to_string(),
            "world.n_items" => self.world.n_items.to_string(),
            "world.n_kinds" => self.world.n_kinds.to_string(),
            "world.dim" => self.world.dim.to_string(),
            "world.noise_sigma" => self.world.noise_sigma.to_string(),
            "encoder.vocab" => self.encoder.vocab.to_string(),
            "encoder.token_dim" => self.encoder.token_dim.to_string(),
            "encoder.hidden" => join(&self.encoder.hidden),
            "encoder.dim" => self.encoder.dim.to_string(),
            "encoder.bucket_width" => self.encoder.bucket_width.to_string(),
            "encoder.n_buckets" => self.encoder.n_buckets.to_string(),
            "train.loss" => self.train.loss.to_string(),
            "train.tau" => self.train.tau.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.gamma" => self.train.lr_gamma.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch" => self.train.batch_size.to_string(),
            "pretrain.lr" => self.pretrain.lr.to_string(),
            "pretrain.epochs" => self.pretrain.epochs.to_string(),
            "pretrain.batch" => self.pretrain.batch.to_string(),
            "generate.style" => enum_name(&self.generate.style),
            "generate.n_source" => self.generate.n_source.to_string(),
            "generate.client" => enum_name(&self.generate.client),
            "generate.max_inflight" => self.generate.max_inflight.to_string(),
            "generate.max_tokens" => self.generate.max_tokens.to_string(),
            "generate.retries" => self.generate.retries.to_string(),
            "generate.backoff_ms" => self.generate.backoff_ms.to_string(),
            "generate.url" => self.generate.http.url.clone(),
            "generate.prompt_field" => self.generate.http.prompt_field.clone(),
            "generate.max_tokens_field" => self.generate.http.max_tokens_field.clone(),
            "generate.response_pointer" => self.generate.http.response_pointer.clone(),
            "generate.timeout_secs" => self.generate.http.timeout_secs.to_string(),
            "eval.style" => enum_name(&self.eval.style),
            "eval.n_seeds" => self.eval.n_seeds.to_string(),
            "eval.n_pairs" => self.eval.n_pairs.to_string(),
            "eval.exclude" => join(&self.eval.exclude),
            "eval.alpha" => self.eval.alpha.to_string(),
            "eval.top_k" => self.eval.top_k.to_string(),
            "eval.split" => enum_name(&self.eval.split),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        })
    }

    /// Applies a config file's text. Blank lines and lines starting with `#`
    /// or `;` are ignored; every assignment must follow a `[section]` header.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = n + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {lineno}: unterminated section header")))?;
                section = Some(name.trim().to_owned());
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {lineno}: expected key = value")))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::Config(format!("line {lineno}: key outside of any [section]")))?;
            let key = format!("{sec}.{}", k.trim());
            self.set(&key, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {lineno}: {m}")),
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies `PDALIGN_<SECTION>_<KEY>` variables (e.g. `PDALIGN_TRAIN_LR`).
    /// Unrecognised `PDALIGN_*` names are errors.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (name, value) in vars {
            let Some(rest) = name.as_ref().strip_prefix(ENV_PREFIX) else { continue };
            let key = KEYS
                .iter()
                .find(|k| env_name(k) == name.as_ref())
                .ok_or_else(|| Error::Config(format!("unknown environment override {}{rest}", ENV_PREFIX)))?;
            self.set(key, value.as_ref())?;
        }
        Ok(())
    }

    /// World config with the run seed applied.
    pub fn world_config(&self) -> ToyWorldConfig {
        ToyWorldConfig { seed: self.seed, ..self.world.clone() }
    }

    /// Difference-finetuning config with the run seed and workers applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, workers: self.workers, ..self.train.clone() }
    }

    /// Caption-alignment config; the position table stays frozen.
    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.pretrain.lr,
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch,
            train_positional: false,
            ..self.train_config()
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.generate.retries,
            initial_backoff: std::time::Duration::from_millis(self.generate.backoff_ms),
        }
    }

    /// Seeds used for resampled evaluation: `seed, seed + 1, ...`.
    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval.n_seeds as u64).map(|i| self.seed + i).collect()
    }

    /// Resolved values as `section.key = value` pairs, in [`KEYS`] order.
    pub fn resolved(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k).unwrap_or_default())).collect()
    }
}

/// Environment variable name for a `section.key`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}
