//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Unknown keys are rejected. The
//! canonical dump ([`RunConfig::to_kv_text`]) lists every key in a fixed
//! order; its SHA-256 prefix is the config hash embedded in every report.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::datasets::GeneratorKind;
use crate::error::{Error, Result};
use crate::neuralcore::ModelSpec;
use crate::seed::hex_digest;
use crate::smoothing::SmoothingPolicy;
use crate::trainer::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: GeneratorKind,
    pub classes: usize,
    pub per_class: usize,
    pub target_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub rotation: f64,
    pub scale: f64,
    /// One entry per source domain.
    pub source_rotations: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: GeneratorKind::Blobs,
            classes: 4,
            per_class: 250,
            target_per_class: 250,
            test_per_class: 100,
            noise: 0.3,
            rotation: 50.0,
            scale: 1.0,
            source_rotations: vec![0.0],
        }
    }
}

impl DataConfig {
    pub fn class_count(&self) -> usize {
        match self.kind {
            GeneratorKind::Blobs => self.classes,
            GeneratorKind::Moons => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub seeds: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub feature_dims: Vec<usize>,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub schedule: Schedule,
    pub smoothing: SmoothingPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            seeds: 1,
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            feature_dims: vec![64, 32],
            classifier_hidden: 32,
            dropout: 0.75,
            schedule: Schedule::desk(),
            smoothing: SmoothingPolicy::default(),
        }
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "seed",
    "seeds",
    "out",
    "data.kind",
    "data.classes",
    "data.per_class",
    "data.target_per_class",
    "data.test_per_class",
    "data.noise",
    "data.rotation",
    "data.scale",
    "data.source_rotations",
    "model.feature_dims",
    "model.classifier_hidden",
    "model.dropout",
    "train.pretrain_iterations",
    "train.pretrain_lr",
    "train.adapt_lr",
    "train.cycles",
    "train.steps",
    "train.resample_period",
    "train.dropout",
    "mcd.iterations",
    "mcd.rate",
    "batch.size",
    "batch.beta",
    "dss.epsilon",
    "dss.pretrain",
    "dss.adapt",
    "reweigh",
];

/// Keys that do not influence results and are left out of the hash.
const UNHASHED: &[&str] = &["seed", "seeds", "out"];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| num(key, v)).collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Desk-scale rotated-moons fixture.
    pub fn moons() -> Self {
        let mut cfg = RunConfig::default();
        cfg.data.kind = GeneratorKind::Moons;
        cfg.data.classes = 2;
        cfg.data.per_class = 300;
        cfg.data.target_per_class = 300;
        cfg.data.noise = 0.1;
        cfg.data.rotation = 45.0;
        cfg
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.schedule;
        match key {
            "seed" => self.seed = num(key, v)?,
            "seeds" => self.seeds = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data.kind" => {
                self.data.kind = match v {
                    "blobs" => GeneratorKind::Blobs,
                    "moons" => GeneratorKind::Moons,
                    _ => return Err(Error::Config(format!("{key}: expected blobs|moons, got {v:?}"))),
                }
            }
            "data.classes" => self.data.classes = num(key, v)?,
            "data.per_class" => self.data.per_class = num(key, v)?,
            "data.target_per_class" => self.data.target_per_class = num(key, v)?,
            "data.test_per_class" => self.data.test_per_class = num(key, v)?,
            "data.noise" => self.data.noise = num(key, v)?,
            "data.rotation" => self.data.rotation = num(key, v)?,
            "data.scale" => self.data.scale = num(key, v)?,
            "data.source_rotations" => self.data.source_rotations = list(key, v)?,
            "model.feature_dims" => self.feature_dims = list(key, v)?,
            "model.classifier_hidden" => self.classifier_hidden = num(key, v)?,
            "model.dropout" => self.dropout = num(key, v)?,
            "train.pretrain_iterations" => s.pretrain_iterations = num(key, v)?,
            "train.pretrain_lr" => s.pretrain_lr = num(key, v)?,
            "train.adapt_lr" => s.adapt_lr = num(key, v)?,
            "train.cycles" => s.cycles = num(key, v)?,
            "train.steps" => s.steps = num(key, v)?,
            "train.resample_period" => s.resample_period = num(key, v)?,
            "train.dropout" => s.train_dropout = num(key, v)?,
            "mcd.iterations" => s.mcd_iterations = num(key, v)?,
            "mcd.rate" => s.mcd_rate = num(key, v)?,
            "batch.size" => s.batch_size = num(key, v)?,
            "batch.beta" => s.beta = if v == "auto" { None } else { Some(num(key, v)?) },
            "dss.epsilon" => self.smoothing.epsilon = num(key, v)?,
            "dss.pretrain" => self.smoothing.pretrain = v.parse().map_err(|e| prefixed(key, e))?,
            "dss.adapt" => self.smoothing.adapt = v.parse().map_err(|e| prefixed(key, e))?,
            "reweigh" => s.reweigh = v.parse().map_err(|e| prefixed(key, e))?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.schedule;
        Some(match key {
            "seed" => self.seed.to_string(),
            "seeds" => self.seeds.to_string(),
            "out" => self.out.display().to_string(),
            "data.kind" => match self.data.kind {
                GeneratorKind::Blobs => "blobs".into(),
                GeneratorKind::Moons => "moons".into(),
            },
            "data.classes" => self.data.classes.to_string(),
            "data.per_class" => self.data.per_class.to_string(),
            "data.target_per_class" => self.data.target_per_class.to_string(),
            "data.test_per_class" => self.data.test_per_class.to_string(),
            "data.noise" => self.data.noise.to_string(),
            "data.rotation" => self.data.rotation.to_string(),
            "data.scale" => self.data.scale.to_string(),
            "data.source_rotations" => join(&self.data.source_rotations),
            "model.feature_dims" => join(&self.feature_dims),
            "model.classifier_hidden" => self.classifier_hidden.to_string(),
            "model.dropout" => self.dropout.to_string(),
            "train.pretrain_iterations" => s.pretrain_iterations.to_string(),
            "train.pretrain_lr" => s.pretrain_lr.to_string(),
            "train.adapt_lr" => s.adapt_lr.to_string(),
            "train.cycles" => s.cycles.to_string(),
            "train.steps" => s.steps.to_string(),
            "train.resample_period" => s.resample_period.to_string(),
            "train.dropout" => s.train_dropout.to_string(),
            "mcd.iterations" => s.mcd_iterations.to_string(),
            "mcd.rate" => s.mcd_rate.to_string(),
            "batch.size" => s.batch_size.to_string(),
            "batch.beta" => s.beta.map_or_else(|| "auto".into(), |b| b.to_string()),
            "dss.epsilon" => self.smoothing.epsilon.to_string(),
            "dss.pretrain" => self.smoothing.pretrain.to_string(),
            "dss.adapt" => self.smoothing.adapt.to_string(),
            "reweigh" => s.reweigh.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        KEYS.iter().fold(String::new(), |mut out, k| {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
            out
        })
    }

    /// Hash over every result-affecting key (seed and output excluded).
    pub fn hash(&self) -> String {
        let text: String = KEYS
            .iter()
            .filter(|k| !UNHASHED.contains(k))
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect();
        hex_digest(text.as_bytes())[..16].to_string()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            input_dim: 2,
            feature_dims: self.feature_dims.clone(),
            classifier_hidden: self.classifier_hidden,
            classes: self.data.class_count(),
            dropout_rate: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if self.data.kind == GeneratorKind::Blobs && self.data.classes < 2 {
            return Err(Error::Config("data.classes must be >= 2".into()));
        }
        if self.data.per_class == 0 || self.data.target_per_class == 0 {
            return Err(Error::Config("data.per_class must be >= 1".into()));
        }
        if self.data.source_rotations.is_empty() || self.data.source_rotations.len() > 255 {
            return Err(Error::Config("data.source_rotations needs 1..=255 entries".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("model.dropout must lie in [0, 1)".into()));
        }
        if self.feature_dims.is_empty() || self.feature_dims.contains(&0) {
            return Err(Error::Config("model.feature_dims must be positive widths".into()));
        }
        if self.classifier_hidden == 0 {
            return Err(Error::Config("model.classifier_hidden must be >= 1".into()));
        }
        self.schedule.validate()?;
        self.smoothing.validate()
    }
}

fn prefixed(key: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{key}: {msg}")),
        other => Error::Config(format!("{key}: {other}")),
    }
}
