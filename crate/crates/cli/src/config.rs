//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known; a typo is an error rather than a silently ignored setting.

use std::fmt;
use std::path::{Path, PathBuf};

use sembed_core::datasets::SynthSpec;
use sembed_core::losses::LossConfig;
use sembed_core::{EncoderConfig, KnnConfig, PoolingStrategy, TrainConfig, TrainSetup};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: expected `key = value`, got {text:?}")]
    Syntax { origin: String, text: String },
    #[error("{origin}: unknown key {key:?}")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: bad value {value:?} for {key}: {reason}")]
    BadValue {
        origin: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Every tunable of a run, merged from the config file, `--set` overrides
/// and dedicated flags (in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    /// Upper bound on the vocabulary built from training text, specials included.
    pub vocab_max: usize,

    pub epochs_nli: usize,
    pub batch_nli: usize,
    pub epochs_sts: usize,
    pub batch_sts_single: usize,
    pub batch_sts_two_step: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub pooling: PoolingStrategy,
    pub mnrl_scale: f64,
    pub sts_score_max: f64,

    pub knn_p: f64,
    pub knn_k_grid: Vec<usize>,

    pub synth: SynthSpec,

    pub seed: Option<u64>,
    pub nli: Option<PathBuf>,
    pub sts: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub md: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let train = TrainConfig::default();
        let knn = KnnConfig::default();
        Self {
            hidden_dim: enc.hidden_dim,
            num_layers: enc.num_layers,
            num_heads: enc.num_heads,
            ff_dim: enc.ff_dim,
            max_len: enc.max_len,
            vocab_max: enc.vocab_size,
            epochs_nli: train.epochs_nli,
            batch_nli: train.batch_nli,
            epochs_sts: train.epochs_sts,
            batch_sts_single: train.batch_sts_single,
            batch_sts_two_step: train.batch_sts_two_step,
            learning_rate: train.learning_rate,
            warmup_fraction: train.warmup_fraction,
            weight_decay: train.weight_decay,
            pooling: train.pooling,
            mnrl_scale: train.loss.mnrl_scale,
            sts_score_max: train.loss.sts_score_max,
            knn_p: knn.p,
            knn_k_grid: knn.k_grid,
            synth: SynthSpec::default(),
            seed: None,
            nli: None,
            sts: None,
            out: None,
            trace: None,
            csv: None,
            md: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "hidden_dim",
    "num_layers",
    "num_heads",
    "ff_dim",
    "max_len",
    "vocab_max",
    "epochs_nli",
    "batch_nli",
    "epochs_sts",
    "batch_sts_single",
    "batch_sts_two_step",
    "learning_rate",
    "warmup_fraction",
    "weight_decay",
    "pooling",
    "mnrl_scale",
    "sts_score_max",
    "knn_p",
    "knn_k_grid",
    "synth_topics",
    "synth_words_per_topic",
    "synth_min_words",
    "synth_max_words",
    "synth_triplets",
    "synth_pairs",
    "synth_labeled",
    "synth_train_fraction",
    "synth_validation_fraction",
    "seed",
    "nli",
    "sts",
    "out",
    "trace",
    "csv",
    "md",
];

fn parse<T: std::str::FromStr>(origin: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        origin: origin.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, name: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("{name}:{}", i + 1);
            self.apply_assignment(line, &origin)?;
        }
        Ok(())
    }

    /// Applies one `key=value` string, as given to `--set`.
    pub fn apply_assignment(&mut self, assignment: &str, origin: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: origin.to_string(),
            text: assignment.to_string(),
        })?;
        self.set(key.trim(), value.trim(), origin)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let o = origin;
        match key {
            "hidden_dim" => self.hidden_dim = parse(o, key, value)?,
            "num_layers" => self.num_layers = parse(o, key, value)?,
            "num_heads" => self.num_heads = parse(o, key, value)?,
            "ff_dim" => self.ff_dim = parse(o, key, value)?,
            "max_len" => self.max_len = parse(o, key, value)?,
            "vocab_max" => self.vocab_max = parse(o, key, value)?,
            "epochs_nli" => self.epochs_nli = parse(o, key, value)?,
            "batch_nli" => self.batch_nli = parse(o, key, value)?,
            "epochs_sts" => self.epochs_sts = parse(o, key, value)?,
            "batch_sts_single" => self.batch_sts_single = parse(o, key, value)?,
            "batch_sts_two_step" => self.batch_sts_two_step = parse(o, key, value)?,
            "learning_rate" => self.learning_rate = parse(o, key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse(o, key, value)?,
            "weight_decay" => self.weight_decay = parse(o, key, value)?,
            "pooling" => self.pooling = parse(o, key, value)?,
            "mnrl_scale" => self.mnrl_scale = parse(o, key, value)?,
            "sts_score_max" => self.sts_score_max = parse(o, key, value)?,
            "knn_p" => self.knn_p = parse(o, key, value)?,
            "knn_k_grid" => {
                self.knn_k_grid = value
                    .split(',')
                    .map(|v| parse(o, key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            "synth_topics" => self.synth.topics = parse(o, key, value)?,
            "synth_words_per_topic" => self.synth.words_per_topic = parse(o, key, value)?,
            "synth_min_words" => self.synth.min_words = parse(o, key, value)?,
            "synth_max_words" => self.synth.max_words = parse(o, key, value)?,
            "synth_triplets" => self.synth.triplets = parse(o, key, value)?,
            "synth_pairs" => self.synth.pairs = parse(o, key, value)?,
            "synth_labeled" => self.synth.labeled = parse(o, key, value)?,
            "synth_train_fraction" => self.synth.train_fraction = parse(o, key, value)?,
            "synth_validation_fraction" => self.synth.validation_fraction = parse(o, key, value)?,
            "seed" => self.seed = Some(parse(o, key, value)?),
            "nli" => self.nli = Some(value.into()),
            "sts" => self.sts = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "trace" => self.trace = Some(value.into()),
            "csv" => self.csv = Some(value.into()),
            "md" => self.md = Some(value.into()),
            _ => {
                return Err(ConfigError::UnknownKey {
                    origin: origin.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ff_dim: self.ff_dim,
            max_len: self.max_len,
            seed,
        }
    }

    pub fn train_config(&self, setup: TrainSetup, seed: u64) -> TrainConfig {
        TrainConfig {
            setup,
            epochs_nli: self.epochs_nli,
            batch_nli: self.batch_nli,
            epochs_sts: self.epochs_sts,
            batch_sts_single: self.batch_sts_single,
            batch_sts_two_step: self.batch_sts_two_step,
            learning_rate: self.learning_rate,
            warmup_fraction: self.warmup_fraction,
            weight_decay: self.weight_decay,
            seed,
            pooling: self.pooling,
            loss: LossConfig {
                mnrl_scale: self.mnrl_scale,
                sts_score_max: self.sts_score_max,
            },
        }
    }

    pub fn knn_config(&self) -> KnnConfig {
        KnnConfig {
            p: self.knn_p,
            k_grid: self.knn_k_grid.clone(),
        }
    }

    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            ..self.synth.clone()
        }
    }

    /// Checks every section and reports all problems at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        // vocab_max stands in for the final vocabulary size here
        if let Err(e) = self.encoder_config(self.vocab_max, 0).validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.train_config(TrainSetup::Nli, 0).validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.knn_config().validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.synth.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}
