//! TOML manifest for `compare`.
//!
//! ```toml
//! sts = "sts_test.jsonl"
//!
//! [[classification]]
//! name = "topics"
//! train = "cls_train.jsonl"
//! val = "cls_val.jsonl"
//! test = "cls_test.jsonl"
//!
//! [[rows]]
//! name = "tiny"
//! checkpoint = "tiny.semb"
//! pooling = "mean"
//!
//! [[rows]]
//! name = "vectors"
//! wordvecs = "vectors.txt"
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sembed_core::PoolingStrategy;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sts: Option<PathBuf>,
    #[serde(default)]
    pub classification: Vec<ClassificationSet>,
    pub rows: Vec<ManifestRow>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSet {
    pub name: String,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub name: String,
    pub checkpoint: Option<PathBuf>,
    pub wordvecs: Option<PathBuf>,
    /// Subword bucket vectors for out-of-vocabulary words.
    pub buckets: Option<PathBuf>,
    pub pooling: Option<PoolingStrategy>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest = Self::parse(&text)?;
        manifest.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(manifest)
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let manifest: Manifest = toml::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<(), ManifestError> {
        if self.rows.is_empty() {
            return Err(ManifestError::Invalid("no rows".into()));
        }
        if self.sts.is_none() && self.classification.is_empty() {
            return Err(ManifestError::Invalid("no datasets to evaluate".into()));
        }
        for row in &self.rows {
            match (&row.checkpoint, &row.wordvecs) {
                (Some(_), None) => {}
                (None, Some(_)) if row.pooling.is_none() => {}
                (None, Some(_)) => {
                    return Err(ManifestError::Invalid(format!(
                        "row {:?}: pooling applies to checkpoints only",
                        row.name
                    )))
                }
                _ => {
                    return Err(ManifestError::Invalid(format!(
                        "row {:?} needs exactly one of checkpoint and wordvecs",
                        row.name
                    )))
                }
            }
        }
        let mut names: Vec<&str> = self.classification.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ManifestError::Invalid("duplicate classification dataset name".into()));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.sts.as_mut() {
            fix(p);
        }
        for c in &mut self.classification {
            fix(&mut c.train);
            fix(&mut c.val);
            fix(&mut c.test);
        }
        for r in &mut self.rows {
            for p in [&mut r.checkpoint, &mut r.wordvecs, &mut r.buckets].into_iter().flatten() {
                fix(p);
            }
        }
    }
}
