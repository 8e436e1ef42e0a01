//! JSON run configuration.
//!
//! Every field is either validated or defaulted; unknown fields are
//! rejected. serde_json's diagnostics carry the line and column.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, load_csv_with_classes, make_blobs, BlobSpec, CsvOptions, Dataset};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default)]
        metadata_columns: Vec<String>,
        /// Separate holdout file; takes precedence over `holdout`.
        #[serde(default)]
        holdout_path: Option<PathBuf>,
        /// Rows split off at random for evaluation.
        #[serde(default)]
        holdout: usize,
    },
    Blobs {
        classes: usize,
        points: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        holdout: usize,
    },
}

fn default_dim() -> usize {
    2
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub metrics_csv: Option<PathBuf>,
    pub log_jsonl: Option<PathBuf>,
    /// Directory for per-run and aggregate files in a sweep.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_repeats() -> usize {
    1
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative dataset paths resolve against the config's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        if let DatasetSource::Csv { path, holdout_path, .. } = &mut self.dataset {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if let Some(h) = holdout_path {
                if h.is_relative() {
                    *h = base.join(&*h);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be ≥ 1".into()));
        }
        if let DatasetSource::Blobs { classes, points, dim, separation, .. } = &self.dataset {
            if *classes < 2 || points < classes || *dim == 0 || !separation.is_finite() {
                return Err(Error::Config(
                    "blobs need classes ≥ 2, points ≥ classes, dim ≥ 1 and a finite separation".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Loads or generates the dataset; returns `(pool, holdout)`.
pub fn load_dataset(source: &DatasetSource) -> Result<(Dataset, Option<Dataset>)> {
    match source {
        DatasetSource::Csv {
            path,
            label_column,
            metadata_columns,
            holdout_path,
            holdout,
        } => {
            let opts = CsvOptions {
                label_column: label_column.clone(),
                metadata_columns: metadata_columns.clone(),
            };
            let data = load_csv(path, &opts)?;
            if let Some(hp) = holdout_path {
                let held = load_csv_with_classes(hp, &opts, &data.class_names)?;
                Ok((data, Some(held)))
            } else if *holdout > 0 {
                let (pool, held) = data.split(*holdout, 0)?;
                Ok((pool, Some(held)))
            } else {
                Ok((data, None))
            }
        }
        DatasetSource::Blobs {
            classes,
            points,
            dim,
            separation,
            seed,
            holdout,
        } => {
            let data = make_blobs(&BlobSpec {
                classes: *classes,
                points: points + holdout,
                dim: *dim,
                separation: *separation,
                seed: *seed,
            })?;
            if *holdout > 0 {
                let (pool, held) = data.split(*holdout, seed.wrapping_add(1))?;
                Ok((pool, Some(held)))
            } else {
                Ok((data, None))
            }
        }
    }
}
