//! TOML configuration: protocol settings plus per-dataset architecture,
//! hyper-parameters and data source. The built-in defaults live in
//! `config/default.toml`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, CsvSchema, Dataset};
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::loss::LossVariant;
use crate::nn::{Activation, ArchSpec};

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

/// Environment variable naming the dataset root.
pub const DATA_ENV: &str = "HYBRIDLOSS_DATA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub epochs: usize,
    pub runs: usize,
    pub folds: usize,
    pub master_seed: u64,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub variants: Vec<LossVariant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv { file: PathBuf, schema: PathBuf },
    /// (images, labels) file pairs, concatenated in order.
    Idx { parts: Vec<[PathBuf; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub source: DataSource,
}

impl DatasetConfig {
    pub fn arch(&self) -> ArchSpec {
        ArchSpec::mlp(self.input, &self.hidden, self.output, self.activation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub protocol: Protocol,
    pub datasets: BTreeMap<String, DatasetConfig>,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig::parse(DEFAULT_CONFIG).expect("built-in config parses")
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (name, d) in &cfg.datasets {
            d.arch().validate().map_err(|e| Error::Config(format!("dataset `{name}`: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CliConfig::parse(&text)
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetConfig> {
        self.datasets.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.datasets.keys().map(String::as_str).collect();
            Error::Config(format!("unknown dataset `{name}`; configured: {}", known.join(", ")))
        })
    }

    /// Experiment settings for `name` with the protocol section applied.
    pub fn experiment_config(&self, name: &str) -> Result<ExperimentConfig> {
        let d = self.dataset(name)?;
        let p = &self.protocol;
        let mut c = ExperimentConfig::new(name, d.arch(), d.learning_rate, d.batch_size);
        c.epochs = p.epochs;
        c.runs = p.runs;
        c.folds = p.folds;
        c.master_seed = p.master_seed;
        c.warmup_epochs = p.warmup_epochs;
        c.patience = p.patience;
        c.jobs = p.jobs;
        c.variants = p.variants.clone();
        Ok(c)
    }

    pub fn load_dataset(&self, root: &Path, name: &str) -> Result<Dataset> {
        let mut ds = match &self.dataset(name)?.source {
            DataSource::Csv { file, schema } => {
                let schema = CsvSchema::from_file(&root.join(schema))?;
                data::load_csv(&root.join(file), &schema)?
            }
            DataSource::Idx { parts } => {
                let mut acc: Option<Dataset> = None;
                for [images, labels] in parts {
                    let part = data::load_idx(&root.join(images), &root.join(labels))?;
                    acc = Some(match acc {
                        None => part,
                        Some(a) => a.concat(&part)?,
                    });
                }
                acc.ok_or_else(|| Error::Config(format!("dataset `{name}` lists no IDX files")))?
            }
        };
        ds.name = name.to_string();
        Ok(ds)
    }
}

/// `explicit`, else `$HYBRIDLOSS_DATA`, else `./data`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}
