//! Run configuration: one TOML file, `--set path=value` overrides, full
//! validation before anything touches the disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ucgan::data::SyntheticSpec;
use ucgan::eval::{DEFAULT_EVAL_SAMPLES, DEFAULT_ORACLE_FLOOR};
use ucgan::latent::{ClassifierConfig, ExtractorConfig};
use ucgan::training::TrainConfig;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub extractor: ExtractorSection,
    pub oracle: OracleSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub stats: StatsSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            out_dir: "runs".into(),
            data: DataConfig::default(),
            extractor: ExtractorSection::default(),
            oracle: OracleSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            stats: StatsSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    pub idx: IdxPaths,
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
    /// Area-averaging resize to `resize × resize`.
    pub resize: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            idx: IdxPaths::default(),
            limit: None,
            resize: None,
        }
    }
}

/// Image and label files, gzipped or raw. Relative paths resolve against the
/// config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdxPaths {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorSection {
    /// Train the classifier behind the extractor; otherwise use its seeded initial weights.
    pub trained: bool,
    pub tap: usize,
    pub pool: usize,
    pub classifier: ClassifierConfig,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        let d = ExtractorConfig::default();
        Self {
            trained: true,
            tap: d.tap,
            pool: d.pool,
            classifier: d.classifier,
        }
    }
}

impl ExtractorSection {
    pub fn config(&self) -> ExtractorConfig {
        ExtractorConfig {
            classifier: self.classifier.clone(),
            tap: self.tap,
            pool: self.pool,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub classifier: ClassifierConfig,
    pub floor: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig {
                seed: 99,
                ..ClassifierConfig::default()
            },
            floor: DEFAULT_ORACLE_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Generated samples behind the final report.
    pub samples: usize,
    /// Generated samples behind each curve snapshot.
    pub snapshot_samples: usize,
    /// Iterations between checkpoints; the last iteration is always saved.
    pub checkpoint_every: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            samples: DEFAULT_EVAL_SAMPLES,
            snapshot_samples: 512,
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    Extractor,
    /// Seeded Gaussian features, independent of the images.
    Random,
    /// One-hot class codes: a perfectly clustered reference.
    OneHot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    pub ks: Vec<usize>,
    pub features: FeatureSource,
    pub random_dim: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 5],
            features: FeatureSource::Extractor,
            random_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub levels: Vec<f64>,
    pub noise_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 0.5, 1.0],
            noise_seed: 0,
        }
    }
}

fn config_error(what: impl Into<String>) -> CliError {
    CliError::Config(what.into())
}

/// Replaces the value at a dotted path, creating intermediate tables.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not of the form path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("override path {path:?} has an empty segment")));
    }
    let raw = raw.trim();
    // bare words are strings; everything else is parsed as a TOML value
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut table = root;
    for k in parents {
        let slot = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = slot
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override path {path:?} runs through the non-table {k:?}")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// TOML has no null; an absent key deserialises to the same `None`.
fn drop_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|_, x| !x.is_null());
            map.values_mut().for_each(drop_nulls);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(drop_nulls),
        _ => {}
    }
}

impl RunConfig {
    /// Parses TOML text with overrides applied; errors name the offending field.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_error(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let value = toml::Value::Table(table);
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_error(format!("{path}: {}", e.into_inner().message()))
        })
    }

    /// Reads a TOML config, or the `config` of a run manifest (`.json`).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let is_manifest = path.extension().is_some_and(|e| e == "json");
        let mut config = if is_manifest {
            let mut manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| config_error(format!("manifest: {e}")))?;
            let inner = manifest
                .get_mut("config")
                .ok_or_else(|| config_error("manifest has no config"))?;
            drop_nulls(inner);
            let text = toml::to_string(inner).map_err(|e| config_error(format!("manifest config: {e}")))?;
            Self::from_toml(&text, overrides)?
        } else {
            Self::from_toml(&text, overrides)?
        };
        // Manifests already hold absolute paths; stored configs stay valid wherever the run is moved from.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.data.idx.images, &mut config.data.idx.labels]
            .into_iter()
            .flatten()
        {
            if p.is_relative() && !is_manifest {
                *p = std::path::absolute(base.join(&*p)).map_err(|e| CliError::io(&*p, e))?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, e: ucgan::Error| config_error(format!("{name}: {e}"));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(config_error(format!(
                "name: {:?} is not a valid directory name",
                self.name
            )));
        }
        match self.data.source {
            DataSource::Synthetic => self.data.synthetic.validate().map_err(|e| field("data.synthetic", e))?,
            DataSource::Idx => {
                if self.data.idx.images.is_none() || self.data.idx.labels.is_none() {
                    return Err(config_error("data.idx: both images and labels are required"));
                }
            }
        }
        if self.data.limit == Some(0) || self.data.resize == Some(0) {
            return Err(config_error("data: limit and resize must be positive"));
        }
        self.extractor
            .classifier
            .validate()
            .map_err(|e| field("extractor.classifier", e))?;
        if self.extractor.tap == 0 || self.extractor.pool == 0 {
            return Err(config_error("extractor: tap and pool must be positive"));
        }
        self.oracle
            .classifier
            .validate()
            .map_err(|e| field("oracle.classifier", e))?;
        if !(0.0..=1.0).contains(&self.oracle.floor) {
            return Err(config_error("oracle.floor: must lie in [0, 1]"));
        }
        self.train.validate().map_err(|e| field("train", e))?;
        if self.eval.samples == 0 || self.eval.snapshot_samples == 0 || self.eval.checkpoint_every == 0 {
            return Err(config_error(
                "eval: samples, snapshot_samples and checkpoint_every must be positive",
            ));
        }
        if self.stats.ks.is_empty() || self.stats.ks.contains(&0) {
            return Err(config_error("stats.ks: need at least one k, each at least 1"));
        }
        if self.stats.random_dim == 0 {
            return Err(config_error("stats.random_dim: must be positive"));
        }
        if self.sweep.levels.is_empty()
            || self.sweep.levels.iter().any(|p| !(0.0..=1.0).contains(p))
            || self.sweep.levels.windows(2).any(|w| w[0] > w[1])
        {
            return Err(config_error("sweep.levels: need ascending values in [0, 1]"));
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }
}
