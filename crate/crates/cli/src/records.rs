//! Result records, the manifest, and their files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use frontlab_core::scaling::Quantity;
use frontlab_core::Frame;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn code_version() -> String {
    format!("frontlab {}", env!("CARGO_PKG_VERSION"))
}

/// One estimator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub estimator: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
    /// `original`, `rescaled`, or `none` for frame-free values.
    pub frame: String,
    pub sigma: Option<f64>,
    /// Abscissa for plots, e.g. `sigma`, `t` or `a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_quantity: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_quantity: Option<Quantity>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ResultRecord {
    pub fn with_x(mut self, x: f64, quantity: Option<Quantity>) -> Self {
        self.x = Some(x);
        self.x_quantity = quantity;
        self
    }

    pub fn with_quantity(mut self, q: Quantity) -> Self {
        self.value_quantity = Some(q);
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }

    pub fn frameless(mut self) -> Self {
        self.frame = "none".into();
        self
    }

    pub fn extra_f64(&self, key: &str) -> Option<f64> {
        self.extra.get(key).and_then(Value::as_f64)
    }
}

/// Stamps records with the identity of one configuration.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self { experiment_id: cfg.experiment_id(), config_hash: cfg.config_hash(), seed: cfg.seed }
    }

    pub fn record(&self, frame: &Frame, estimator: &str, value: f64, stderr: Option<f64>) -> CliResult<ResultRecord> {
        if !value.is_finite() {
            return Err(CliError::Estimation(format!("{estimator} is not finite ({value})")));
        }
        let sigma = frame.sigma();
        Ok(ResultRecord {
            experiment_id: self.experiment_id.clone(),
            estimator: estimator.to_string(),
            value,
            stderr: stderr.filter(|s| s.is_finite()),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            frame: frame.name().to_string(),
            sigma: sigma.is_finite().then_some(sigma),
            x: None,
            x_quantity: None,
            value_quantity: None,
            extra: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

/// Checks that `dir` exists and is a directory.
pub fn require_dir(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!("output directory {} does not exist", dir.display())))
    }
}

/// Serializes records one per line. All output of a run goes through here.
pub fn to_jsonl(records: &[ResultRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_atomically(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(contents)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_results(dir: &Path, name: &str, records: &[ResultRecord]) -> CliResult<PathBuf> {
    let path = dir.join(name);
    write_atomically(&path, to_jsonl(records).as_bytes())?;
    Ok(path)
}

pub fn write_manifest(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let m = Manifest { config: cfg.clone(), config_hash: cfg.config_hash(), seed: cfg.seed, code_version: code_version() };
    let path = cfg.output_dir.join(MANIFEST_FILE);
    write_atomically(&path, serde_json::to_string_pretty(&m)?.as_bytes())?;
    Ok(path)
}

pub fn read_results(path: &Path) -> CliResult<Vec<ResultRecord>> {
    let path = if path.is_dir() { path.join(RESULTS_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read results {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}
