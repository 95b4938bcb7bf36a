//! Run configuration: one JSON document drives every command. Paths are
//! resolved relative to the config file's directory; the `--out` flag, then
//! `out_dir` in the config, then the `FUSECAST_OUT` environment variable
//! decide where artifacts land.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fusecast::featsel::AicSampleSize;
use fusecast::ingest::EdgePolicy;
use fusecast::net::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub path: PathBuf,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    pub value_column: String,
}

fn default_date_column() -> String {
    "date".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaSettings {
    /// Scanned when `fixed_k` is absent.
    #[serde(default = "default_k_range")]
    pub k_range: (usize, usize),
    #[serde(default)]
    pub fixed_k: Option<usize>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// None means the 50/K convention.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub stopwords: Vec<String>,
    /// None selects every topic of the fitted model.
    #[serde(default)]
    pub selected_topics: Option<Vec<usize>>,
}

fn default_k_range() -> (usize, usize) {
    (2, 5)
}
fn default_iterations() -> usize {
    120
}
fn default_beta() -> f64 {
    0.01
}
fn default_top_n() -> usize {
    8
}
fn default_min_count() -> usize {
    1
}

impl Default for LdaSettings {
    fn default() -> Self {
        Self {
            k_range: default_k_range(),
            fixed_k: None,
            iterations: default_iterations(),
            alpha: None,
            beta: default_beta(),
            top_n: default_top_n(),
            min_count: default_min_count(),
            stopwords: Vec::new(),
            selected_topics: None,
        }
    }
}

/// Which feature rows the lag shift applies to when building the modeling
/// frame. The lag scan itself always covers every feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagApplyTo {
    /// Shift quantitative candidates only; textual rows stay as pooled.
    Quantitative,
    All,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagSettings {
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default = "default_apply_to")]
    pub apply_to: LagApplyTo,
    #[serde(default)]
    pub sample_size: AicSampleSize,
}

fn default_max_lag() -> usize {
    10
}
fn default_apply_to() -> LagApplyTo {
    LagApplyTo::Quantitative
}

impl Default for LagSettings {
    fn default() -> Self {
        Self {
            max_lag: default_max_lag(),
            apply_to: default_apply_to(),
            sample_size: AicSampleSize::Raw,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfeSettings {
    pub keep: usize,
    #[serde(default = "default_step")]
    pub step: usize,
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: bool,
}

fn default_step() -> usize {
    1
}
fn default_n_trees() -> usize {
    60
}
fn default_min_leaf() -> usize {
    2
}
fn default_bootstrap() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneSettings {
    #[serde(default = "default_n_trials")]
    pub n_trials: usize,
    /// Epochs per trial (shorter than the final training run).
    #[serde(default = "default_tune_epochs")]
    pub epochs: usize,
    #[serde(default = "default_n_startup")]
    pub n_startup: usize,
    #[serde(default = "default_n_warmup")]
    pub n_warmup: u64,
}

fn default_n_trials() -> usize {
    15
}
fn default_tune_epochs() -> usize {
    12
}
fn default_n_startup() -> usize {
    5
}
fn default_n_warmup() -> u64 {
    3
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            n_trials: default_n_trials(),
            epochs: default_tune_epochs(),
            n_startup: default_n_startup(),
            n_warmup: default_n_warmup(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Feature name of the forecast target (its series supplies the calendar).
    pub target: String,
    pub series: Vec<SeriesSpec>,
    pub corpus: PathBuf,
    #[serde(default)]
    pub edge_policy: EdgePolicy,
    #[serde(default)]
    pub lda: LdaSettings,
    #[serde(default)]
    pub lags: LagSettings,
    pub rfe: RfeSettings,
    pub model: ModelConfig,
    #[serde(default)]
    pub tune: TuneSettings,
    /// Leading calendar days that form the training period.
    pub train_days: usize,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Load a config and resolve its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for s in &mut cfg.series {
            s.path = resolve(base, &s.path);
        }
        cfg.corpus = resolve(base, &cfg.corpus);
        cfg.out_dir = cfg.out_dir.map(|d| resolve(base, &d));
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            bail!("config lists no series");
        }
        if !self.series.iter().any(|s| s.value_column == self.target) {
            bail!("target '{}' is not among the series value columns", self.target);
        }
        if self.train_days < 2 {
            bail!("train_days must be at least 2");
        }
        self.model
            .validate_structure()
            .context("model config invalid")?;
        Ok(())
    }

    /// Output directory precedence: --out flag, config `out_dir`, the
    /// FUSECAST_OUT environment variable, then ./out.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Some(d) = &self.out_dir {
            return d.clone();
        }
        if let Ok(env) = std::env::var("FUSECAST_OUT") {
            return PathBuf::from(env);
        }
        PathBuf::from("out")
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
