//! End-to-end composition: join quantitative and textual feature rows, pick
//! subsets, normalize, window, train, and evaluate on the chronological test
//! split. The ablation matrix and the sweep drivers all run through the same
//! cycle so cells differ only in the swept variable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, Family};
use crate::featsel::{minmax_normalize, FeatSelError};
use crate::ingest::{AlignedFrame, IngestError};
use crate::net::{self, make_windows, ModelConfig, NetError, TrainSplit};
use crate::textfeat::{DailyTextualFeatures, Selector, TextField};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("textual calendar does not match the quantitative calendar")]
    CalendarMismatch,
    #[error("feature name '{0}' already present in the frame")]
    DuplicateFeature(String),
    #[error("training span of {train_days} days leaves no {what} samples (window {w}, {days} days)")]
    BadSplit {
        train_days: usize,
        w: usize,
        days: usize,
        what: &'static str,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    FeatSel(#[from] FeatSelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Ablation family of a textual row: sentiment-by-source (A),
/// sentiment-by-topic (B), movement-by-source (C), movement-by-topic (D).
pub fn family_of(selector: Selector, field: TextField) -> Family {
    match (selector, field) {
        (Selector::News | Selector::Analysis, TextField::Sentiment) => Family::A,
        (Selector::Topic(_), TextField::Sentiment) => Family::B,
        (Selector::News | Selector::Analysis, TextField::Movement) => Family::C,
        (Selector::Topic(_), TextField::Movement) => Family::D,
    }
}

/// Append textual rows to the quantitative frame (shared calendar required)
/// and return the combined frame plus each textual row's family tag.
pub fn join_textual(
    quant: &AlignedFrame,
    textual: &DailyTextualFeatures,
) -> Result<(AlignedFrame, Vec<(String, Family)>), PipelineError> {
    if textual.calendar != quant.calendar {
        return Err(PipelineError::CalendarMismatch);
    }
    let mut frame = quant.clone();
    let mut tags = Vec::with_capacity(textual.rows.len());
    for row in &textual.rows {
        if frame.row_index(&row.name).is_some() {
            return Err(PipelineError::DuplicateFeature(row.name.clone()));
        }
        frame.push_row(row.name.clone(), row.values.clone())?;
        tags.push((row.name.clone(), family_of(row.selector, row.field)));
    }
    Ok((frame, tags))
}

/// Everything a train/evaluate cycle needs, prepared once and shared across
/// ablation cells and sweep points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineContext {
    /// Lag-adjusted frame holding the target, quantitative, and textual rows.
    pub frame: AlignedFrame,
    pub target: String,
    /// Names of the candidate quantitative features.
    pub quant: Vec<String>,
    /// Textual rows with their ablation families.
    pub textual: Vec<(String, Family)>,
    pub model: ModelConfig,
    /// Leading days of the frame that belong to the training period.
    pub train_days: usize,
}

impl PipelineContext {
    pub fn textual_names(&self) -> Vec<String> {
        self.textual.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn family_subset(&self, families: &[Family]) -> Vec<String> {
        self.textual
            .iter()
            .filter(|(_, fam)| families.contains(fam))
            .map(|(n, _)| n.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleResult {
    /// De-normalized test-period predictions, chronological.
    pub predictions: Vec<f64>,
    /// Original-scale actuals on the same days.
    pub actuals: Vec<f64>,
    /// Frame day index of each prediction's target.
    pub target_days: Vec<usize>,
    pub mae: f64,
    pub rmse: f64,
    pub train_losses: Vec<f64>,
}

/// One full train/evaluate pass over the chosen feature subset. The frame
/// rows are selected, min-max normalized, windowed, trained on the leading
/// `train_days` span, and evaluated on the remainder in original units.
pub fn run_cycle(
    ctx: &PipelineContext,
    quant_subset: &[String],
    textual_subset: &[String],
    seed: Option<u64>,
    window: Option<usize>,
) -> Result<CycleResult, PipelineError> {
    let mut names = vec![ctx.target.clone()];
    names.extend(quant_subset.iter().cloned());
    names.extend(textual_subset.iter().cloned());
    names.dedup();
    let sub = ctx.frame.select(&names)?;

    let (normalized, scales) = minmax_normalize(&sub);
    let target_scale = scales
        .iter()
        .find(|s| s.name == ctx.target)
        .expect("target row was selected")
        .clone();

    let w = window.unwrap_or(ctx.model.window);
    let days = normalized.n_days();
    let samples = make_windows(&normalized, &ctx.target, w)?;
    if ctx.train_days <= w {
        return Err(PipelineError::BadSplit {
            train_days: ctx.train_days,
            w,
            days,
            what: "training",
        });
    }
    let n_train = ctx.train_days - w;
    if n_train >= samples.len() {
        return Err(PipelineError::BadSplit {
            train_days: ctx.train_days,
            w,
            days,
            what: "test",
        });
    }

    let config = ModelConfig {
        window: w,
        seed: seed.unwrap_or(ctx.model.seed),
        ..ctx.model
    };
    let (params, train_losses) =
        net::train(&samples[..n_train], config, TrainSplit::Fraction(1.0))?;

    let test = &samples[n_train..];
    let predictions = net::predict_series(&params, test, &target_scale)?;
    let target_row = sub.row(&ctx.target).expect("target row exists");
    let target_days: Vec<usize> = test.iter().map(|s| s.target_day).collect();
    let actuals: Vec<f64> = target_days.iter().map(|&d| target_row[d]).collect();

    let mae = eval::mae(&predictions, &actuals)?;
    let rmse = eval::rmse(&predictions, &actuals)?;
    Ok(CycleResult {
        predictions,
        actuals,
        target_days,
        mae,
        rmse,
        train_losses,
    })
}

/// Stable 64-bit FNV-1a digest of a canonical JSON value, for embedding a
/// config fingerprint in report file names.
pub fn digest_json(value: &serde_json::Value) -> String {
    let text = value.to_string();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
