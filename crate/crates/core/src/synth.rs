//! Seeded synthetic data with planted ground truth: an autoregressive
//! target, features that anticipate it at known lags, pure-noise features,
//! and a scored text corpus whose movement/sentiment channels couple to the
//! target's next-day behavior with adjustable strength.
//!
//! The generators exist to verify the pipeline at desk scale; they emit the
//! same tabular and structured-text formats the ingest and textfeat parsers
//! consume.

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{label_movement, AlignedFrame, IngestError, TradingCalendar};
use crate::textfeat::{Source, TextFeatError, TextRecord};

const BURN_IN: usize = 200;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("AR coefficients are non-stationary (spectral radius {0:.4})")]
    NonStationary(f64),
    #[error("text signal strength {0} outside [0, 1]")]
    BadSignal(f64),
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    TextFeat(#[from] TextFeatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A feature that carries the target's value `lag` days ahead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformativeFeature {
    pub lag: usize,
    pub loading: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub doc_len: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_days: usize,
    /// AR coefficients of the target's zero-mean component.
    pub ar_coefficients: Vec<f64>,
    pub noise_scale: f64,
    /// Constant added to the AR path (keeps the target positive).
    pub level: f64,
    pub informative: Vec<InformativeFeature>,
    /// One pure-noise feature per entry; the value is its scale.
    pub noise_features: Vec<f64>,
    /// Coupling strength between texts and the target, in [0, 1].
    pub text_signal: f64,
    /// Uniform inclusive range of texts per day.
    pub texts_per_day: (usize, usize),
    pub topics: TopicSpec,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_days: 470,
            ar_coefficients: vec![0.9],
            noise_scale: 0.005,
            level: 1.1,
            informative: vec![
                InformativeFeature { lag: 1, loading: 1.0, noise: 0.002 },
                InformativeFeature { lag: 2, loading: 0.8, noise: 0.002 },
                InformativeFeature { lag: 3, loading: 0.6, noise: 0.002 },
            ],
            noise_features: vec![0.01; 5],
            text_signal: 0.8,
            texts_per_day: (3, 8),
            topics: TopicSpec {
                n_topics: 3,
                words_per_topic: 20,
                doc_len: (8, 20),
            },
            start_date: NaiveDate::from_ymd_opt(2022, 4, 4).unwrap(),
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_days < 2 {
            return Err(SynthError::BadSpec("need at least 2 days".into()));
        }
        if !(0.0..=1.0).contains(&self.text_signal) {
            return Err(SynthError::BadSignal(self.text_signal));
        }
        if self.texts_per_day.0 > self.texts_per_day.1 {
            return Err(SynthError::BadSpec("texts_per_day range inverted".into()));
        }
        if self.topics.n_topics == 0 || self.topics.words_per_topic == 0 {
            return Err(SynthError::BadSpec("topic spec must be non-empty".into()));
        }
        let radius = companion_spectral_radius(&self.ar_coefficients);
        if radius >= 1.0 {
            return Err(SynthError::NonStationary(radius));
        }
        Ok(())
    }
}

fn companion_spectral_radius(coeffs: &[f64]) -> f64 {
    let p = coeffs.len();
    if p == 0 {
        return 0.0;
    }
    let companion = DMatrix::from_fn(p, p, |i, j| {
        if i == 0 {
            coeffs[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Weekday calendar of `n` days starting at `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> TradingCalendar {
    let mut days = Vec::with_capacity(n);
    let mut d = start;
    while days.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d = d.succ_opt().expect("date range");
    }
    TradingCalendar::new(days).expect("ascending weekday calendar")
}

/// Generate the daily panel. The target follows the configured AR process
/// around `level`; each informative feature holds `loading x target[d + lag]`
/// plus noise; noise features are independent Gaussian draws. Returns the
/// frame and the target's feature name.
pub fn gen_panel(spec: &SynthSpec) -> Result<(AlignedFrame, String), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_lag = spec.informative.iter().map(|f| f.lag).max().unwrap_or(0);
    let horizon = BURN_IN + spec.n_days + max_lag;

    let mut path = vec![0.0; horizon];
    for t in 0..horizon {
        let mut v = spec.noise_scale * normal(&mut rng);
        for (k, phi) in spec.ar_coefficients.iter().enumerate() {
            if t > k {
                v += phi * path[t - k - 1];
            }
        }
        path[t] = v;
    }
    let level_path: Vec<f64> = path.iter().map(|z| spec.level + z).collect();
    let target: Vec<f64> = level_path[BURN_IN..BURN_IN + spec.n_days].to_vec();

    let mut features = vec!["target".to_string()];
    let mut values = vec![target];
    for (i, f) in spec.informative.iter().enumerate() {
        let row: Vec<f64> = (0..spec.n_days)
            .map(|d| {
                f.loading * level_path[BURN_IN + d + f.lag] + f.noise * normal(&mut rng)
            })
            .collect();
        features.push(format!("info-{i}"));
        values.push(row);
    }
    for (j, scale) in spec.noise_features.iter().enumerate() {
        let row: Vec<f64> = (0..spec.n_days)
            .map(|_| spec.level + scale * normal(&mut rng))
            .collect();
        features.push(format!("noise-{j}"));
        values.push(row);
    }

    let calendar = weekday_calendar(spec.start_date, spec.n_days);
    let frame = AlignedFrame::new(calendar, features, values)?;
    Ok((frame, "target".to_string()))
}

/// Corpus with generator bookkeeping.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub records: Vec<TextRecord>,
    /// Planted topic (0-based) per record, in record order.
    pub planted_topics: Vec<usize>,
}

/// Generate scored texts for every day but the last (whose next-day movement
/// is undefined). With signal strength rho, each text's movement score is
/// rho times the true next-day label plus (1 - rho) uniform noise, and the
/// sentiment couples to the signed next-day return the same way.
pub fn gen_texts(
    spec: &SynthSpec,
    target: &[f64],
    calendar: &TradingCalendar,
) -> Result<GeneratedCorpus, SynthError> {
    spec.validate()?;
    if target.len() != calendar.len() {
        return Err(SynthError::BadSpec(format!(
            "target has {} days but calendar has {}",
            target.len(),
            calendar.len()
        )));
    }
    let labels = label_movement(target)?;
    let rho = spec.text_signal;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x7455));

    let mut records = Vec::new();
    let mut planted_topics = Vec::new();
    for (d, &label) in labels.iter().enumerate() {
        let ret = if target[d] != 0.0 {
            (target[d + 1] - target[d]) / target[d]
        } else {
            0.0
        };
        let n_texts = rng.gen_range(spec.texts_per_day.0..=spec.texts_per_day.1);
        for j in 0..n_texts {
            let movement = rho * label as f64 + (1.0 - rho) * rng.gen::<f64>();
            let sentiment =
                rho * ret.clamp(-1.0, 1.0) + (1.0 - rho) * (rng.gen::<f64>() * 2.0 - 1.0);
            let topic = rng.gen_range(0..spec.topics.n_topics);
            let len = rng.gen_range(spec.topics.doc_len.0..=spec.topics.doc_len.1);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let w = rng.gen_range(0..spec.topics.words_per_topic);
                    format!("t{topic}w{w:02}")
                })
                .collect();
            records.push(TextRecord {
                id: format!("text-{d}-{j}"),
                date: calendar.days()[d],
                source: if rng.gen::<bool>() {
                    Source::News
                } else {
                    Source::Analysis
                },
                sentiment: sentiment.clamp(-1.0, 1.0),
                movement: movement.clamp(0.0, 1.0),
                text: Some(words.join(" ")),
                tokens: None,
            });
            planted_topics.push(topic);
        }
    }
    crate::textfeat::validate_records(&records)?;
    Ok(GeneratedCorpus {
        records,
        planted_topics,
    })
}

/// Paths of a materialized synthetic workspace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkspaceManifest {
    pub target: String,
    /// (feature name, csv path) pairs, target first.
    pub series: Vec<(String, PathBuf)>,
    pub corpus: PathBuf,
}

/// Write the panel as one CSV per series plus the corpus document, using the
/// exact formats the ingest and textfeat parsers consume. Every seventh
/// interior value of the non-target series is blanked so the downstream
/// interpolation path gets exercised.
pub fn emit_workspace(spec: &SynthSpec, dir: &Path) -> Result<WorkspaceManifest, SynthError> {
    let (frame, target_name) = gen_panel(spec)?;
    let corpus = gen_texts(spec, frame.row(&target_name).unwrap(), &frame.calendar)?;

    let series_dir = dir.join("series");
    std::fs::create_dir_all(&series_dir)?;
    let mut series = Vec::new();
    for (name, row) in frame.features.iter().zip(&frame.values) {
        let path = series_dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["date", name])?;
        let last = row.len() - 1;
        for (i, (day, value)) in frame.calendar.days().iter().zip(row).enumerate() {
            let blank = name != &target_name && i > 0 && i < last && i % 7 == 3;
            let cell = if blank {
                String::new()
            } else {
                format!("{value}")
            };
            w.write_record([day.format("%Y-%m-%d").to_string(), cell])?;
        }
        w.flush()?;
        series.push((name.clone(), path));
    }

    let corpus_path = dir.join("corpus.json");
    let f = std::fs::File::create(&corpus_path)?;
    crate::textfeat::write_corpus(std::io::BufWriter::new(f), &corpus.records)?;

    Ok(WorkspaceManifest {
        target: target_name,
        series,
        corpus: corpus_path,
    })
}
