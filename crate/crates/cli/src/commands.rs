//! Command implementations. Each command reads its inputs, writes its
//! artifacts into the output directory, and prints a one-line summary with
//! the output path. Artifact names are fixed; evaluation reports embed the
//! seed and a config digest for auditability.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fusecast::eval::{self, Family, ForecastReport};
use fusecast::featsel::{self, ImportanceRanking, LagTable};
use fusecast::forest::ForestParams;
use fusecast::ingest::{self, AlignedFrame, TradingCalendar};
use fusecast::net::{self, LstmParams, ModelConfig, TrainSplit, Trainer};
use fusecast::pipeline::{self, digest_json, PipelineContext};
use fusecast::synth::{self, SynthSpec};
use fusecast::textfeat::{self, DailyTextualFeatures, TopicModel};
use fusecast::tuner::{self, PruneDecision, PrunerSettings, SearchSpace, TrialConfig, TrialOutcome};
use serde::{Deserialize, Serialize};

use crate::config::{LagApplyTo, RunConfig, SeriesSpec};

const FRAME_CSV: &str = "frame.csv";
const FRAME_JSON: &str = "frame.json";
const TEXTUAL_CSV: &str = "textual.csv";
const TEXTUAL_JSON: &str = "textual.json";
const TOPICS_JSON: &str = "topics.json";
const COHERENCE_CSV: &str = "coherence.csv";
const LAG_TABLE_JSON: &str = "lag_table.json";
const AIC_CURVES_CSV: &str = "aic_curves.csv";
const RFE_JSON: &str = "rfe_ranking.json";
const RFE_CSV: &str = "rfe_ranking.csv";
const CHECKPOINT_JSON: &str = "model.json";
const LOSSES_CSV: &str = "losses.csv";
const STUDY_JSONL: &str = "study.jsonl";
const BEST_CONFIG_JSON: &str = "best_config.json";
const TRIALS_CSV: &str = "trials.csv";
const ABLATION_CSV: &str = "ablation.csv";
const ABLATION_JSON: &str = "ablation.json";
const WINDOW_SWEEP_CSV: &str = "window_sweep.csv";
const RFE_SWEEP_CSV: &str = "rfe_sweep.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Generate a synthetic workspace (series CSVs, corpus, ready-to-run config).
pub fn simgen(dir: &Path, days: usize, rho: f64, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        n_days: days,
        text_signal: rho,
        seed,
        ..SynthSpec::default()
    };
    std::fs::create_dir_all(dir)?;
    let manifest = synth::emit_workspace(&spec, dir)?;

    let series: Vec<SeriesSpec> = manifest
        .series
        .iter()
        .map(|(name, _)| SeriesSpec {
            path: PathBuf::from("series").join(format!("{name}.csv")),
            date_column: "date".into(),
            value_column: name.clone(),
        })
        .collect();
    let informative = spec.informative.len();
    let config = RunConfig {
        target: manifest.target.clone(),
        series,
        corpus: PathBuf::from("corpus.json"),
        edge_policy: ingest::EdgePolicy::HoldNearest,
        lda: crate::config::LdaSettings {
            k_range: (2, 5),
            ..Default::default()
        },
        lags: crate::config::LagSettings {
            max_lag: 5,
            ..Default::default()
        },
        rfe: crate::config::RfeSettings {
            keep: informative,
            step: 1,
            n_trees: 60,
            max_depth: None,
            min_leaf: 2,
            bootstrap: true,
        },
        model: ModelConfig {
            hidden: 16,
            fc: 8,
            dropout: 0.0,
            learning_rate: 3e-3,
            batch: 32,
            window: 3,
            epochs: 40,
            patience: 0,
            seed,
        },
        tune: Default::default(),
        train_days: (days * 315 + 235) / 470,
        seed,
        out_dir: Some(PathBuf::from("out")),
    };
    let config_path = dir.join("config.json");
    write_json(&config_path, &config)?;
    println!(
        "simgen: {} days, {} texts, workspace at {}",
        days,
        std::fs::read_to_string(&manifest.corpus)?.matches("\"id\"").count(),
        config_path.display()
    );
    Ok(())
}

/// Parse and align every configured series onto the target's calendar.
pub fn ingest_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut series = Vec::new();
    for spec in &cfg.series {
        series.push(ingest::parse_series_path(
            &spec.path,
            &spec.date_column,
            &spec.value_column,
            b',',
        )?);
    }
    let target = series
        .iter()
        .find(|s| s.name == cfg.target)
        .with_context(|| format!("target series '{}' not found", cfg.target))?;
    let calendar = TradingCalendar::new(target.present().map(|(d, _)| d).collect())?;
    let frame = ingest::align(&series, &calendar, cfg.edge_policy)?;

    frame.write_csv_path(&out.join(FRAME_CSV))?;
    write_json(&out.join(FRAME_JSON), &frame)?;
    println!(
        "ingest: {} features x {} days -> {}",
        frame.n_features(),
        frame.n_days(),
        out.join(FRAME_CSV).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TopicSummary {
    topic: usize,
    share: f64,
    top_words: Vec<String>,
}

#[derive(Serialize)]
struct TopicsArtifact {
    k: usize,
    selected_topics: Vec<usize>,
    coherence_curve: Vec<(usize, f64)>,
    topics: Vec<TopicSummary>,
}

/// Tokenize the corpus, pick a topic count by the coherence peak (or use the
/// configured one), fit the final LDA, and pool the daily textual rows.
pub fn features_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let frame: AlignedFrame = read_json(&out.join(FRAME_JSON))
        .context("frame.json missing; run `ingest` first")?;
    let mut records = textfeat::read_corpus(BufReader::new(File::open(&cfg.corpus)?))?;
    let vocab = textfeat::attach_tokens(&mut records, &cfg.lda.stopwords, cfg.lda.min_count)?;
    let bags: Vec<Vec<u32>> = records
        .iter()
        .map(|r| r.tokens.clone().unwrap_or_default())
        .collect();

    let (k, curve) = match cfg.lda.fixed_k {
        Some(k) => (k, Vec::new()),
        None => textfeat::select_topic_count(
            &bags,
            &vocab,
            cfg.lda.k_range,
            cfg.lda.iterations,
            cfg.lda.top_n,
            cfg.lda.alpha,
            cfg.lda.beta,
            cfg.seed,
        )?,
    };
    let alpha = cfg.lda.alpha.unwrap_or(50.0 / k as f64);
    let model = textfeat::fit_lda(
        &bags,
        &vocab,
        k,
        cfg.lda.iterations,
        alpha,
        cfg.lda.beta,
        cfg.seed,
    )?;
    let selected: Vec<usize> = match &cfg.lda.selected_topics {
        Some(list) => list.clone(),
        None => (1..=k).collect(),
    };
    let textual =
        textfeat::assemble_textual_features(&records, &model, &selected, &frame.calendar)?;

    write_json(&out.join(TEXTUAL_JSON), &textual)?;
    textual
        .clone()
        .into_frame()
        .write_csv_path(&out.join(TEXTUAL_CSV))?;

    let mut coherence_w = csv::Writer::from_path(out.join(COHERENCE_CSV))?;
    coherence_w.write_record(["k", "mean_coherence"])?;
    for (kk, c) in &curve {
        coherence_w.write_record([kk.to_string(), c.to_string()])?;
    }
    coherence_w.flush()?;

    write_json(&out.join(TOPICS_JSON), &topics_artifact(&model, &selected, curve))?;
    println!(
        "features: K={k}, {} rows x {} days -> {}",
        textual.rows.len(),
        frame.n_days(),
        out.join(TEXTUAL_CSV).display()
    );
    Ok(())
}

fn topics_artifact(
    model: &TopicModel,
    selected: &[usize],
    coherence_curve: Vec<(usize, f64)>,
) -> TopicsArtifact {
    let total_docs = model.assignment.len().max(1) as f64;
    let topics = (1..=model.k)
        .map(|t| {
            let counts = &model.topic_word_counts[t - 1];
            let mut ranked: Vec<(u32, u32)> = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(w, &c)| (w as u32, c))
                .collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            TopicSummary {
                topic: t,
                share: model.assignment.iter().filter(|&&a| a == t).count() as f64 / total_docs,
                top_words: ranked
                    .iter()
                    .take(10)
                    .map(|(w, _)| model.vocab.word(*w).to_string())
                    .collect(),
            }
        })
        .collect();
    TopicsArtifact {
        k: model.k,
        selected_topics: selected.to_vec(),
        coherence_curve,
        topics,
    }
}

fn load_joined(cfg: &RunConfig, out: &Path) -> Result<(AlignedFrame, DailyTextualFeatures)> {
    let frame: AlignedFrame = read_json(&out.join(FRAME_JSON))
        .context("frame.json missing; run `ingest` first")?;
    let textual: DailyTextualFeatures = read_json(&out.join(TEXTUAL_JSON))
        .context("textual.json missing; run `features` first")?;
    let _ = cfg;
    Ok((frame, textual))
}

/// Scan per-feature optimal lags against the target over the full joined
/// frame and write the lag table plus plot-ready AIC curves.
pub fn lags_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let (frame, textual) = load_joined(cfg, out)?;
    let (joined, _) = pipeline::join_textual(&frame, &textual)?;
    let (table, curves) = featsel::scan_lags(
        &joined,
        &cfg.target,
        0..=cfg.lags.max_lag,
        cfg.lags.sample_size,
    )?;

    write_json(&out.join(LAG_TABLE_JSON), &table)?;
    let mut w = csv::Writer::from_path(out.join(AIC_CURVES_CSV))?;
    w.write_record(["feature", "lag", "aic"])?;
    for (feature, curve) in &curves {
        for (p, aic) in curve {
            w.write_record([feature.clone(), p.to_string(), aic.to_string()])?;
        }
    }
    w.flush()?;
    println!(
        "lags: {} features scanned (0..={}) -> {}",
        table.entries.len(),
        cfg.lags.max_lag,
        out.join(LAG_TABLE_JSON).display()
    );
    Ok(())
}

/// Joined modeling frame, textual family tags, candidate quantitative
/// names, and the training span after lag trimming.
type ModelingFrame = (AlignedFrame, Vec<(String, Family)>, Vec<String>, usize);

/// The modeling frame: quantitative rows (lag-shifted per config) joined
/// with textual rows.
fn modeling_frame(cfg: &RunConfig, out: &Path) -> Result<ModelingFrame> {
    let (frame, textual) = load_joined(cfg, out)?;
    let quant_names: Vec<String> = frame
        .features
        .iter()
        .filter(|n| **n != cfg.target)
        .cloned()
        .collect();
    let original_days = frame.n_days();

    let (joined, tags) = match cfg.lags.apply_to {
        LagApplyTo::None => pipeline::join_textual(&frame, &textual)?,
        LagApplyTo::Quantitative => {
            let table: LagTable = read_json(&out.join(LAG_TABLE_JSON))
                .context("lag_table.json missing; run `lags` first")?;
            let quant_table = LagTable {
                entries: table
                    .entries
                    .iter()
                    .filter(|(name, _)| quant_names.contains(name))
                    .map(|(n, e)| (n.clone(), *e))
                    .collect(),
            };
            let adjusted = featsel::apply_lags(&frame, &quant_table)?;
            let kept = adjusted.n_days();
            let trimmed_textual = DailyTextualFeatures {
                calendar: adjusted.calendar.clone(),
                rows: textual
                    .rows
                    .iter()
                    .map(|r| textfeat::TextualRow {
                        name: r.name.clone(),
                        selector: r.selector,
                        field: r.field,
                        values: r.values[r.values.len() - kept..].to_vec(),
                    })
                    .collect(),
            };
            pipeline::join_textual(&adjusted, &trimmed_textual)?
        }
        LagApplyTo::All => {
            let table: LagTable = read_json(&out.join(LAG_TABLE_JSON))
                .context("lag_table.json missing; run `lags` first")?;
            let (joined, tags) = pipeline::join_textual(&frame, &textual)?;
            (featsel::apply_lags(&joined, &table)?, tags)
        }
    };
    let trimmed = original_days - joined.n_days();
    if cfg.train_days <= trimmed {
        bail!("lag trimming consumed the whole training period");
    }
    Ok((joined, tags, quant_names, cfg.train_days - trimmed))
}

fn forest_params(cfg: &RunConfig) -> ForestParams {
    ForestParams {
        n_trees: cfg.rfe.n_trees,
        max_depth: cfg.rfe.max_depth,
        min_leaf: cfg.rfe.min_leaf,
        features_per_split: None,
        bootstrap: cfg.rfe.bootstrap,
        seed: cfg.seed,
    }
}

/// Rank quantitative candidates by recursive feature elimination.
pub fn rfe_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let (joined, _, quant_names, _) = modeling_frame(cfg, out)?;
    let candidates = joined.select(&quant_names)?;
    let target_row = joined
        .row(&cfg.target)
        .with_context(|| format!("target '{}' missing from frame", cfg.target))?;
    let ranking = featsel::rfe(
        &candidates,
        target_row,
        cfg.rfe.keep.min(quant_names.len()),
        cfg.rfe.step,
        &forest_params(cfg),
    )?;

    write_json(&out.join(RFE_JSON), &ranking)?;
    let mut w = csv::Writer::from_path(out.join(RFE_CSV))?;
    w.write_record(["rank", "feature", "importance", "eliminated_round"])?;
    for (i, f) in ranking.features.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            f.name.clone(),
            f.importance.to_string(),
            f.eliminated_round.to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "rfe: kept {} of {} candidates -> {}",
        ranking.kept().count(),
        quant_names.len(),
        out.join(RFE_JSON).display()
    );
    Ok(())
}

/// Build the shared pipeline context from on-disk artifacts. The RFE ranking
/// narrows the quantitative set when present; tuned hyperparameters replace
/// the configured ones when present.
fn build_context(cfg: &RunConfig, out: &Path) -> Result<PipelineContext> {
    let (joined, tags, quant_names, train_days) = modeling_frame(cfg, out)?;
    let quant = match read_json::<ImportanceRanking>(&out.join(RFE_JSON)) {
        Ok(r) => r.kept().map(str::to_string).collect(),
        Err(_) => quant_names,
    };
    let model = match read_json::<TrialConfig>(&out.join(BEST_CONFIG_JSON)) {
        Ok(best) => best.into_model_config(cfg.model.epochs, cfg.model.patience, cfg.model.seed),
        Err(_) => cfg.model,
    };
    Ok(PipelineContext {
        frame: joined,
        target: cfg.target.clone(),
        quant,
        textual: tags,
        model,
        train_days,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: ModelConfig,
    params: LstmParams,
    target: String,
    quant_features: Vec<String>,
    textual_features: Vec<String>,
    train_days: usize,
}

/// Train the forecaster on the leading training period and write a versioned
/// checkpoint plus the loss history.
pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg, out)?;
    let mut names = vec![ctx.target.clone()];
    names.extend(ctx.quant.iter().cloned());
    names.extend(ctx.textual_names());
    let sub = ctx.frame.select(&names)?;
    let (normalized, _) = featsel::minmax_normalize(&sub);
    let samples = net::make_windows(&normalized, &ctx.target, ctx.model.window)?;
    if ctx.train_days <= ctx.model.window {
        bail!("train_days must exceed the window length");
    }
    let n_train = (ctx.train_days - ctx.model.window).min(samples.len());
    let (params, losses) = net::train(
        &samples[..n_train],
        ctx.model,
        TrainSplit::Fraction(1.0),
    )?;

    let checkpoint = Checkpoint {
        version: 1,
        model: ctx.model,
        params,
        target: ctx.target.clone(),
        quant_features: ctx.quant.clone(),
        textual_features: ctx.textual_names(),
        train_days: ctx.train_days,
    };
    write_json(&out.join(CHECKPOINT_JSON), &checkpoint)?;
    let mut w = csv::Writer::from_path(out.join(LOSSES_CSV))?;
    w.write_record(["epoch", "train_mse"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    println!(
        "train: {} epochs on {} samples, final MSE {:.3e} -> {}",
        losses.len(),
        n_train,
        losses.last().unwrap_or(&f64::NAN),
        out.join(CHECKPOINT_JSON).display()
    );
    Ok(())
}

/// Random search with median pruning over the constrained space; writes the
/// study journal, the trial table, and the best configuration.
pub fn tune_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg, out)?;
    let mut names = vec![ctx.target.clone()];
    names.extend(ctx.quant.iter().cloned());
    names.extend(ctx.textual_names());
    let sub = ctx.frame.select(&names)?;
    let (normalized, _) = featsel::minmax_normalize(&sub);

    let target = ctx.target.clone();
    let train_days = ctx.train_days;
    let epochs = cfg.tune.epochs;
    let model_seed = cfg.model.seed;
    let objective = |trial: &TrialConfig, reporter: &mut tuner::Reporter<'_>| {
        let w = trial.window;
        let samples =
            net::make_windows(&normalized, &target, w).map_err(|e| e.to_string())?;
        if train_days <= w {
            return Err(format!("window {w} swallows the training period"));
        }
        let n_train = (train_days - w).min(samples.len());
        let config = trial.into_model_config(epochs, 0, model_seed);
        let mut trainer = Trainer::new(&samples[..n_train], config, TrainSplit::Fraction(0.8))
            .map_err(|e| e.to_string())?;
        let mut best = f64::INFINITY;
        for epoch in 0..epochs {
            let stats = trainer.run_epoch().map_err(|e| e.to_string())?;
            let val = stats
                .val_mae
                .ok_or_else(|| "no validation holdout".to_string())?;
            best = best.min(val);
            if reporter.report(epoch as u64, val).map_err(|e| e.to_string())?
                == PruneDecision::Prune
            {
                return Ok(TrialOutcome::Pruned);
            }
        }
        Ok(TrialOutcome::Complete(best))
    };

    let journal_file = File::create(out.join(STUDY_JSONL))?;
    let mut journal = BufWriter::new(journal_file);
    let pruner = PrunerSettings {
        n_startup: cfg.tune.n_startup,
        n_warmup: cfg.tune.n_warmup,
    };
    let study = tuner::optimize(
        &SearchSpace::default(),
        cfg.tune.n_trials,
        cfg.seed,
        pruner,
        objective,
        Some(&mut journal),
    )?;
    journal.flush()?;

    let mut w = csv::Writer::from_path(out.join(TRIALS_CSV))?;
    w.write_record([
        "id", "state", "objective", "hidden", "fc", "dropout", "learning_rate", "batch", "window",
    ])?;
    for t in &study.trials {
        w.write_record([
            t.id.to_string(),
            format!("{:?}", t.state).to_lowercase(),
            t.final_objective.map(|v| v.to_string()).unwrap_or_default(),
            t.config.hidden.to_string(),
            t.config.fc.to_string(),
            t.config.dropout.to_string(),
            t.config.learning_rate.to_string(),
            t.config.batch.to_string(),
            t.config.window.to_string(),
        ])?;
    }
    w.flush()?;

    let best = study
        .best_trial()
        .context("study finished without a completed trial")?;
    write_json(&out.join(BEST_CONFIG_JSON), &best.config)?;
    println!(
        "tune: {} trials ({} completed), best objective {:.4e} -> {}",
        study.trials.len(),
        study
            .trials
            .iter()
            .filter(|t| t.state == tuner::TrialState::Completed)
            .count(),
        best.final_objective.unwrap_or(f64::NAN),
        out.join(BEST_CONFIG_JSON).display()
    );
    Ok(())
}

fn config_snapshot(cfg: &RunConfig) -> serde_json::Value {
    // Strip paths so the snapshot (and its digest) is location-independent.
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(map) = v.as_object_mut() {
        map.remove("series");
        map.remove("corpus");
        map.remove("out_dir");
    }
    v
}

/// Evaluate the trained checkpoint on the test period, train the
/// quantitative-only reference under the same seeds, and report MAE/RMSE,
/// percentage improvement, and the Diebold-Mariano comparison.
pub fn evaluate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg, out)?;
    let checkpoint: Checkpoint = read_json(&out.join(CHECKPOINT_JSON))
        .context("model.json missing; run `train` first")?;

    // Rebuild the checkpoint's frame and test windows.
    let mut names = vec![checkpoint.target.clone()];
    names.extend(checkpoint.quant_features.iter().cloned());
    names.extend(checkpoint.textual_features.iter().cloned());
    let sub = ctx.frame.select(&names)?;
    let (normalized, scales) = featsel::minmax_normalize(&sub);
    let scale = scales
        .iter()
        .find(|s| s.name == checkpoint.target)
        .context("target scale missing")?;
    let samples = net::make_windows(&normalized, &checkpoint.target, checkpoint.model.window)?;
    let n_train = (checkpoint.train_days - checkpoint.model.window).min(samples.len());
    let test = &samples[n_train..];
    if test.is_empty() {
        bail!("no test samples after the training period");
    }
    let predictions = net::predict_series(&checkpoint.params, test, scale)?;
    let target_row = sub.row(&checkpoint.target).unwrap();
    let actuals: Vec<f64> = test.iter().map(|s| target_row[s.target_day]).collect();
    let dates: Vec<String> = test
        .iter()
        .map(|s| ctx.frame.calendar.days()[s.target_day].format("%Y-%m-%d").to_string())
        .collect();

    // Quantitative-only reference under identical seeds and config.
    let reference = pipeline::run_cycle(&ctx, &ctx.quant.clone(), &[], None, None)?;

    let snapshot = config_snapshot(cfg);
    let digest = digest_json(&snapshot);
    let seed = ctx.model.seed;
    let ref_report = ForecastReport::new(
        "quantitative-only",
        reference.predictions.clone(),
        reference.actuals.clone(),
        seed,
        snapshot.clone(),
    )?;
    let report = ForecastReport::new("combined", predictions.clone(), actuals.clone(), seed, snapshot)?
        .with_reference(&ref_report)?;

    let errors_combined: Vec<f64> = predictions
        .iter()
        .zip(&actuals)
        .map(|(p, a)| p - a)
        .collect();
    let errors_ref: Vec<f64> = reference
        .predictions
        .iter()
        .zip(&reference.actuals)
        .map(|(p, a)| p - a)
        .collect();
    let dm = if errors_combined.len() == errors_ref.len() && errors_combined.len() >= 10 {
        Some(eval::dm_test(
            &errors_combined,
            &errors_ref,
            1,
            eval::DmLoss::Squared,
        )?)
    } else {
        None
    };

    let stem = format!("seed{seed}_{digest}");
    let report_path = out.join(format!("report_combined_{stem}.json"));
    write_json(&report_path, &report)?;
    write_json(&out.join(format!("report_reference_{stem}.json")), &ref_report)?;
    if let Some(dm) = &dm {
        write_json(&out.join(format!("dm_{stem}.json")), dm)?;
    }
    let mut w = csv::Writer::from_path(out.join(format!("predictions_combined_{stem}.csv")))?;
    w.write_record(["date", "actual", "predicted"])?;
    for ((date, a), p) in dates.iter().zip(&actuals).zip(&predictions) {
        w.write_record([date.clone(), a.to_string(), p.to_string()])?;
    }
    w.flush()?;

    println!(
        "evaluate: combined MAE {:.6} RMSE {:.6}, reference MAE {:.6}, PI_MAE {:+.2}% -> {}",
        report.mae,
        report.rmse,
        ref_report.mae,
        report.pi_mae.unwrap_or(f64::NAN),
        report_path.display()
    );
    Ok(())
}

/// All 16 textual-family combinations with identical seeds and ranks.
pub fn ablate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg, out)?;
    let quant = ctx.quant.clone();
    let cells = eval::ablation_run(|families: &[Family]| {
        let textual = ctx.family_subset(families);
        pipeline::run_cycle(&ctx, &quant, &textual, None, None)
            .map(|r| (r.mae, r.rmse))
            .map_err(|e| e.to_string())
    })?;

    write_json(&out.join(ABLATION_JSON), &cells)?;
    let mut w = csv::Writer::from_path(out.join(ABLATION_CSV))?;
    w.write_record([
        "combination",
        "mae",
        "mae_rank",
        "rmse",
        "rmse_rank",
        "weighted_rank",
        "final_order",
    ])?;
    for c in &cells {
        w.write_record([
            c.label.clone(),
            c.mae.to_string(),
            c.mae_rank.to_string(),
            c.rmse.to_string(),
            c.rmse_rank.to_string(),
            c.weighted_rank.to_string(),
            c.final_order.to_string(),
        ])?;
    }
    w.flush()?;
    let best = cells.iter().find(|c| c.final_order == 1).unwrap();
    println!(
        "ablate: 16 combinations, best {} (MAE {:.6}) -> {}",
        best.label,
        best.mae,
        out.join(ABLATION_CSV).display()
    );
    Ok(())
}

fn write_sweep(path: &Path, header: &str, rows: &[eval::SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([header, "mae", "rmse"])?;
    for r in rows {
        w.write_record([r.x.to_string(), r.mae.to_string(), r.rmse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// MAE/RMSE per window size, all other settings fixed.
pub fn sweep_window_cmd(cfg: &RunConfig, out: &Path, sizes: Option<Vec<usize>>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg, out)?;
    let sizes = sizes.unwrap_or_else(net::window_choices);
    let quant = ctx.quant.clone();
    let textual = ctx.textual_names();
    let rows = eval::window_sweep(&sizes, |w| {
        pipeline::run_cycle(&ctx, &quant, &textual, None, Some(w))
            .map(|r| (r.mae, r.rmse))
            .map_err(|e| e.to_string())
    })?;
    write_sweep(&out.join(WINDOW_SWEEP_CSV), "window", &rows)?;
    let best = rows.iter().min_by(|a, b| a.mae.total_cmp(&b.mae)).unwrap();
    println!(
        "sweep-window: {} sizes, best w={} (MAE {:.6}) -> {}",
        rows.len(),
        best.x,
        best.mae,
        out.join(WINDOW_SWEEP_CSV).display()
    );
    Ok(())
}

/// MAE/RMSE per kept quantitative feature count (top-k of the RFE ranking
/// plus all textual rows).
pub fn sweep_rfe_cmd(cfg: &RunConfig, out: &Path, max_k: Option<usize>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let ctx = build_context(cfg, out)?;
    let ranking: ImportanceRanking = read_json(&out.join(RFE_JSON))
        .context("rfe_ranking.json missing; run `rfe` first")?;
    let total = ranking.features.len();
    let upper = max_k.unwrap_or(total).min(total);
    let counts: Vec<usize> = (1..=upper).collect();
    let textual = ctx.textual_names();
    let rows = eval::rfe_sweep(&counts, |k| {
        let quant = ranking.top(k);
        pipeline::run_cycle(&ctx, &quant, &textual, None, None)
            .map(|r| (r.mae, r.rmse))
            .map_err(|e| e.to_string())
    })?;
    write_sweep(&out.join(RFE_SWEEP_CSV), "features", &rows)?;
    let best = rows.iter().min_by(|a, b| a.mae.total_cmp(&b.mae)).unwrap();
    println!(
        "sweep-rfe: counts 1..={}, best k={} (MAE {:.6}) -> {}",
        upper,
        best.x,
        best.mae,
        out.join(RFE_SWEEP_CSV).display()
    );
    Ok(())
}
