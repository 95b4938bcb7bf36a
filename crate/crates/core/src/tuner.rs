//! Hyperparameter optimization: seeded random search over the constrained
//! space with median pruning of underperforming trials.
//!
//! The sampler draws each trial independently (per-trial seeded streams, so
//! a resumed study reproduces the draws of an uninterrupted one). The median
//! pruner terminates a trial whose intermediate objective is worse than the
//! median of completed trials at the same step, once enough trials have
//! completed and the trial has run past the warmup steps.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{ModelConfig, BATCH_CHOICES, FC_CHOICES, HIDDEN_CHOICES};

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("search space has an empty dimension: {0}")]
    EmptySpace(&'static str),
    #[error("no fully-connected size satisfies fc <= hidden={0}")]
    EmptyConstrainedSubset(usize),
    #[error("intermediate step {got} does not increase on {last}")]
    NonIncreasingStep { last: u64, got: u64 },
    #[error("all {} trials failed; first failure: trial {}: {}", .failures.len(), .failures[0].0, .failures[0].1)]
    AllTrialsFailed { failures: Vec<(usize, String)> },
    #[error("n_trials must be at least 1")]
    NoTrials,
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The constrained hyperparameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub hidden: Vec<usize>,
    /// Subject to fc <= hidden at sampling time.
    pub fc: Vec<usize>,
    /// Uniform range.
    pub dropout: (f64, f64),
    /// Log-uniform range.
    pub learning_rate: (f64, f64),
    pub batch: Vec<usize>,
    pub window: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden: HIDDEN_CHOICES.to_vec(),
            fc: FC_CHOICES.to_vec(),
            dropout: (0.0, 0.5),
            learning_rate: (1e-5, 1e-2),
            batch: BATCH_CHOICES.to_vec(),
            window: crate::net::window_choices(),
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<(), TunerError> {
        if self.hidden.is_empty() {
            return Err(TunerError::EmptySpace("hidden"));
        }
        if self.fc.is_empty() {
            return Err(TunerError::EmptySpace("fc"));
        }
        if self.batch.is_empty() {
            return Err(TunerError::EmptySpace("batch"));
        }
        if self.window.is_empty() {
            return Err(TunerError::EmptySpace("window"));
        }
        Ok(())
    }

    /// Membership check used by the property tests.
    pub fn contains(&self, c: &TrialConfig) -> bool {
        self.hidden.contains(&c.hidden)
            && self.fc.contains(&c.fc)
            && c.fc <= c.hidden
            && (self.dropout.0..=self.dropout.1).contains(&c.dropout)
            && (self.learning_rate.0..=self.learning_rate.1).contains(&c.learning_rate)
            && self.batch.contains(&c.batch)
            && self.window.contains(&c.window)
    }
}

/// One sampled hyperparameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub hidden: usize,
    pub fc: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub window: usize,
}

impl TrialConfig {
    pub fn into_model_config(self, epochs: usize, patience: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            fc: self.fc,
            dropout: self.dropout,
            learning_rate: self.learning_rate,
            batch: self.batch,
            window: self.window,
            epochs,
            patience,
            seed,
        }
    }
}

/// Independent random draw: uniform over the discrete sets, uniform dropout,
/// log-uniform learning rate, and fc restricted to values at most the drawn
/// hidden size. `history` is accepted for interface parity but unused by
/// this sampler.
pub fn suggest(
    space: &SearchSpace,
    rng: &mut ChaCha8Rng,
    _history: &[Trial],
) -> Result<TrialConfig, TunerError> {
    space.validate()?;
    let hidden = space.hidden[rng.gen_range(0..space.hidden.len())];
    let fc_pool: Vec<usize> = space.fc.iter().copied().filter(|&v| v <= hidden).collect();
    if fc_pool.is_empty() {
        return Err(TunerError::EmptyConstrainedSubset(hidden));
    }
    let fc = fc_pool[rng.gen_range(0..fc_pool.len())];
    let dropout = rng.gen_range(space.dropout.0..=space.dropout.1);
    let (lo, hi) = space.learning_rate;
    let learning_rate = (rng.gen_range(lo.ln()..=hi.ln())).exp();
    let batch = space.batch[rng.gen_range(0..space.batch.len())];
    let window = space.window[rng.gen_range(0..space.window.len())];
    Ok(TrialConfig {
        hidden,
        fc,
        dropout,
        learning_rate,
        batch,
        window,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialState {
    Running,
    Completed,
    Pruned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub config: TrialConfig,
    /// (step, objective) pairs reported during the trial.
    pub intermediates: Vec<(u64, f64)>,
    pub state: TrialState,
    pub final_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunerSettings {
    /// Completed trials required before any pruning.
    pub n_startup: usize,
    /// Steps a trial must run before it can be pruned.
    pub n_warmup: u64,
}

impl Default for PrunerSettings {
    fn default() -> Self {
        Self {
            n_startup: 5,
            n_warmup: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneDecision {
    Continue,
    Prune,
}

/// Median rule: prune when the value at `step` is strictly worse
/// (minimization: greater) than the median of completed trials' values at
/// the same step. Never fires before `n_startup` completions or within the
/// first `n_warmup` steps.
pub fn median_prune_decision(
    step: u64,
    value: f64,
    settings: &PrunerSettings,
    history: &[Trial],
) -> PruneDecision {
    let completed: Vec<&Trial> = history
        .iter()
        .filter(|t| t.state == TrialState::Completed)
        .collect();
    if completed.len() < settings.n_startup || step < settings.n_warmup {
        return PruneDecision::Continue;
    }
    let mut at_step: Vec<f64> = completed
        .iter()
        .filter_map(|t| {
            t.intermediates
                .iter()
                .find(|(s, _)| *s == step)
                .map(|(_, v)| *v)
        })
        .collect();
    if at_step.is_empty() {
        return PruneDecision::Continue;
    }
    at_step.sort_by(f64::total_cmp);
    let n = at_step.len();
    let median = if n % 2 == 1 {
        at_step[n / 2]
    } else {
        0.5 * (at_step[n / 2 - 1] + at_step[n / 2])
    };
    if value > median {
        PruneDecision::Prune
    } else {
        PruneDecision::Continue
    }
}

/// Handed to the objective for intermediate reporting; records values on the
/// trial and answers with the pruning decision.
pub struct Reporter<'a> {
    trial: &'a mut Trial,
    settings: &'a PrunerSettings,
    history: &'a [Trial],
    last_step: Option<u64>,
}

impl Reporter<'_> {
    pub fn report(&mut self, step: u64, value: f64) -> Result<PruneDecision, TunerError> {
        if let Some(last) = self.last_step {
            if step <= last {
                return Err(TunerError::NonIncreasingStep { last, got: step });
            }
        }
        self.last_step = Some(step);
        self.trial.intermediates.push((step, value));
        Ok(median_prune_decision(
            step,
            value,
            self.settings,
            self.history,
        ))
    }
}

/// What the objective reports back for one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrialOutcome {
    Complete(f64),
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub trials: Vec<Trial>,
    /// Index of the best completed trial, if any.
    pub best: Option<usize>,
    pub sampler_seed: u64,
    pub pruner: PrunerSettings,
    pub space: SearchSpace,
}

impl StudyState {
    pub fn new(space: SearchSpace, sampler_seed: u64, pruner: PrunerSettings) -> Self {
        Self {
            trials: Vec::new(),
            best: None,
            sampler_seed,
            pruner,
            space,
        }
    }

    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|i| &self.trials[i])
    }

    fn refresh_best(&mut self) {
        self.best = self
            .trials
            .iter()
            .enumerate()
            .filter(|(_, t)| t.state == TrialState::Completed)
            .min_by(|(_, a), (_, b)| {
                a.final_objective
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&b.final_objective.unwrap_or(f64::INFINITY))
            })
            .map(|(i, _)| i);
    }
}

#[derive(Serialize)]
struct JournalRecord<'a> {
    event: &'a str,
    trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a TrialConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

fn journal_write(
    journal: &mut Option<&mut dyn Write>,
    record: &JournalRecord<'_>,
) -> Result<(), TunerError> {
    if let Some(w) = journal {
        serde_json::to_writer(&mut **w, record)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Append `n_trials` trial lifecycles to an existing study. Sampling for
/// trial i uses a stream derived from (sampler_seed, i), so a resumed study
/// draws exactly what an uninterrupted one would.
pub fn optimize_more<F>(
    state: &mut StudyState,
    n_trials: usize,
    mut objective: F,
    mut journal: Option<&mut dyn Write>,
) -> Result<(), TunerError>
where
    F: FnMut(&TrialConfig, &mut Reporter<'_>) -> Result<TrialOutcome, String>,
{
    if n_trials == 0 {
        return Err(TunerError::NoTrials);
    }
    state.space.validate()?;
    for _ in 0..n_trials {
        let id = state.trials.len();
        let mut rng = ChaCha8Rng::seed_from_u64(
            state
                .sampler_seed
                .wrapping_add((id as u64).wrapping_mul(SEED_STRIDE)),
        );
        let config = suggest(&state.space, &mut rng, &state.trials)?;
        let mut trial = Trial {
            id,
            config,
            intermediates: Vec::new(),
            state: TrialState::Running,
            final_objective: None,
            failure: None,
        };
        journal_write(
            &mut journal,
            &JournalRecord {
                event: "started",
                trial: id,
                config: Some(&config),
                objective: None,
                error: None,
            },
        )?;

        let mut reporter = Reporter {
            trial: &mut trial,
            settings: &state.pruner,
            history: &state.trials,
            last_step: None,
        };
        match objective(&config, &mut reporter) {
            Ok(TrialOutcome::Complete(value)) => {
                trial.state = TrialState::Completed;
                trial.final_objective = Some(value);
                journal_write(
                    &mut journal,
                    &JournalRecord {
                        event: "completed",
                        trial: id,
                        config: None,
                        objective: Some(value),
                        error: None,
                    },
                )?;
            }
            Ok(TrialOutcome::Pruned) => {
                trial.state = TrialState::Pruned;
                journal_write(
                    &mut journal,
                    &JournalRecord {
                        event: "pruned",
                        trial: id,
                        config: None,
                        objective: None,
                        error: None,
                    },
                )?;
            }
            Err(message) => {
                trial.state = TrialState::Failed;
                trial.failure = Some(message.clone());
                journal_write(
                    &mut journal,
                    &JournalRecord {
                        event: "failed",
                        trial: id,
                        config: None,
                        objective: None,
                        error: Some(&message),
                    },
                )?;
            }
        }
        state.trials.push(trial);
    }
    state.refresh_best();

    if state.trials.iter().all(|t| t.state == TrialState::Failed) {
        let failures = state
            .trials
            .iter()
            .map(|t| (t.id, t.failure.clone().unwrap_or_default()))
            .collect();
        return Err(TunerError::AllTrialsFailed { failures });
    }
    Ok(())
}

/// Run a fresh study of `n_trials` over `space`.
pub fn optimize<F>(
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    pruner: PrunerSettings,
    objective: F,
    journal: Option<&mut dyn Write>,
) -> Result<StudyState, TunerError>
where
    F: FnMut(&TrialConfig, &mut Reporter<'_>) -> Result<TrialOutcome, String>,
{
    let mut state = StudyState::new(space.clone(), seed, pruner);
    optimize_more(&mut state, n_trials, objective, journal)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_trial(id: usize, state: TrialState, intermediates: Vec<(u64, f64)>, fin: Option<f64>) -> Trial {
        Trial {
            id,
            config: TrialConfig {
                hidden: 8,
                fc: 8,
                dropout: 0.0,
                learning_rate: 1e-3,
                batch: 8,
                window: 3,
            },
            intermediates,
            state,
            final_objective: fin,
            failure: None,
        }
    }

    #[test]
    fn sampled_configs_stay_in_space() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = suggest(&space, &mut rng, &[]).unwrap();
            assert!(space.contains(&c), "{c:?}");
        }
    }

    #[test]
    fn forced_small_hidden_pins_fc() {
        let space = SearchSpace {
            hidden: vec![8],
            ..SearchSpace::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let c = suggest(&space, &mut rng, &[]).unwrap();
            assert_eq!(c.fc, 8);
        }
    }

    #[test]
    fn impossible_constraint_errors() {
        let space = SearchSpace {
            hidden: vec![8],
            fc: vec![64],
            ..SearchSpace::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            suggest(&space, &mut rng, &[]),
            Err(TunerError::EmptyConstrainedSubset(8))
        ));
    }

    #[test]
    fn log_uniform_median_sits_at_geometric_midpoint() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let below = (0..n)
            .filter(|_| {
                suggest(&space, &mut rng, &[]).unwrap().learning_rate < 10f64.powf(-3.5)
            })
            .count();
        let frac = below as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.05, "fraction below midpoint: {frac}");
    }

    #[test]
    fn pruner_respects_startup_and_warmup() {
        let settings = PrunerSettings {
            n_startup: 2,
            n_warmup: 3,
        };
        let history = vec![make_trial(
            0,
            TrialState::Completed,
            vec![(3, 1.0)],
            Some(1.0),
        )];
        // Only one completed trial: never prune.
        assert_eq!(
            median_prune_decision(3, 100.0, &settings, &history),
            PruneDecision::Continue
        );

        let history = vec![
            make_trial(0, TrialState::Completed, vec![(3, 1.0)], Some(1.0)),
            make_trial(1, TrialState::Completed, vec![(3, 2.0)], Some(2.0)),
        ];
        // Within warmup: never prune even when terrible.
        assert_eq!(
            median_prune_decision(2, 100.0, &settings, &history),
            PruneDecision::Continue
        );
        // Past warmup, worse than the median (1.5): prune.
        assert_eq!(
            median_prune_decision(3, 1.6, &settings, &history),
            PruneDecision::Prune
        );
        // Exactly at the median: continue (strict inequality).
        assert_eq!(
            median_prune_decision(3, 1.5, &settings, &history),
            PruneDecision::Continue
        );
        // Steps nobody reported: continue.
        assert_eq!(
            median_prune_decision(9, 100.0, &settings, &history),
            PruneDecision::Continue
        );
    }

    #[test]
    fn reporter_requires_increasing_steps() {
        let mut trial = make_trial(0, TrialState::Running, vec![], None);
        let settings = PrunerSettings::default();
        let mut reporter = Reporter {
            trial: &mut trial,
            settings: &settings,
            history: &[],
            last_step: None,
        };
        reporter.report(1, 0.5).unwrap();
        assert!(matches!(
            reporter.report(1, 0.4),
            Err(TunerError::NonIncreasingStep { .. })
        ));
    }

    fn quadratic_objective(
        config: &TrialConfig,
        _reporter: &mut Reporter<'_>,
    ) -> Result<TrialOutcome, String> {
        let v = (config.learning_rate.log10() + 3.0).powi(2);
        Ok(TrialOutcome::Complete(v))
    }

    #[test]
    fn surrogate_objective_finds_learning_rate() {
        let space = SearchSpace::default();
        let study = optimize(
            &space,
            50,
            7,
            PrunerSettings::default(),
            quadratic_objective,
            None,
        )
        .unwrap();
        let best = study.best_trial().unwrap();
        let lr = best.config.learning_rate;
        assert!(
            (1e-3 / 3.0..=3e-3).contains(&lr),
            "best learning rate {lr} not within x/÷3 of 1e-3"
        );
    }

    #[test]
    fn single_trial_study() {
        let study = optimize(
            &SearchSpace::default(),
            1,
            11,
            PrunerSettings::default(),
            quadratic_objective,
            None,
        )
        .unwrap();
        assert_eq!(study.trials.len(), 1);
        assert_eq!(study.best, Some(0));
    }

    #[test]
    fn worsening_trials_get_pruned() {
        // Each trial reports its own id as the constant intermediate value;
        // once five complete, any later trial above the median gets cut.
        let mut counter = 0usize;
        let objective = move |_c: &TrialConfig, r: &mut Reporter<'_>| {
            let my_value = counter as f64;
            counter += 1;
            for step in 0..20 {
                if r.report(step, my_value).unwrap() == PruneDecision::Prune {
                    return Ok(TrialOutcome::Pruned);
                }
            }
            Ok(TrialOutcome::Complete(my_value))
        };
        let study = optimize(
            &SearchSpace::default(),
            20,
            13,
            PrunerSettings::default(),
            objective,
            None,
        )
        .unwrap();
        let pruned = study
            .trials
            .iter()
            .filter(|t| t.state == TrialState::Pruned)
            .count();
        let completed = study
            .trials
            .iter()
            .filter(|t| t.state == TrialState::Completed)
            .count();
        assert!(pruned > 0, "expected some pruning");
        assert!(completed < 20);
        // Pruned trials reported at least one intermediate.
        assert!(study
            .trials
            .iter()
            .filter(|t| t.state == TrialState::Pruned)
            .all(|t| !t.intermediates.is_empty()));
        // The best trial is never pruned.
        assert_eq!(
            study.best_trial().unwrap().state,
            TrialState::Completed
        );
    }

    #[test]
    fn resumed_study_reproduces_uninterrupted_draws() {
        let space = SearchSpace::default();
        let full = optimize(
            &space,
            10,
            21,
            PrunerSettings::default(),
            quadratic_objective,
            None,
        )
        .unwrap();

        let mut partial = optimize(
            &space,
            5,
            21,
            PrunerSettings::default(),
            quadratic_objective,
            None,
        )
        .unwrap();
        // Round-trip through serialization, then extend.
        let json = serde_json::to_string(&partial).unwrap();
        partial = serde_json::from_str(&json).unwrap();
        optimize_more(&mut partial, 5, quadratic_objective, None).unwrap();

        let full_configs: Vec<TrialConfig> = full.trials.iter().map(|t| t.config).collect();
        let resumed_configs: Vec<TrialConfig> = partial.trials.iter().map(|t| t.config).collect();
        assert_eq!(full_configs, resumed_configs);
        assert_eq!(full.best, partial.best);
    }

    #[test]
    fn journal_logs_one_record_per_transition() {
        let mut journal: Vec<u8> = Vec::new();
        let study = optimize(
            &SearchSpace::default(),
            4,
            3,
            PrunerSettings::default(),
            quadratic_objective,
            Some(&mut journal),
        )
        .unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(journal)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        // One started + one terminal record per trial.
        assert_eq!(lines.len(), 2 * study.trials.len());
        for (i, t) in study.trials.iter().enumerate() {
            assert_eq!(lines[2 * i]["event"], "started");
            assert_eq!(lines[2 * i]["trial"], t.id);
            assert!(lines[2 * i]["config"].is_object());
            assert_eq!(lines[2 * i + 1]["event"], "completed");
            assert_eq!(
                lines[2 * i + 1]["objective"].as_f64(),
                t.final_objective
            );
        }
    }

    #[test]
    fn all_failures_is_an_error() {
        let err = optimize(
            &SearchSpace::default(),
            3,
            5,
            PrunerSettings::default(),
            |_c, _r| Err::<TrialOutcome, String>("boom".into()),
            None,
        )
        .unwrap_err();
        match err {
            TunerError::AllTrialsFailed { failures } => assert_eq!(failures.len(), 3),
            other => panic!("unexpected error {other}"),
        }
    }
}
