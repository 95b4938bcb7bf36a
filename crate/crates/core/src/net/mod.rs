//! Bidirectional LSTM forecaster: sliding-window dataset construction,
//! Adam training with a chronological split, and series prediction with
//! de-normalization.

mod lstm;

pub use lstm::{backward, dropout_mask, forward, BiLayerParams, ForwardCache, GateWeights,
    LstmCellParams, LstmParams, StepState};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featsel::RowScale;
use crate::ingest::AlignedFrame;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("window length must be at least 1 and below the day count ({days} days, w={w})")]
    BadWindow { w: usize, days: usize },
    #[error("no row named '{0}' in frame")]
    UnknownTarget(String),
    #[error("input has {got} feature rows, network expects {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("window sample has no time steps")]
    EmptyWindow,
    #[error("non-finite {what} at window step {time_step}")]
    NonFiniteActivation { time_step: usize, what: &'static str },
    #[error("training loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("batch size {batch} exceeds the {train} training samples")]
    BatchTooLarge { batch: usize, train: usize },
    #[error("no training samples after the split")]
    EmptyTrainingSet,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Forecaster hyperparameters plus training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub fc: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub window: usize,
    pub epochs: usize,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub seed: u64,
}

fn default_patience() -> usize {
    20
}

pub const HIDDEN_CHOICES: [usize; 5] = [8, 16, 32, 64, 128];
pub const FC_CHOICES: [usize; 4] = [8, 16, 32, 64];
pub const BATCH_CHOICES: [usize; 9] = [8, 16, 32, 48, 64, 80, 96, 112, 128];

/// The 28 admissible window lengths: 1..=24 plus the extended sizes.
pub fn window_choices() -> Vec<usize> {
    let mut w: Vec<usize> = (1..=24).collect();
    w.extend([30, 40, 50, 60]);
    w
}

impl ModelConfig {
    /// Structural checks that any trainable config must satisfy.
    pub fn validate_structure(&self) -> Result<(), NetError> {
        if self.hidden == 0 || self.fc == 0 {
            return Err(NetError::InvalidConfig("hidden and fc must be positive".into()));
        }
        if self.fc > self.hidden {
            return Err(NetError::InvalidConfig(format!(
                "fc ({}) must not exceed hidden ({})",
                self.fc, self.hidden
            )));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(NetError::InvalidConfig("dropout must lie in [0, 0.5]".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(NetError::InvalidConfig("learning rate must be non-negative".into()));
        }
        if self.batch == 0 || self.window == 0 || self.epochs == 0 {
            return Err(NetError::InvalidConfig(
                "batch, window, and epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Full membership check against the tuning search space bounds.
    pub fn validate_bounds(&self) -> Result<(), NetError> {
        self.validate_structure()?;
        if !HIDDEN_CHOICES.contains(&self.hidden) {
            return Err(NetError::InvalidConfig(format!("hidden {} not in {HIDDEN_CHOICES:?}", self.hidden)));
        }
        if !FC_CHOICES.contains(&self.fc) {
            return Err(NetError::InvalidConfig(format!("fc {} not in {FC_CHOICES:?}", self.fc)));
        }
        if !(1e-5..=1e-2).contains(&self.learning_rate) {
            return Err(NetError::InvalidConfig("learning rate outside [1e-5, 1e-2]".into()));
        }
        if !BATCH_CHOICES.contains(&self.batch) {
            return Err(NetError::InvalidConfig(format!("batch {} not in {BATCH_CHOICES:?}", self.batch)));
        }
        if !window_choices().contains(&self.window) {
            return Err(NetError::InvalidConfig(format!("window {} not admissible", self.window)));
        }
        Ok(())
    }
}

/// One supervised sample: `w` consecutive days of every feature predicting
/// the next day's target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// features x w, chronological columns.
    pub input: Vec<Vec<f64>>,
    pub target: f64,
    /// Day index (into the source frame) of the target.
    pub target_day: usize,
}

/// Build sliding windows over a (normalized) frame. One sample per valid
/// position, chronologically ordered; count = days - w.
pub fn make_windows(
    frame: &AlignedFrame,
    target_name: &str,
    w: usize,
) -> Result<Vec<WindowSample>, NetError> {
    let days = frame.n_days();
    if w == 0 || w >= days {
        return Err(NetError::BadWindow { w, days });
    }
    let target_row = frame
        .row_index(target_name)
        .ok_or_else(|| NetError::UnknownTarget(target_name.to_string()))?;
    let mut samples = Vec::with_capacity(days - w);
    for t in (w - 1)..(days - 1) {
        let input: Vec<Vec<f64>> = frame
            .values
            .iter()
            .map(|row| row[t + 1 - w..=t].to_vec())
            .collect();
        samples.push(WindowSample {
            input,
            target: frame.values[target_row][t + 1],
            target_day: t + 1,
        });
    }
    Ok(samples)
}

/// Chronological train/validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrainSplit {
    /// Leading fraction of samples used for training.
    Fraction(f64),
    /// Exact number of leading training samples.
    TrainCount(usize),
}

impl TrainSplit {
    fn train_len(&self, n: usize) -> usize {
        match *self {
            TrainSplit::Fraction(f) => ((n as f64 * f).round() as usize).clamp(1, n),
            TrainSplit::TrainCount(c) => c.clamp(1, n),
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mae: Option<f64>,
}

/// Incremental trainer: owns the parameters and optimizer state so callers
/// (the tuner in particular) can drive epochs and read validation metrics
/// between them.
pub struct Trainer<'a> {
    samples: &'a [WindowSample],
    config: ModelConfig,
    params: LstmParams,
    flat: Vec<f64>,
    adam: Adam,
    rng: ChaCha8Rng,
    n_train: usize,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        samples: &'a [WindowSample],
        config: ModelConfig,
        split: TrainSplit,
    ) -> Result<Self, NetError> {
        config.validate_structure()?;
        if samples.is_empty() {
            return Err(NetError::EmptyTrainingSet);
        }
        let n_train = split.train_len(samples.len());
        if config.batch > n_train {
            return Err(NetError::BatchTooLarge {
                batch: config.batch,
                train: n_train,
            });
        }
        let input_dim = samples[0].input.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = LstmParams::init(input_dim, config.hidden, config.fc, &mut rng);
        let flat = params.flatten();
        let adam = Adam::new(flat.len(), config.learning_rate);
        Ok(Self {
            samples,
            config,
            params,
            flat,
            adam,
            rng,
            n_train,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }

    pub fn into_params(self) -> LstmParams {
        self.params
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// One pass over the training split: shuffled mini-batches, per-batch
    /// Adam updates, then a validation MAE when a holdout exists.
    pub fn run_epoch(&mut self) -> Result<EpochStats, NetError> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.n_train).collect();
        order.shuffle(&mut self.rng);

        let mut sq_err_sum = 0.0;
        let mut grads = self.params.zeros_like();
        for batch in order.chunks(self.config.batch) {
            let scale = 2.0 / batch.len() as f64;
            grads.unflatten_into(&vec![0.0; self.flat.len()]);
            let mut batch_sq = 0.0;
            for &idx in batch {
                let sample = &self.samples[idx];
                let cache = forward(
                    &self.params,
                    &sample.input,
                    self.config.dropout,
                    true,
                    &mut self.rng,
                )?;
                let err = cache.y_hat - sample.target;
                batch_sq += err * err;
                backward(&self.params, &cache, scale * err, &mut grads);
            }
            if !batch_sq.is_finite() {
                return Err(NetError::Divergence { epoch: self.epoch });
            }
            sq_err_sum += batch_sq;
            let grad_flat = grads.flatten();
            self.adam.step(&mut self.flat, &grad_flat);
            self.params.unflatten_into(&self.flat);
        }

        let train_mse = sq_err_sum / self.n_train as f64;
        if !train_mse.is_finite() {
            return Err(NetError::Divergence { epoch: self.epoch });
        }
        let val_mae = if self.n_train < self.samples.len() {
            let val = &self.samples[self.n_train..];
            let mut abs = 0.0;
            for s in val {
                let out = forward(&self.params, &s.input, 0.0, false, &mut self.rng)?;
                abs += (out.y_hat - s.target).abs();
            }
            Some(abs / val.len() as f64)
        } else {
            None
        };
        Ok(EpochStats {
            epoch: self.epoch,
            train_mse,
            val_mae,
        })
    }
}

/// Train for up to `config.epochs` epochs with early stopping on the
/// monitored loss (validation MAE when a holdout exists, else training MSE).
/// Returns the parameters from the best monitored epoch and the per-epoch
/// training losses.
pub fn train(
    samples: &[WindowSample],
    config: ModelConfig,
    split: TrainSplit,
) -> Result<(LstmParams, Vec<f64>), NetError> {
    let mut trainer = Trainer::new(samples, config, split)?;
    let mut losses = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, LstmParams)> = None;
    let mut since_best = 0usize;
    for _ in 0..config.epochs {
        let stats = trainer.run_epoch()?;
        losses.push(stats.train_mse);
        let monitored = stats.val_mae.unwrap_or(stats.train_mse);
        match &best {
            Some((b, _)) if monitored >= *b => {
                since_best += 1;
                if config.patience > 0 && since_best >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((monitored, trainer.params().clone()));
                since_best = 0;
            }
        }
    }
    let params = match best {
        Some((_, p)) if config.patience > 0 => p,
        _ => trainer.into_params(),
    };
    Ok((params, losses))
}

/// Inference over samples in order. Predictions are produced in normalized
/// space and mapped back through the target row's stored min/max.
pub fn predict_series(
    params: &LstmParams,
    samples: &[WindowSample],
    scale: &RowScale,
) -> Result<Vec<f64>, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    samples
        .iter()
        .map(|s| {
            forward(params, &s.input, 0.0, false, &mut rng)
                .map(|c| scale.denormalize(c.y_hat))
        })
        .collect()
}
