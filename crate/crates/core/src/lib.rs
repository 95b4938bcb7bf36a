//! Daily time-series forecasting toolkit.
//!
//! The pipeline fuses quantitative daily series with per-text sentiment and
//! movement scores pooled into daily features, selects lags and features by
//! causality-driven criteria (VAR/AIC, RFE with random-forest importance),
//! and forecasts a target series with a bidirectional LSTM whose
//! hyperparameters are chosen by a study/trial optimizer with median pruning.
//!
//! Modules follow the pipeline order:
//!
//! - [`ingest`]: parse raw series, align onto a trading calendar, interpolate gaps
//! - [`textfeat`]: source classification, LDA topic clustering, daily pooling
//! - [`featsel`]: VAR/AIC lag selection, RFE ranking, min-max normalization
//! - [`forest`]: from-scratch random-forest regressor with impurity importances
//! - [`net`]: bidirectional LSTM forecaster with sliding-window datasets
//! - [`tuner`]: seeded random search with a median pruner
//! - [`eval`]: MAE/RMSE/PI metrics, Diebold-Mariano tests, ablations, sweeps
//! - [`synth`]: seeded synthetic panels and text corpora with planted ground truth
//! - [`pipeline`]: end-to-end train/evaluate cycles shared by the CLI and sweeps

pub mod eval;
pub mod featsel;
pub mod forest;
pub mod ingest;
pub mod net;
pub mod pipeline;
pub mod synth;
pub mod textfeat;
pub mod tuner;
