//! Causality-driven feature selection.
//!
//! Per-feature optimal lags come from bivariate VAR(p) fits scored by AIC;
//! features are then shifted to their lags, ranked by recursive feature
//! elimination with random-forest importances, and min-max normalized.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{self, ForestError, ForestParams};
use crate::ingest::{AlignedFrame, TradingCalendar};

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
const DET_RIDGE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FeatSelError {
    #[error("matrix rows have unequal lengths")]
    RaggedInput,
    #[error("sample size {t} too small for p={p} with {n} variables (need T > p*n + 1)")]
    SampleTooSmall { t: usize, p: usize, n: usize },
    #[error("rank-deficient regressors{}", match .feature { Some(f) => format!(" (feature row {f} has zero variance)"), None => String::new() })]
    RankDeficient { feature: Option<usize> },
    #[error("residual covariance determinant non-finite after regularization")]
    NonFiniteDeterminant,
    #[error("series lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("no row named '{0}' in frame")]
    UnknownFeature(String),
    #[error("lag {lag} is not below the calendar length {days}")]
    LagTooLarge { lag: usize, days: usize },
    #[error("keep={keep} exceeds the {available} available features")]
    KeepTooLarge { keep: usize, available: usize },
    #[error("keep and step must be at least 1")]
    BadKeepOrStep,
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("frame error: {0}")]
    Frame(#[from] crate::ingest::IngestError),
}

/// Ordinary-least-squares VAR(p) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarFit {
    pub p: usize,
    /// Intercept vector, length n.
    pub intercept: Vec<f64>,
    /// One n x n matrix per lag; `coefficients[l][i][j]` multiplies variable
    /// j at lag l+1 in equation i.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    /// Residual covariance E E^T / T_eff, n x n.
    pub sigma_hat: Vec<Vec<f64>>,
    pub t_eff: usize,
}

/// Fit VAR(p) by OLS per equation on lagged regressors. `y` is n rows by T
/// columns; p = 0 fits the intercept only.
pub fn fit_var(y: &[Vec<f64>], p: usize) -> Result<VarFit, FeatSelError> {
    let n = y.len();
    let t = y.first().map(|r| r.len()).unwrap_or(0);
    if y.iter().any(|r| r.len() != t) {
        return Err(FeatSelError::RaggedInput);
    }
    if t <= p * n + 1 {
        return Err(FeatSelError::SampleTooSmall { t, p, n });
    }
    if p > 0 {
        if let Some(f) = y.iter().position(|row| row.iter().all(|&v| v == row[0])) {
            return Err(FeatSelError::RankDeficient { feature: Some(f) });
        }
    }

    let t_eff = t - p;
    let k = 1 + n * p;
    let x = DMatrix::from_fn(t_eff, k, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / n + 1;
            let var = (c - 1) % n;
            y[var][r + p - lag]
        }
    });
    let dep = DMatrix::from_fn(t_eff, n, |r, c| y[c][r + p]);

    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &dep;
    let beta = xtx
        .cholesky()
        .ok_or(FeatSelError::RankDeficient { feature: None })?
        .solve(&xty);

    let residuals = &dep - &x * &beta;
    let sigma = residuals.transpose() * &residuals / t_eff as f64;

    let intercept: Vec<f64> = (0..n).map(|i| beta[(0, i)]).collect();
    let coefficients: Vec<Vec<Vec<f64>>> = (1..=p)
        .map(|lag| {
            (0..n)
                .map(|i| (0..n).map(|j| beta[(1 + (lag - 1) * n + j, i)]).collect())
                .collect()
        })
        .collect();
    let sigma_hat: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sigma[(i, j)]).collect())
        .collect();

    Ok(VarFit {
        p,
        intercept,
        coefficients,
        sigma_hat,
        t_eff,
    })
}

/// Which sample size enters the AIC penalty denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AicSampleSize {
    /// The raw series length T.
    #[default]
    Raw,
    /// T - p, the regression's effective sample size.
    Effective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aic {
    pub value: f64,
    /// True when the covariance needed a ridge on the diagonal to reach a
    /// positive determinant.
    pub regularized: bool,
}

/// AIC(p) = ln det(sigma_hat) + 2 p n^2 / T.
pub fn aic(fit: &VarFit, t: usize) -> Result<Aic, FeatSelError> {
    let n = fit.sigma_hat.len();
    let sigma = DMatrix::from_fn(n, n, |i, j| fit.sigma_hat[i][j]);
    let mut det = sigma.determinant();
    let mut regularized = false;
    if det.is_nan() || det <= 0.0 {
        let ridged = &sigma + DMatrix::identity(n, n) * DET_RIDGE;
        det = ridged.determinant();
        regularized = true;
    }
    if det.is_nan() || det <= 0.0 || !det.is_finite() {
        return Err(FeatSelError::NonFiniteDeterminant);
    }
    let penalty = 2.0 * fit.p as f64 * (n * n) as f64 / t as f64;
    Ok(Aic {
        value: det.ln() + penalty,
        regularized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagScan {
    /// Lag with the lowest AIC; ties resolve to the smaller lag.
    pub p_star: usize,
    pub curve: Vec<(usize, f64)>,
    pub regularized: bool,
}

/// Scan lag orders for a bivariate (target, feature) VAR and pick the AIC
/// minimum.
pub fn select_lag(
    target: &[f64],
    feature: &[f64],
    p_range: RangeInclusive<usize>,
    sample_size: AicSampleSize,
) -> Result<LagScan, FeatSelError> {
    if target.len() != feature.len() {
        return Err(FeatSelError::LengthMismatch {
            a: target.len(),
            b: feature.len(),
        });
    }
    let y = vec![target.to_vec(), feature.to_vec()];
    let t_raw = target.len();
    let mut curve = Vec::new();
    let mut regularized = false;
    for p in p_range {
        let fit = fit_var(&y, p)?;
        let t = match sample_size {
            AicSampleSize::Raw => t_raw,
            AicSampleSize::Effective => fit.t_eff,
        };
        let a = aic(&fit, t)?;
        regularized |= a.regularized;
        curve.push((p, a.value));
    }
    let mut best = curve[0];
    for &(p, v) in &curve[1..] {
        if v < best.1 {
            best = (p, v);
        }
    }
    Ok(LagScan {
        p_star: best.0,
        curve,
        regularized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagEntry {
    pub lag: usize,
    pub aic: f64,
}

/// Per-feature optimal lag with its AIC value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LagTable {
    pub entries: BTreeMap<String, LagEntry>,
}

impl LagTable {
    pub fn max_lag(&self) -> usize {
        self.entries.values().map(|e| e.lag).max().unwrap_or(0)
    }
}

/// AIC value per scanned lag, keyed by feature name.
pub type AicCurves = BTreeMap<String, Vec<(usize, f64)>>;

/// Scan every non-target row of the frame against the target. Scans run in
/// parallel; results are keyed by feature name.
pub fn scan_lags(
    frame: &AlignedFrame,
    target_name: &str,
    p_range: RangeInclusive<usize>,
    sample_size: AicSampleSize,
) -> Result<(LagTable, AicCurves), FeatSelError> {
    let target = frame
        .row(target_name)
        .ok_or_else(|| FeatSelError::UnknownFeature(target_name.to_string()))?;
    let scans: Vec<(String, LagScan)> = frame
        .features
        .par_iter()
        .zip(frame.values.par_iter())
        .filter(|(name, _)| name.as_str() != target_name)
        .map(|(name, row)| {
            select_lag(target, row, p_range.clone(), sample_size).map(|s| (name.clone(), s))
        })
        .collect::<Result<_, _>>()?;

    let mut table = LagTable::default();
    let mut curves = BTreeMap::new();
    for (name, scan) in scans {
        let aic_at_best = scan
            .curve
            .iter()
            .find(|(p, _)| *p == scan.p_star)
            .expect("p_star comes from the curve")
            .1;
        table.entries.insert(
            name.clone(),
            LagEntry {
                lag: scan.p_star,
                aic: aic_at_best,
            },
        );
        curves.insert(name, scan.curve);
    }
    Ok((table, curves))
}

/// Shift each tabled feature forward by its lag (day d takes the feature's
/// value from day d - lag) and trim the leading max-lag days from all rows.
/// Rows absent from the table (the target) pass through unshifted.
pub fn apply_lags(frame: &AlignedFrame, lags: &LagTable) -> Result<AlignedFrame, FeatSelError> {
    for name in lags.entries.keys() {
        if frame.row_index(name).is_none() {
            return Err(FeatSelError::UnknownFeature(name.clone()));
        }
    }
    let days = frame.n_days();
    let max_lag = lags.max_lag();
    if max_lag >= days {
        return Err(FeatSelError::LagTooLarge { lag: max_lag, days });
    }

    let calendar = TradingCalendar::new(frame.calendar.days()[max_lag..].to_vec())?;
    let mut values = Vec::with_capacity(frame.n_features());
    for (name, row) in frame.features.iter().zip(&frame.values) {
        let lag = lags.entries.get(name).map(|e| e.lag).unwrap_or(0);
        values.push((max_lag..days).map(|d| row[d - lag]).collect());
    }
    Ok(AlignedFrame::new(calendar, frame.features.clone(), values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    /// Normalized importance from the fit that decided this feature's fate.
    pub importance: f64,
    /// 0 for kept features; otherwise the elimination round (1-based).
    pub eliminated_round: usize,
}

/// Features ordered most-important first: survivors by final importance,
/// then eliminated features from the last round back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub features: Vec<RankedFeature>,
    pub keep: usize,
}

impl ImportanceRanking {
    pub fn kept(&self) -> impl Iterator<Item = &str> {
        self.features
            .iter()
            .filter(|f| f.eliminated_round == 0)
            .map(|f| f.name.as_str())
    }

    /// Names of the top `k` features in ranking order.
    pub fn top(&self, k: usize) -> Vec<String> {
        self.features
            .iter()
            .take(k)
            .map(|f| f.name.clone())
            .collect()
    }
}

/// Recursive feature elimination: fit the forest, drop the `step`
/// lowest-importance features (never past `keep`), repeat. Equal importances
/// eliminate the higher feature index first. The frame holds candidate
/// features only; `target` is the regression target per day.
pub fn rfe(
    frame: &AlignedFrame,
    target: &[f64],
    keep: usize,
    step: usize,
    params: &ForestParams,
) -> Result<ImportanceRanking, FeatSelError> {
    if keep < 1 || step < 1 {
        return Err(FeatSelError::BadKeepOrStep);
    }
    let available = frame.n_features();
    if keep > available {
        return Err(FeatSelError::KeepTooLarge { keep, available });
    }
    if target.len() != frame.n_days() {
        return Err(FeatSelError::LengthMismatch {
            a: target.len(),
            b: frame.n_days(),
        });
    }

    let fit_round = |active: &[usize], round: u64| -> Result<Vec<f64>, FeatSelError> {
        let x: Vec<Vec<f64>> = (0..frame.n_days())
            .map(|d| active.iter().map(|&f| frame.values[f][d]).collect())
            .collect();
        let seeded = ForestParams {
            seed: params.seed.wrapping_add(round.wrapping_mul(SEED_STRIDE)),
            ..*params
        };
        Ok(forest::importance(&forest::fit_forest(&x, target, &seeded)?))
    };

    let mut remaining: Vec<usize> = (0..available).collect();
    let mut eliminated: Vec<RankedFeature> = Vec::new();
    let mut round = 0usize;
    while remaining.len() > keep {
        round += 1;
        let imp = fit_round(&remaining, round as u64)?;
        let drop_n = step.min(remaining.len() - keep);
        // Lowest importance eliminated first; ties drop the higher index.
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| {
            imp[a]
                .total_cmp(&imp[b])
                .then(remaining[b].cmp(&remaining[a]))
        });
        let mut dropped: Vec<usize> = order[..drop_n].to_vec();
        for &pos in &dropped {
            eliminated.push(RankedFeature {
                name: frame.features[remaining[pos]].clone(),
                importance: imp[pos],
                eliminated_round: round,
            });
        }
        dropped.sort_unstable_by(|a, b| b.cmp(a));
        for pos in dropped {
            remaining.remove(pos);
        }
    }

    let final_imp = fit_round(&remaining, 0)?;
    let mut features: Vec<RankedFeature> = remaining
        .iter()
        .zip(&final_imp)
        .map(|(&f, &imp)| RankedFeature {
            name: frame.features[f].clone(),
            importance: imp,
            eliminated_round: 0,
        })
        .collect();
    features.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.name.cmp(&b.name)));

    // Most recent eliminations rank just below the survivors; within one
    // round the least important sits last.
    eliminated.reverse();
    features.extend(eliminated);
    Ok(ImportanceRanking { features, keep })
}

/// Per-row min/max recorded during normalization; inverts the scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowScale {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

impl RowScale {
    pub fn normalize(&self, v: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        if self.constant {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }
}

/// Scale every row to [0, 1] via (x - min) / (max - min). Constant rows map
/// to 0.0 and are flagged (and noted on the frame).
pub fn minmax_normalize(frame: &AlignedFrame) -> (AlignedFrame, Vec<RowScale>) {
    let mut scales = Vec::with_capacity(frame.n_features());
    let mut values = Vec::with_capacity(frame.n_features());
    let mut notes = frame.notes.clone();
    for (name, row) in frame.features.iter().zip(&frame.values) {
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let constant = min == max;
        if constant {
            log::warn!("constant row '{name}' normalized to all zeros");
            notes.push(format!("constant row '{name}' normalized to all zeros"));
        }
        let scale = RowScale {
            name: name.clone(),
            min,
            max,
            constant,
        };
        values.push(row.iter().map(|&v| scale.normalize(v)).collect());
        scales.push(scale);
    }
    let mut out = AlignedFrame::new(frame.calendar.clone(), frame.features.clone(), values)
        .expect("normalization preserves shape");
    out.notes = notes;
    (out, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn frame_from_rows(names: &[&str], rows: Vec<Vec<f64>>) -> AlignedFrame {
        let start = NaiveDate::from_ymd_opt(2022, 4, 4).unwrap();
        let days: Vec<NaiveDate> = (0..rows[0].len() as u64)
            .map(|i| start + chrono::Days::new(i))
            .collect();
        AlignedFrame::new(
            TradingCalendar::new(days).unwrap(),
            names.iter().map(|s| s.to_string()).collect(),
            rows,
        )
        .unwrap()
    }

    fn ar1(seed: u64, t: usize, phi: f64, noise: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0; t + 100];
        for i in 1..y.len() {
            y[i] = phi * y[i - 1] + noise * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        y.split_off(100)
    }

    #[test]
    fn var1_matches_closed_form_ols() {
        let y = ar1(11, 500, 0.5, 0.3);
        let fit = fit_var(std::slice::from_ref(&y), 1).unwrap();
        let slope = fit.coefficients[0][0][0];
        assert!((slope - 0.5).abs() < 0.1, "slope {slope}");

        // Closed-form simple regression of y_t on y_{t-1} with intercept.
        let t = y.len();
        let xs = &y[..t - 1];
        let ys = &y[1..];
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope_hand = sxy / sxx;
        let intercept_hand = my - slope_hand * mx;
        assert!((slope - slope_hand).abs() < 1e-10);
        assert!((fit.intercept[0] - intercept_hand).abs() < 1e-10);
    }

    #[test]
    fn constant_series_is_rank_deficient() {
        let c = vec![1.0; 50];
        let err = fit_var(&[c], 1).unwrap_err();
        assert!(matches!(
            err,
            FeatSelError::RankDeficient { feature: Some(0) }
        ));
    }

    #[test]
    fn intercept_only_fit_demeans() {
        let y = ar1(3, 200, 0.2, 1.0);
        let fit = fit_var(std::slice::from_ref(&y), 0).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fit.intercept[0] - mean).abs() < 1e-12);
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        assert!((fit.sigma_hat[0][0] - var).abs() < 1e-12);
        assert_eq!(fit.t_eff, 200);
    }

    #[test]
    fn ols_normal_equations_hold() {
        let a = ar1(5, 300, 0.6, 0.5);
        let b = ar1(6, 300, 0.4, 0.5);
        let y = vec![a, b];
        let p = 2;
        let fit = fit_var(&y, p).unwrap();
        let n = 2;
        let t = y[0].len();
        // Residuals recomputed from the reported coefficients must be
        // orthogonal to every regressor.
        for eq in 0..n {
            let mut dot_intercept = 0.0;
            let mut dots = vec![0.0; n * p];
            for step in p..t {
                let mut pred = fit.intercept[eq];
                for lag in 1..=p {
                    for j in 0..n {
                        pred += fit.coefficients[lag - 1][eq][j] * y[j][step - lag];
                    }
                }
                let resid = y[eq][step] - pred;
                dot_intercept += resid;
                for lag in 1..=p {
                    for j in 0..n {
                        dots[(lag - 1) * n + j] += resid * y[j][step - lag];
                    }
                }
            }
            assert!(dot_intercept.abs() < 1e-8, "intercept dot {dot_intercept}");
            for d in dots {
                assert!(d.abs() < 1e-8, "regressor dot {d}");
            }
        }
    }

    #[test]
    fn aic_direct_substitution() {
        let fit = VarFit {
            p: 1,
            intercept: vec![0.0; 2],
            coefficients: vec![vec![vec![0.0; 2]; 2]],
            sigma_hat: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            t_eff: 99,
        };
        let a = aic(&fit, 100).unwrap();
        assert!((a.value - 0.08).abs() < 1e-15);
        assert!(!a.regularized);

        // Doubling T halves the penalty exactly.
        let b = aic(&fit, 200).unwrap();
        assert!((b.value - 0.04).abs() < 1e-15);

        // p = 0 has no penalty at all.
        let fit0 = VarFit { p: 0, ..fit };
        let c = aic(&fit0, 100).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn aic_invariant_to_row_order() {
        let a = ar1(7, 250, 0.5, 0.4);
        let b = ar1(8, 250, 0.3, 0.4);
        for p in 0..=3 {
            let f1 = fit_var(&[a.clone(), b.clone()], p).unwrap();
            let f2 = fit_var(&[b.clone(), a.clone()], p).unwrap();
            let a1 = aic(&f1, 250).unwrap().value;
            let a2 = aic(&f2, 250).unwrap().value;
            assert!((a1 - a2).abs() < 1e-10, "p={p}: {a1} vs {a2}");
        }
    }

    /// Target led by a feature at lag 2: feature today carries the target's
    /// value two days ahead plus noise.
    fn planted_lag2(seed: u64, t: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let horizon = t + 2;
        let mut target = vec![0.0; horizon + 100];
        for i in 1..target.len() {
            target[i] = 0.6 * target[i - 1] + 0.5 * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        let target = target.split_off(100);
        let feature: Vec<f64> = (0..t)
            .map(|d| target[d + 2] + 0.1 * (rng.gen::<f64>() * 2.0 - 1.0))
            .collect();
        (target[..t].to_vec(), feature)
    }

    #[test]
    fn planted_lag_recovered_and_matches_brute_force() {
        let (target, feature) = planted_lag2(21, 500);
        let scan = select_lag(&target, &feature, 0..=10, AicSampleSize::Raw).unwrap();
        assert_eq!(scan.p_star, 2);

        // Independent exhaustive scan with a hand-written OLS.
        let mut best = (usize::MAX, f64::INFINITY);
        for p in 0..=10 {
            let v = brute_force_bivariate_aic(&target, &feature, p, 500);
            if v < best.1 {
                best = (p, v);
            }
        }
        assert_eq!(scan.p_star, best.0);
    }

    /// Gaussian-elimination OLS and AIC for a bivariate VAR, written
    /// independently of the library path.
    fn brute_force_bivariate_aic(a: &[f64], b: &[f64], p: usize, t_raw: usize) -> f64 {
        let y = [a, b];
        let n = 2usize;
        let t = a.len();
        let k = 1 + n * p;
        let t_eff = t - p;
        let reg = |step: usize, c: usize| -> f64 {
            if c == 0 {
                1.0
            } else {
                let lag = (c - 1) / n + 1;
                let var = (c - 1) % n;
                y[var][step - lag]
            }
        };
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![vec![0.0; n]; k];
        for step in p..t {
            for i in 0..k {
                for j in 0..k {
                    gram[i][j] += reg(step, i) * reg(step, j);
                }
                for eq in 0..n {
                    rhs[i][eq] += reg(step, i) * y[eq][step];
                }
            }
        }
        // Gauss-Jordan with partial pivoting on [gram | rhs].
        let mut m: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut row = gram[i].clone();
                row.extend(rhs[i].iter().copied());
                row
            })
            .collect();
        for col in 0..k {
            let piv = (col..k)
                .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
                .unwrap();
            m.swap(col, piv);
            let d = m[col][col];
            for j in col..k + n {
                m[col][j] /= d;
            }
            for row in 0..k {
                if row != col && m[row][col] != 0.0 {
                    let f = m[row][col];
                    for j in col..k + n {
                        m[row][j] -= f * m[col][j];
                    }
                }
            }
        }
        let beta: Vec<Vec<f64>> = (0..k).map(|i| m[i][k..].to_vec()).collect();
        let mut s = [[0.0f64; 2]; 2];
        for step in p..t {
            let mut e = [0.0f64; 2];
            for eq in 0..n {
                let mut pred = 0.0;
                for (c, beta_c) in beta.iter().enumerate() {
                    pred += reg(step, c) * beta_c[eq];
                }
                e[eq] = y[eq][step] - pred;
            }
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += e[i] * e[j];
                }
            }
        }
        for row in s.iter_mut() {
            for v in row.iter_mut() {
                *v /= t_eff as f64;
            }
        }
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        det.ln() + 2.0 * p as f64 * 4.0 / t_raw as f64
    }

    #[test]
    fn white_noise_prefers_small_lags() {
        let mut small = 0;
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a: Vec<f64> = (0..400).map(|_| rng.gen::<f64>() - 0.5).collect();
            let b: Vec<f64> = (0..400).map(|_| rng.gen::<f64>() - 0.5).collect();
            let scan = select_lag(&a, &b, 0..=10, AicSampleSize::Raw).unwrap();
            if scan.p_star <= 1 {
                small += 1;
            }
        }
        assert!(small >= 4, "only {small}/5 seeds chose lag <= 1");
    }

    #[test]
    fn singleton_range() {
        let (target, feature) = planted_lag2(3, 200);
        let scan = select_lag(&target, &feature, 3..=3, AicSampleSize::Raw).unwrap();
        assert_eq!(scan.p_star, 3);
        assert_eq!(scan.curve.len(), 1);
    }

    #[test]
    fn apply_lags_shifts_and_trims() {
        let days = 470;
        let target: Vec<f64> = (0..days).map(|i| i as f64).collect();
        let feat: Vec<f64> = (0..days).map(|i| 1000.0 + i as f64).collect();
        let zero = vec![0.0; days];
        let frame = frame_from_rows(&["target", "feat", "zero"], vec![target, feat, zero]);

        let mut lags = LagTable::default();
        lags.entries
            .insert("feat".into(), LagEntry { lag: 2, aic: 0.0 });
        lags.entries
            .insert("zero".into(), LagEntry { lag: 7, aic: 0.0 });
        let out = apply_lags(&frame, &lags).unwrap();
        assert_eq!(out.n_days(), 463);
        // Target preserved exactly on retained days.
        assert_eq!(out.row("target").unwrap()[0], 7.0);
        // Lag-2 feature at the first retained day holds its value from d-2.
        assert_eq!(out.row("feat").unwrap()[0], 1005.0);
        assert!(out.row("zero").unwrap().iter().all(|&v| v == 0.0));

        // Lag 0 on everything is the identity.
        let mut zero_lags = LagTable::default();
        zero_lags
            .entries
            .insert("feat".into(), LagEntry { lag: 0, aic: 0.0 });
        let same = apply_lags(&frame, &zero_lags).unwrap();
        assert_eq!(same.values, frame.values);
    }

    #[test]
    fn apply_lags_rejects_oversized_lag() {
        let frame = frame_from_rows(&["a"], vec![vec![1.0, 2.0, 3.0]]);
        let mut lags = LagTable::default();
        lags.entries
            .insert("a".into(), LagEntry { lag: 3, aic: 0.0 });
        assert!(matches!(
            apply_lags(&frame, &lags),
            Err(FeatSelError::LagTooLarge { .. })
        ));
    }

    fn rfe_dataset(
        seed: u64,
        n_days: usize,
        informative: usize,
        noise: usize,
    ) -> (AlignedFrame, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut names: Vec<String> = Vec::new();
        for f in 0..informative + noise {
            names.push(if f < informative {
                format!("info-{f}")
            } else {
                format!("noise-{f}")
            });
            rows.push((0..n_days).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
        }
        let y: Vec<f64> = (0..n_days)
            .map(|d| {
                let signal: f64 = (0..informative).map(|f| rows[f][d] * (f + 1) as f64).sum();
                signal + 0.1 * (rng.gen::<f64>() * 2.0 - 1.0)
            })
            .collect();
        let names_ref: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        (frame_from_rows(&names_ref, rows), y)
    }

    #[test]
    fn rfe_keeps_informative_features() {
        let (frame, y) = rfe_dataset(17, 250, 3, 7);
        let params = ForestParams {
            n_trees: 40,
            seed: 17,
            ..ForestParams::default()
        };
        let ranking = rfe(&frame, &y, 3, 1, &params).unwrap();
        let kept: Vec<&str> = ranking.kept().collect();
        assert_eq!(kept.len(), 3);
        let informative_kept = kept.iter().filter(|n| n.starts_with("info-")).count();
        assert!(informative_kept >= 2, "kept {kept:?}");
        let again = rfe(&frame, &y, 3, 1, &params).unwrap();
        assert_eq!(ranking, again);
    }

    #[test]
    fn rfe_keep_all_is_single_fit() {
        let (frame, y) = rfe_dataset(5, 120, 2, 2);
        let params = ForestParams {
            n_trees: 20,
            seed: 5,
            ..ForestParams::default()
        };
        let ranking = rfe(&frame, &y, 4, 1, &params).unwrap();
        assert_eq!(ranking.features.len(), 4);
        assert!(ranking.features.iter().all(|f| f.eliminated_round == 0));
        let imps: Vec<f64> = ranking.features.iter().map(|f| f.importance).collect();
        assert!(imps.windows(2).all(|w| w[0] >= w[1]));
    }

    /// An exact duplicate of an informative feature splits its importance,
    /// but the pair still outlasts pure noise: both copies are never gone
    /// while every noise feature remains.
    #[test]
    fn rfe_duplicated_informative_outlasts_noise() {
        let mut ok = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let n_days = 200;
            let info: Vec<f64> = (0..n_days).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mut rows = vec![info.clone(), info.clone()];
            let mut names = vec!["dup-a".to_string(), "dup-b".to_string()];
            for j in 0..4 {
                names.push(format!("noise-{j}"));
                rows.push((0..n_days).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
            }
            let y: Vec<f64> = (0..n_days)
                .map(|d| 3.0 * info[d] + 0.1 * (rng.gen::<f64>() * 2.0 - 1.0))
                .collect();
            let names_ref: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let frame = frame_from_rows(&names_ref, rows);
            let ranking = rfe(
                &frame,
                &y,
                1,
                1,
                &ForestParams {
                    n_trees: 30,
                    seed,
                    ..ForestParams::default()
                },
            )
            .unwrap();
            let round_of = |name: &str| {
                ranking
                    .features
                    .iter()
                    .find(|f| f.name == name)
                    .unwrap()
                    .eliminated_round
            };
            let copies = [round_of("dup-a"), round_of("dup-b")];
            let noise_min = (0..4)
                .map(|j| round_of(&format!("noise-{j}")))
                .filter(|&r| r > 0)
                .min()
                .unwrap();
            // A kept copy (round 0) trivially satisfies the property.
            let both_gone_first =
                copies.iter().all(|&r| r > 0) && copies.iter().max().unwrap() < &noise_min;
            if !both_gone_first {
                ok += 1;
            }
        }
        assert!(ok >= 8, "duplicate pair outlasted noise in {ok}/10 seeds");
    }

    #[test]
    fn rfe_final_round_removes_only_excess() {
        let (frame, y) = rfe_dataset(6, 120, 2, 4);
        let params = ForestParams {
            n_trees: 20,
            seed: 6,
            ..ForestParams::default()
        };
        // 6 features, keep 3, step 5: one round removes exactly 3.
        let ranking = rfe(&frame, &y, 3, 5, &params).unwrap();
        assert_eq!(ranking.kept().count(), 3);
        assert!(ranking
            .features
            .iter()
            .filter(|f| f.eliminated_round > 0)
            .all(|f| f.eliminated_round == 1));
    }

    #[test]
    fn minmax_examples() {
        let frame = frame_from_rows(&["a"], vec![vec![1.0, 2.0, 3.0]]);
        let (out, scales) = minmax_normalize(&frame);
        assert_eq!(out.row("a").unwrap(), &[0.0, 0.5, 1.0]);
        assert!(!scales[0].constant);
        assert_eq!(scales[0].denormalize(0.5), 2.0);

        let frame = frame_from_rows(&["c"], vec![vec![2.0, 2.0]]);
        let (out, scales) = minmax_normalize(&frame);
        assert_eq!(out.row("c").unwrap(), &[0.0, 0.0]);
        assert!(scales[0].constant);
        assert!(!out.notes.is_empty());

        let frame = frame_from_rows(&["u"], vec![vec![0.0, 0.25, 1.0]]);
        let (out, _) = minmax_normalize(&frame);
        assert_eq!(out.row("u").unwrap(), &[0.0, 0.25, 1.0]);
    }

    proptest! {
        #[test]
        fn minmax_bounds_and_order(row in proptest::collection::vec(-1e6f64..1e6, 2..60)) {
            let frame = frame_from_rows(&["r"], vec![row.clone()]);
            let (out, scales) = minmax_normalize(&frame);
            let norm = out.row("r").unwrap();
            prop_assert!(norm.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if !scales[0].constant {
                let min_pos = row.iter().position(|&v| v == scales[0].min).unwrap();
                let max_pos = row.iter().position(|&v| v == scales[0].max).unwrap();
                prop_assert_eq!(norm[min_pos], 0.0);
                prop_assert_eq!(norm[max_pos], 1.0);
                for i in 0..row.len() {
                    for j in 0..row.len() {
                        prop_assert_eq!(row[i] < row[j], norm[i] < norm[j]);
                    }
                }
            }
        }
    }
}
