//! Forecast evaluation: MAE/RMSE, percentage improvement, Diebold-Mariano
//! pairwise tests, the textual-feature ablation matrix, and the window-size
//! and feature-count sweeps.
//!
//! The ablation and sweep drivers are generic over a cycle closure that runs
//! one full train/evaluate pass and returns (MAE, RMSE); the pipeline module
//! supplies that closure so every cell shares seeds and cached features.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and actual lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty input")]
    Empty,
    #[error("reference metric must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { got: usize, need: usize },
    #[error("forecast horizon must be at least 1")]
    BadHorizon,
    #[error("evaluation cycle failed: {0}")]
    CycleFailed(String),
}

pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    check_pair(predicted, actual)?;
    Ok(predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / predicted.len() as f64)
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    check_pair(predicted, actual)?;
    let mse = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / predicted.len() as f64;
    Ok(mse.sqrt())
}

fn check_pair(predicted: &[f64], actual: &[f64]) -> Result<(), EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            a: predicted.len(),
            b: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// (reference - combined) / reference x 100.
pub fn percentage_improvement(metric_ref: f64, metric_combined: f64) -> Result<f64, EvalError> {
    if metric_ref.is_nan() || metric_ref <= 0.0 {
        return Err(EvalError::NonPositiveReference(metric_ref));
    }
    Ok((metric_ref - metric_combined) / metric_ref * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmLoss {
    Squared,
    Absolute,
}

impl DmLoss {
    fn apply(self, e: f64) -> f64 {
        match self {
            DmLoss::Squared => e * e,
            DmLoss::Absolute => e.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    /// Absent when the loss differential is degenerate.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub degenerate: bool,
    pub loss: DmLoss,
    pub horizon: usize,
    pub hln_corrected: bool,
}

/// Diebold-Mariano test on the loss differential d_t = L(e_a) - L(e_b).
///
/// The long-run variance uses a rectangular window over h-1 autocovariances;
/// h = 1 reduces it to the sample variance of d. The two-sided p-value comes
/// from the standard normal. A zero-variance differential (identical losses)
/// is flagged degenerate with no statistic, as is a non-positive long-run
/// variance estimate.
pub fn dm_test(
    errors_a: &[f64],
    errors_b: &[f64],
    h: usize,
    loss: DmLoss,
) -> Result<DmResult, EvalError> {
    dm_test_opts(errors_a, errors_b, h, loss, false)
}

/// `dm_test` with the optional Harvey-Leybourne-Newbold small-sample
/// correction: the statistic is scaled and referred to a t distribution with
/// n - 1 degrees of freedom.
pub fn dm_test_opts(
    errors_a: &[f64],
    errors_b: &[f64],
    h: usize,
    loss: DmLoss,
    hln: bool,
) -> Result<DmResult, EvalError> {
    if errors_a.len() != errors_b.len() {
        return Err(EvalError::LengthMismatch {
            a: errors_a.len(),
            b: errors_b.len(),
        });
    }
    let n = errors_a.len();
    if n < 10 {
        return Err(EvalError::TooFewObservations { got: n, need: 10 });
    }
    if h < 1 {
        return Err(EvalError::BadHorizon);
    }

    let d: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| loss.apply(*a) - loss.apply(*b))
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let gamma = |k: usize| -> f64 {
        d.iter()
            .skip(k)
            .zip(&d)
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = gamma(0);
    let degenerate_result = |loss, h| DmResult {
        statistic: None,
        p_value: None,
        degenerate: true,
        loss,
        horizon: h,
        hln_corrected: hln,
    };
    if gamma0 == 0.0 {
        return Ok(degenerate_result(loss, h));
    }
    let mut lrv = gamma0;
    for k in 1..h {
        lrv += 2.0 * gamma(k);
    }
    if lrv <= 0.0 {
        return Ok(degenerate_result(loss, h));
    }

    let mut statistic = mean / (lrv / n as f64).sqrt();
    let p_value = if hln {
        let nf = n as f64;
        let hf = h as f64;
        let factor = ((nf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / nf) / nf).sqrt();
        statistic *= factor;
        let t = StudentsT::new(0.0, 1.0, nf - 1.0).expect("valid dof");
        2.0 * (1.0 - t.cdf(statistic.abs()))
    } else {
        let norm = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * (1.0 - norm.cdf(statistic.abs()))
    };
    Ok(DmResult {
        statistic: Some(statistic),
        p_value: Some(p_value),
        degenerate: false,
        loss,
        horizon: h,
        hln_corrected: hln,
    })
}

/// Per-day forecast record with its summary metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub label: String,
    pub predictions: Vec<f64>,
    pub actuals: Vec<f64>,
    pub mae: f64,
    pub rmse: f64,
    /// Percentage improvement vs a reference feature set, when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_rmse: Option<f64>,
    pub seed: u64,
    /// Snapshot of the run configuration.
    pub config: serde_json::Value,
}

impl ForecastReport {
    pub fn new(
        label: impl Into<String>,
        predictions: Vec<f64>,
        actuals: Vec<f64>,
        seed: u64,
        config: serde_json::Value,
    ) -> Result<Self, EvalError> {
        let mae = mae(&predictions, &actuals)?;
        let rmse = rmse(&predictions, &actuals)?;
        Ok(Self {
            label: label.into(),
            predictions,
            actuals,
            mae,
            rmse,
            pi_mae: None,
            pi_rmse: None,
            seed,
            config,
        })
    }

    pub fn with_reference(mut self, reference: &ForecastReport) -> Result<Self, EvalError> {
        self.pi_mae = Some(percentage_improvement(reference.mae, self.mae)?);
        self.pi_rmse = Some(percentage_improvement(reference.rmse, self.rmse)?);
        Ok(self)
    }
}

/// Textual feature family in the ablation matrix: source-classified
/// sentiment (A), topic-clustered sentiment (B), source-classified movement
/// (C), topic-clustered movement (D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
    C,
    D,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::A, Family::B, Family::C, Family::D];
}

/// All 16 family subsets: the empty set, singletons, and upward by size.
pub fn family_combinations() -> Vec<Vec<Family>> {
    let mut combos: Vec<Vec<Family>> = Vec::with_capacity(16);
    for size in 0..=4usize {
        let mut of_size: Vec<Vec<Family>> = Vec::new();
        subsets_of_size(&Family::ALL, size, 0, &mut Vec::new(), &mut of_size);
        combos.extend(of_size);
    }
    combos
}

fn subsets_of_size(
    pool: &[Family],
    size: usize,
    from: usize,
    current: &mut Vec<Family>,
    out: &mut Vec<Vec<Family>>,
) {
    if current.len() == size {
        out.push(current.clone());
        return;
    }
    for i in from..pool.len() {
        current.push(pool[i]);
        subsets_of_size(pool, size, i + 1, current, out);
        current.pop();
    }
}

pub fn combination_label(families: &[Family]) -> String {
    if families.is_empty() {
        "(0)".to_string()
    } else {
        families
            .iter()
            .map(|f| format!("({f:?})"))
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub families: Vec<Family>,
    pub mae: f64,
    pub rmse: f64,
    /// 1-based rank of this cell's MAE among all cells (lower is better).
    pub mae_rank: usize,
    pub rmse_rank: usize,
    /// 0.5 x MAE rank + 0.5 x RMSE rank.
    pub weighted_rank: f64,
    /// 1-based position after ordering by weighted rank, ties broken by the
    /// MAE rank.
    pub final_order: usize,
}

/// Run one train/evaluate cycle per family combination (all 16, identical
/// seeds and config via the closure) and rank the results. Any failed cycle
/// voids the whole table.
pub fn ablation_run<F>(mut cycle: F) -> Result<Vec<AblationCell>, EvalError>
where
    F: FnMut(&[Family]) -> Result<(f64, f64), String>,
{
    let combos = family_combinations();
    let mut metrics = Vec::with_capacity(combos.len());
    for families in &combos {
        let (mae, rmse) = cycle(families).map_err(EvalError::CycleFailed)?;
        metrics.push((mae, rmse));
    }

    let rank_of = |key: fn(&(f64, f64)) -> f64| -> Vec<usize> {
        let mut order: Vec<usize> = (0..metrics.len()).collect();
        order.sort_by(|&a, &b| key(&metrics[a]).total_cmp(&key(&metrics[b])).then(a.cmp(&b)));
        let mut ranks = vec![0usize; metrics.len()];
        for (pos, idx) in order.iter().enumerate() {
            ranks[*idx] = pos + 1;
        }
        ranks
    };
    let mae_ranks = rank_of(|m| m.0);
    let rmse_ranks = rank_of(|m| m.1);

    let weighted: Vec<f64> = mae_ranks
        .iter()
        .zip(&rmse_ranks)
        .map(|(&a, &b)| 0.5 * a as f64 + 0.5 * b as f64)
        .collect();
    let mut final_order_idx: Vec<usize> = (0..metrics.len()).collect();
    final_order_idx.sort_by(|&a, &b| {
        weighted[a]
            .total_cmp(&weighted[b])
            .then(mae_ranks[a].cmp(&mae_ranks[b]))
    });
    let mut final_orders = vec![0usize; metrics.len()];
    for (pos, idx) in final_order_idx.iter().enumerate() {
        final_orders[*idx] = pos + 1;
    }

    Ok(combos
        .into_iter()
        .enumerate()
        .map(|(i, families)| AblationCell {
            label: combination_label(&families),
            families,
            mae: metrics[i].0,
            rmse: metrics[i].1,
            mae_rank: mae_ranks[i],
            rmse_rank: rmse_ranks[i],
            weighted_rank: weighted[i],
            final_order: final_orders[i],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The swept value: window size or kept feature count.
    pub x: usize,
    pub mae: f64,
    pub rmse: f64,
}

/// One evaluation per window size, fixed seeds via the closure.
pub fn window_sweep<F>(sizes: &[usize], mut cycle: F) -> Result<Vec<SweepRow>, EvalError>
where
    F: FnMut(usize) -> Result<(f64, f64), String>,
{
    sizes
        .iter()
        .map(|&w| {
            let (mae, rmse) = cycle(w).map_err(EvalError::CycleFailed)?;
            Ok(SweepRow { x: w, mae, rmse })
        })
        .collect()
}

/// One evaluation per kept-feature count (top-k of the RFE ranking plus all
/// textual features, supplied by the closure).
pub fn rfe_sweep<F>(counts: &[usize], mut cycle: F) -> Result<Vec<SweepRow>, EvalError>
where
    F: FnMut(usize) -> Result<(f64, f64), String>,
{
    counts
        .iter()
        .map(|&k| {
            let (mae, rmse) = cycle(k).map_err(EvalError::CycleFailed)?;
            Ok(SweepRow { x: k, mae, rmse })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_rmse_hand_arithmetic() {
        let y = vec![2.0, 4.0];
        let yhat = vec![1.0, 2.0];
        assert_eq!(mae(&yhat, &y).unwrap(), 1.5);
        assert!((rmse(&yhat, &y).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);

        let same = vec![1.0, 2.0, 3.0];
        assert_eq!(mae(&same, &same).unwrap(), 0.0);
        assert_eq!(rmse(&same, &same).unwrap(), 0.0);

        // Constant offset: MAE = RMSE = |c|.
        let shifted: Vec<f64> = same.iter().map(|v| v + 0.25).collect();
        assert!((mae(&shifted, &same).unwrap() - 0.25).abs() < 1e-15);
        assert!((rmse(&shifted, &same).unwrap() - 0.25).abs() < 1e-15);

        assert!(matches!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(mae(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn mae_never_exceeds_rmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let n = rng.gen_range(1..50);
            let yhat: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            assert!(mae(&yhat, &y).unwrap() <= rmse(&yhat, &y).unwrap() + 1e-12);
        }
    }

    #[test]
    fn percentage_improvement_published_pairs() {
        let cases = [
            (0.004270, 0.003746, 12.27),
            (0.005502, 0.004982, 9.45),
            (0.004736, 0.004511, 4.75),
            (0.005747, 0.005471, 4.80),
            (0.005816, 0.005814, 0.03),
            (0.007813, 0.007672, 1.8),
        ];
        for (reference, combined, expected) in cases {
            let pi = percentage_improvement(reference, combined).unwrap();
            assert!(
                (pi - expected).abs() <= 0.01,
                "PI({reference}, {combined}) = {pi}, expected {expected}"
            );
        }
        assert_eq!(percentage_improvement(0.5, 0.5).unwrap(), 0.0);
        assert!(percentage_improvement(0.0, 0.1).is_err());
    }

    #[test]
    fn percentage_improvement_signs_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = rng.gen_range(0.01..1.0);
            let b = rng.gen_range(0.01..1.0);
            if a == b {
                continue;
            }
            let ab = percentage_improvement(a, b).unwrap();
            let ba = percentage_improvement(b, a).unwrap();
            assert!(ab * ba <= 0.0, "PI({a},{b})={ab}, PI({b},{a})={ba}");
        }
    }

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller on two uniforms.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn dm_identical_errors_degenerate() {
        let e: Vec<f64> = (0..50).map(|i| (i as f64 * 0.17).sin()).collect();
        let res = dm_test(&e, &e, 1, DmLoss::Squared).unwrap();
        assert!(res.degenerate);
        assert!(res.statistic.is_none());
    }

    #[test]
    fn dm_antisymmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..100).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..100).map(|_| 2.0 * normal(&mut rng)).collect();
        let ab = dm_test(&a, &b, 1, DmLoss::Squared).unwrap();
        let ba = dm_test(&b, &a, 1, DmLoss::Squared).unwrap();
        assert_eq!(ab.statistic.unwrap(), -ba.statistic.unwrap());
        assert_eq!(ab.p_value.unwrap(), ba.p_value.unwrap());
    }

    /// The statistic depends on the errors only through the loss
    /// differential: flipping both error signs preserves d_t bit-for-bit.
    #[test]
    fn dm_metamorphic_differential_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..80).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..80).map(|_| 1.5 * normal(&mut rng)).collect();
        let na: Vec<f64> = a.iter().map(|v| -v).collect();
        let nb: Vec<f64> = b.iter().map(|v| -v).collect();
        for loss in [DmLoss::Squared, DmLoss::Absolute] {
            for h in [1, 3] {
                let orig = dm_test(&a, &b, h, loss).unwrap();
                let flip = dm_test(&na, &nb, h, loss).unwrap();
                assert_eq!(orig.statistic, flip.statistic);
                assert_eq!(orig.p_value, flip.p_value);
            }
        }
    }

    #[test]
    fn dm_statistic_matches_hand_computation() {
        // Small fixed vectors, h = 1: statistic = mean(d)/sqrt(var(d)/n).
        let a = vec![0.5, -0.25, 0.75, 0.1, -0.6, 0.3, 0.2, -0.1, 0.45, -0.35];
        let b = vec![0.9, -0.65, 0.15, 0.8, -0.2, 0.55, -0.7, 0.25, 0.05, -0.95];
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * x - y * y).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = mean / (var / n).sqrt();
        let res = dm_test(&a, &b, 1, DmLoss::Squared).unwrap();
        assert!((res.statistic.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn dm_detects_noise_scale_gap() {
        let n = 155;
        let mut rejections = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let a: Vec<f64> = (0..n).map(|_| 0.5 * normal(&mut rng)).collect();
            let b: Vec<f64> = (0..n).map(|_| 1.0 * normal(&mut rng)).collect();
            let res = dm_test(&a, &b, 1, DmLoss::Squared).unwrap();
            if res.p_value.unwrap() < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections >= 18, "only {rejections}/20 rejected");
    }

    #[test]
    fn dm_hln_correction_shrinks_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..60).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..60).map(|_| 1.4 * normal(&mut rng)).collect();
        let plain = dm_test_opts(&a, &b, 3, DmLoss::Squared, false).unwrap();
        let hln = dm_test_opts(&a, &b, 3, DmLoss::Squared, true).unwrap();
        assert!(hln.statistic.unwrap().abs() < plain.statistic.unwrap().abs());
        assert!(hln.hln_corrected);
    }

    #[test]
    fn ablation_enumerates_and_ranks() {
        // Deterministic fake cycle: metric improves with the family count,
        // empty set worst.
        let cells = ablation_run(|families: &[Family]| {
            let k = families.len() as f64;
            Ok((1.0 - 0.1 * k, 2.0 - 0.2 * k))
        })
        .unwrap();
        assert_eq!(cells.len(), 16);
        assert_eq!(cells[0].label, "(0)");
        assert!(cells[0].families.is_empty());
        assert_eq!(cells[1].label, "(A)");
        assert_eq!(cells[5].label, "(A)+(B)");
        assert_eq!(cells[15].label, "(A)+(B)+(C)+(D)");

        // Ranks are a permutation of 1..=16 per metric.
        let mut mae_ranks: Vec<usize> = cells.iter().map(|c| c.mae_rank).collect();
        mae_ranks.sort_unstable();
        assert_eq!(mae_ranks, (1..=16).collect::<Vec<_>>());
        let mut final_orders: Vec<usize> = cells.iter().map(|c| c.final_order).collect();
        final_orders.sort_unstable();
        assert_eq!(final_orders, (1..=16).collect::<Vec<_>>());

        // Weighted rank identity.
        for c in &cells {
            assert_eq!(
                c.weighted_rank,
                0.5 * c.mae_rank as f64 + 0.5 * c.rmse_rank as f64
            );
        }
        // The full set wins here.
        assert_eq!(cells[15].final_order, 1);
    }

    #[test]
    fn ablation_ties_order_by_mae_rank() {
        // Same weighted rank for the two singleton extremes: (A) has the
        // better MAE, (D) the better RMSE.
        let cells = ablation_run(|families: &[Family]| {
            let score = match combination_label(families).as_str() {
                "(A)" => (0.1, 0.9),
                "(D)" => (0.9, 0.1),
                other => {
                    // Distinct middling values keyed by label length.
                    let l = other.len() as f64;
                    (0.5 + l * 1e-3, 0.5 + l * 1e-3)
                }
            };
            Ok(score)
        })
        .unwrap();
        let a = cells.iter().find(|c| c.label == "(A)").unwrap();
        let d = cells.iter().find(|c| c.label == "(D)").unwrap();
        assert_eq!(a.weighted_rank, d.weighted_rank);
        assert!(a.mae_rank < d.mae_rank);
        assert!(a.final_order < d.final_order);
    }

    #[test]
    fn ablation_failure_voids_table() {
        let err = ablation_run(|families: &[Family]| {
            if families.len() == 2 {
                Err("cycle exploded".to_string())
            } else {
                Ok((1.0, 1.0))
            }
        })
        .unwrap_err();
        assert!(matches!(err, EvalError::CycleFailed(_)));
    }

    #[test]
    fn sweeps_emit_one_row_per_input() {
        let mut sizes: Vec<usize> = (1..=24).collect();
        sizes.extend([30, 40, 50, 60]);
        let rows = window_sweep(&sizes, |w| Ok((w as f64, w as f64 * 2.0))).unwrap();
        assert_eq!(rows.len(), 28);
        assert_eq!(rows[0].x, 1);
        assert_eq!(rows[27].x, 60);

        let single = window_sweep(&[3], |_| Ok((0.1, 0.2))).unwrap();
        assert_eq!(single.len(), 1);

        let counts: Vec<usize> = (1..=20).collect();
        let rows = rfe_sweep(&counts, |k| Ok((k as f64, k as f64))).unwrap();
        assert_eq!(rows.len(), 20);
    }
}
