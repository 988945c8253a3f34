//! Exploratory correlation analyses.
//!
//! Covers the autocorrelation of the target series, cross-correlation of each
//! feature against the target, and the measurement-averaged pairwise
//! correlation between the same feature observed on the ego and lead devices.
//! Pearson is the default estimator; Spearman is available for robustness
//! studies. Degenerate inputs are errors, never NaN.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AlignedPair;
use crate::trace_store::TraceSample;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series too short: length {len}, need > {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("too few pairs after null deletion: {n}")]
    TooFewPairs { n: usize },
}

/// Correlation estimator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

/// A single correlation measurement between two labelled series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub feature_a: String,
    pub feature_b: String,
    /// Always within `[-1, 1]`.
    pub coefficient: f64,
    pub n_samples: usize,
}

/// Mean-removed sample autocorrelation up to `max_lag`.
///
/// Element 0 is exactly 1; every element lies in `[-1, 1]` because the
/// biased estimator divides lagged covariances by the full-series variance.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>, StatsError> {
    let n = series.len();
    if n <= max_lag || n < 2 {
        return Err(StatsError::SeriesTooShort {
            len: n,
            min: max_lag.max(1),
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let denom: f64 = centered.iter().map(|d| d * d).sum();
    if denom <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let num: f64 = centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum();
        out.push((num / denom).clamp(-1.0, 1.0));
    }
    out[0] = 1.0;
    Ok(out)
}

/// Lag at which the autocorrelation first crosses 0.5, linearly interpolated
/// between adjacent lags. `None` when it never crosses within the computed
/// range.
pub fn acf_half_crossing(acf_values: &[f64]) -> Option<f64> {
    for lag in 1..acf_values.len() {
        let (prev, cur) = (acf_values[lag - 1], acf_values[lag]);
        if prev >= 0.5 && cur < 0.5 {
            let frac = (prev - 0.5) / (prev - cur);
            return Some((lag - 1) as f64 + frac);
        }
    }
    None
}

/// Sample Pearson correlation of two complete series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPairs { n: x.len() });
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x <= 0.0 || var_y <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson over nullable series: rows with a null on either side are
/// pairwise-deleted before computation.
pub fn pearson_nullable(x: &[Option<f64>], y: &[Option<f64>]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip();
    if xs.len() < 2 {
        return Err(StatsError::TooFewPairs { n: xs.len() });
    }
    pearson(&xs, &ys)
}

/// Spearman rank correlation (Pearson over average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    pearson(&ranks(x), &ranks(y))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average rank over the tie run, 1-based.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

fn correlate(method: CorrelationMethod, x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => spearman(x, y),
    }
}

fn correlate_nullable(
    method: CorrelationMethod,
    x: &[Option<f64>],
    y: &[Option<f64>],
) -> Result<(f64, usize), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip();
    if xs.len() < 2 {
        return Err(StatsError::TooFewPairs { n: xs.len() });
    }
    Ok((correlate(method, &xs, &ys)?, xs.len()))
}

/// Correlation of every numeric feature column against the target column,
/// ranked by absolute coefficient, strongest first. The target itself is
/// excluded. Per-feature failures (all-null columns, zero variance) are
/// returned as skips, not errors.
pub fn cross_feature_corr(
    ego: &[TraceSample],
    target: &str,
    features: &[&str],
    method: CorrelationMethod,
) -> Result<CrossFeatureRanking, StatsError> {
    if ego.is_empty() {
        return Err(StatsError::TooFewPairs { n: 0 });
    }
    let target_values: Vec<Option<f64>> = ego.iter().map(|s| s.numeric_value(target)).collect();
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for &feature in features {
        if feature == target {
            continue;
        }
        let values: Vec<Option<f64>> = ego.iter().map(|s| s.numeric_value(feature)).collect();
        match correlate_nullable(method, &values, &target_values) {
            Ok((coefficient, n_samples)) => results.push(CorrelationResult {
                feature_a: feature.to_string(),
                feature_b: target.to_string(),
                coefficient,
                n_samples,
            }),
            Err(err) => skipped.push((feature.to_string(), err.to_string())),
        }
    }
    results.sort_by(|a, b| {
        b.coefficient
            .abs()
            .total_cmp(&a.coefficient.abs())
            .then_with(|| a.feature_a.cmp(&b.feature_a))
    });
    Ok(CrossFeatureRanking { results, skipped })
}

/// Output of [`cross_feature_corr`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossFeatureRanking {
    /// Sorted by `|coefficient|` descending.
    pub results: Vec<CorrelationResult>,
    /// Features that could not be correlated, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Equal-weighted average of per-measurement pairwise feature correlations.
///
/// For each feature the ego-vs-lead correlation is computed for every
/// measurement id individually and then averaged with equal weight per
/// measurement. Per-(measurement, feature) failures are excluded from that
/// feature's mean; a feature with no usable measurement is reported missing
/// (`None`).
pub fn pairwise_avg_corr(
    sets: &BTreeMap<u32, Vec<AlignedPair>>,
    features: &[&str],
    method: CorrelationMethod,
) -> PairwiseAvgCorr {
    let mut per_measurement: BTreeMap<u32, Vec<Option<f64>>> = BTreeMap::new();
    let mut averaged = Vec::with_capacity(features.len());
    for (idx, &feature) in features.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (&mid, pairs) in sets {
            let ego: Vec<Option<f64>> = pairs.iter().map(|p| p.ego.numeric_value(feature)).collect();
            let lead: Vec<Option<f64>> =
                pairs.iter().map(|p| p.lead.numeric_value(feature)).collect();
            let cell = correlate_nullable(method, &ego, &lead).ok().map(|(c, _)| c);
            let row = per_measurement
                .entry(mid)
                .or_insert_with(|| vec![None; features.len()]);
            row[idx] = cell;
            if let Some(c) = cell {
                sum += c;
                count += 1;
            }
        }
        averaged.push((count > 0).then(|| sum / count as f64));
    }
    PairwiseAvgCorr {
        features: features.iter().map(|s| s.to_string()).collect(),
        per_measurement,
        averaged,
    }
}

/// Per-measurement coefficient matrix plus the equal-weight average row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseAvgCorr {
    pub features: Vec<String>,
    /// measurement id → one coefficient per feature (None = unusable).
    pub per_measurement: BTreeMap<u32, Vec<Option<f64>>>,
    /// Equal-weight mean over measurements, per feature.
    pub averaged: Vec<Option<f64>>,
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pearson_is_symmetric_and_bounded(
            pairs in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 3..60)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
                prop_assert_eq!(a, b);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn acf_values_stay_bounded(
            series in proptest::collection::vec(-1e3f64..1e3, 8..120),
            max_lag in 1usize..6
        ) {
            if let Ok(values) = acf(&series, max_lag) {
                prop_assert_eq!(values[0], 1.0);
                prop_assert!(values.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn pearson_positive_affine_invariance(
            pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 4..40),
            scale in 0.01f64..100.0,
            shift in -1e3f64..1e3
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(base) = pearson(&x, &y) {
                let mapped: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                if let Ok(r) = pearson(&mapped, &y) {
                    prop_assert!((r - base).abs() < 1e-9);
                }
            }
        }
    }
}
