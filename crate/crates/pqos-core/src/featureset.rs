//! The five engineered feature datasets and their preparation steps.
//!
//! EGF holds ego-only KPIs; EGLT joins temporally aligned lead features;
//! EGLS joins spatially aligned lead features from the configured offset
//! bins. EGLT-Diff and EGLS-Ratio replace paired lead/ego columns with their
//! difference or ratio. Preparation covers collinearity pruning, min-max
//! scaling to `[0, 1]`, the chronological 80:20 split and lookback windowing
//! for the sequence models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignedPair, SpatialAlignment};
use crate::stats;
use crate::trace_store::TraceSample;

/// Guard for near-zero denominators in ratio features.
pub const RATIO_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("dataset is empty after null-drop")]
    EmptyDataset,
    #[error("dataset has no (lead_X, X) column pairs")]
    NoPairedColumns,
    #[error("transform not defined for dataset {0}")]
    UnsupportedTransform(String),
    #[error("too few rows: {n} < {min}")]
    TooFewRows { n: usize, min: usize },
    #[error("dataset must be chronological for this operation")]
    NotChronological,
    #[error("partition too short: {n} rows <= lookback {lookback}")]
    PartitionTooShort { n: usize, lookback: usize },
}

/// The five dataset variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Egf,
    Eglt,
    EgltDiff,
    Egls,
    EglsRatio,
}

impl DatasetKind {
    pub fn label(&self) -> &'static str {
        match self {
            DatasetKind::Egf => "EGF",
            DatasetKind::Eglt => "EGLT",
            DatasetKind::EgltDiff => "EGLT-Diff",
            DatasetKind::Egls => "EGLS",
            DatasetKind::EglsRatio => "EGLS-Ratio",
        }
    }

    pub fn parse(s: &str) -> Option<DatasetKind> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "egf" => Some(DatasetKind::Egf),
            "eglt" => Some(DatasetKind::Eglt),
            "eglt-diff" => Some(DatasetKind::EgltDiff),
            "egls" => Some(DatasetKind::Egls),
            "egls-ratio" => Some(DatasetKind::EglsRatio),
            _ => None,
        }
    }

    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Egf,
        DatasetKind::Eglt,
        DatasetKind::EgltDiff,
        DatasetKind::Egls,
        DatasetKind::EglsRatio,
    ];
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Ego feature columns shared by every dataset.
pub const EGF_COLUMNS: [&str; 8] = [
    "PCell_SNR_1",
    "PCell_SNR_2",
    "PCell_RSRP_max",
    "PCell_RSRQ_max",
    "PCell_RSSI_max",
    "PCell_Downlink_TB_Size",
    "PCell_Downlink_Num_RBs",
    "PCell_Downlink_Average_MCS",
];

/// Lead columns joined for the temporally aligned dataset.
pub const EGLT_LEAD_COLUMNS: [&str; 6] = [
    "lead_datarate",
    "lead_PCell_Downlink_TB_Size",
    "lead_PCell_Downlink_Tx_Power",
    "lead_PCell_Downlink_Num_RBs",
    "lead_PCell_Downlink_Average_MCS",
    "lead_PCell_RSSI_max",
];

/// Lead columns joined for the spatially aligned dataset.
pub const EGLS_LEAD_COLUMNS: [&str; 7] = [
    "lead_PCell_SNR_1",
    "lead_PCell_SNR_2",
    "lead_PCell_RSRP_max",
    "lead_PCell_RSRQ_max",
    "lead_PCell_RSSI_max",
    "lead_PCell_Downlink_Num_RBs",
    "lead_PCell_Downlink_Average_MCS",
];

/// Canonical column list per base dataset kind (transforms derive theirs).
pub fn base_columns(kind: DatasetKind) -> Vec<String> {
    let mut cols: Vec<String> = EGF_COLUMNS.iter().map(|s| s.to_string()).collect();
    match kind {
        DatasetKind::Egf => {}
        DatasetKind::Eglt | DatasetKind::EgltDiff => {
            cols.extend(EGLT_LEAD_COLUMNS.iter().map(|s| s.to_string()));
            // delta_t is not used when the devices are temporally aligned.
            cols.push("delta_v".to_string());
            cols.push("delta_s".to_string());
        }
        DatasetKind::Egls | DatasetKind::EglsRatio => {
            cols.extend(EGLS_LEAD_COLUMNS.iter().map(|s| s.to_string()));
            cols.push("delta_v".to_string());
            cols.push("delta_s".to_string());
            cols.push("delta_t".to_string());
        }
    }
    cols
}

/// Per-column and target min/max recorded by the scaler, with constant-column
/// flags. The inverse transform is exact up to float rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    /// (min, max) per feature column.
    pub columns: Vec<(f64, f64)>,
    pub target: (f64, f64),
    pub constant_columns: Vec<bool>,
    pub constant_target: bool,
    pub fit: ScaleFit,
}

impl ScaleParams {
    fn scale_value(min: f64, max: f64, x: f64) -> f64 {
        if max > min {
            (x - min) / (max - min)
        } else {
            0.0
        }
    }

    pub fn inverse_target(&self, scaled: &[f64]) -> Vec<f64> {
        let (min, max) = self.target;
        scaled
            .iter()
            .map(|&v| if max > min { v * (max - min) + min } else { min })
            .collect()
    }

    pub fn inverse_column(&self, column_idx: usize, scaled: &[f64]) -> Vec<f64> {
        let (min, max) = self.columns[column_idx];
        scaled
            .iter()
            .map(|&v| if max > min { v * (max - min) + min } else { min })
            .collect()
    }
}

/// Which rows the scaler fits on. `Full` replicates the scale-then-split
/// order; `Train` fits on the prospective training partition only, in which
/// case test rows may fall outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleFit {
    #[default]
    Full,
    Train,
}

/// A named column matrix with its target vector, ego timestamps, scaling
/// state and chronological flag. `x` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub name: DatasetKind,
    pub columns: Vec<String>,
    x: Vec<f64>,
    pub y: Vec<f64>,
    /// Ego timestamp per row.
    pub timestamps: Vec<f64>,
    pub scale: Option<ScaleParams>,
    pub chronological: bool,
}

impl FeatureDataset {
    pub fn new(
        name: DatasetKind,
        columns: Vec<String>,
        x: Vec<f64>,
        y: Vec<f64>,
        timestamps: Vec<f64>,
        chronological: bool,
    ) -> Self {
        assert_eq!(x.len(), y.len() * columns.len(), "matrix shape mismatch");
        assert_eq!(y.len(), timestamps.len());
        FeatureDataset {
            name,
            columns,
            x,
            y,
            timestamps,
            scale: None,
            chronological,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.x[i * w..(i + 1) * w]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.x
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn rows_to_matrix(rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().flatten().copied().collect()
    }
}

fn pair_value(pair: &AlignedPair, column: &str) -> Option<f64> {
    match column {
        "delta_t" => Some(pair.delta_t),
        "delta_s" => Some(pair.delta_s),
        "delta_v" => Some(pair.delta_v),
        _ => {
            if let Some(lead_col) = column.strip_prefix("lead_") {
                pair.lead.numeric_value(lead_col)
            } else {
                pair.ego.numeric_value(column)
            }
        }
    }
}

/// Ego-only dataset: the eight EGF KPI columns, target = ego datarate.
pub fn build_egf(ego: &[TraceSample]) -> Result<FeatureDataset, FeatureError> {
    let columns = base_columns(DatasetKind::Egf);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut timestamps = Vec::new();
    for s in ego {
        let values: Option<Vec<f64>> = columns.iter().map(|c| s.numeric_value(c)).collect();
        if let Some(v) = values {
            rows.push(v);
            y.push(s.datarate);
            timestamps.push(s.timestamp);
        }
    }
    if rows.is_empty() {
        return Err(FeatureError::EmptyDataset);
    }
    Ok(FeatureDataset::new(
        DatasetKind::Egf,
        columns,
        FeatureDataset::rows_to_matrix(&rows),
        y,
        timestamps,
        true,
    ))
}

fn build_from_pairs(
    kind: DatasetKind,
    pairs: &[AlignedPair],
) -> Result<FeatureDataset, FeatureError> {
    let columns = base_columns(kind);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut timestamps = Vec::new();
    for pair in pairs {
        let values: Option<Vec<f64>> = columns.iter().map(|c| pair_value(pair, c)).collect();
        if let Some(v) = values {
            rows.push(v);
            y.push(pair.ego.datarate);
            timestamps.push(pair.ego.timestamp);
        }
    }
    if rows.is_empty() {
        return Err(FeatureError::EmptyDataset);
    }
    Ok(FeatureDataset::new(
        kind,
        columns,
        FeatureDataset::rows_to_matrix(&rows),
        y,
        timestamps,
        true,
    ))
}

/// EGF columns plus temporally aligned lead features and `delta_v`,
/// `delta_s`. `delta_t` is excluded: the devices are aligned in time.
pub fn build_eglt(pairs: &[AlignedPair]) -> Result<FeatureDataset, FeatureError> {
    build_from_pairs(DatasetKind::Eglt, pairs)
}

/// EGF columns plus spatially aligned lead features and all three deltas.
/// Offset bins are concatenated in ego-timestamp order; geo-coordinates are
/// not features (`delta_s` replaces them).
pub fn build_egls(alignment: &SpatialAlignment) -> Result<FeatureDataset, FeatureError> {
    let mut tagged: Vec<(f64, usize, &AlignedPair)> = Vec::new();
    for (bin_idx, bin) in alignment.bins.iter().enumerate() {
        for pair in &bin.pairs {
            tagged.push((pair.ego.timestamp, bin_idx, pair));
        }
    }
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let ordered: Vec<AlignedPair> = tagged.into_iter().map(|(_, _, p)| p.clone()).collect();
    build_from_pairs(DatasetKind::Egls, &ordered)
}

/// Column pairs `(ego_idx, lead_idx, base_name)` present in a dataset.
fn paired_columns(d: &FeatureDataset) -> Vec<(usize, usize, String)> {
    let mut pairs = Vec::new();
    for (lead_idx, col) in d.columns.iter().enumerate() {
        if let Some(base) = col.strip_prefix("lead_") {
            if let Some(ego_idx) = d.column_index(base) {
                pairs.push((ego_idx, lead_idx, base.to_string()));
            }
        }
    }
    pairs
}

fn transform_paired(
    d: &FeatureDataset,
    name: DatasetKind,
    prefix: &str,
    combine: impl Fn(f64, f64) -> f64,
) -> Result<FeatureDataset, FeatureError> {
    let pairs = paired_columns(d);
    if pairs.is_empty() {
        return Err(FeatureError::NoPairedColumns);
    }
    let is_lead_of_pair: Vec<bool> = (0..d.n_cols())
        .map(|j| pairs.iter().any(|(_, lead, _)| *lead == j))
        .collect();
    let pair_for_ego = |j: usize| pairs.iter().find(|(ego, _, _)| *ego == j);

    let mut columns = Vec::new();
    let mut keep_plan: Vec<(usize, Option<usize>)> = Vec::new(); // (ego/source idx, lead idx)
    for j in 0..d.n_cols() {
        if is_lead_of_pair[j] {
            continue;
        }
        if let Some((ego_idx, lead_idx, base)) = pair_for_ego(j) {
            columns.push(format!("{prefix}{base}"));
            keep_plan.push((*ego_idx, Some(*lead_idx)));
        } else {
            columns.push(d.columns[j].clone());
            keep_plan.push((j, None));
        }
    }

    let mut x = Vec::with_capacity(d.n_rows() * columns.len());
    for i in 0..d.n_rows() {
        let row = d.row(i);
        for &(src, lead) in &keep_plan {
            match lead {
                Some(lead_idx) => x.push(combine(row[lead_idx], row[src])),
                None => x.push(row[src]),
            }
        }
    }
    Ok(FeatureDataset::new(
        name,
        columns,
        x,
        d.y.clone(),
        d.timestamps.clone(),
        d.chronological,
    ))
}

/// Replace each `(lead_X, X)` pair by a single `diff_X = lead - ego` column;
/// unpaired columns pass through unchanged.
pub fn diff_transform(d: &FeatureDataset) -> Result<FeatureDataset, FeatureError> {
    if paired_columns(d).is_empty() {
        return Err(FeatureError::NoPairedColumns);
    }
    let name = match d.name {
        DatasetKind::Eglt => DatasetKind::EgltDiff,
        other => return Err(FeatureError::UnsupportedTransform(other.label().into())),
    };
    transform_paired(d, name, "diff_", |lead, ego| lead - ego)
}

/// Replace each `(lead_X, X)` pair by `ratio_X = lead / ego`, guarding the
/// denominator with [`RATIO_EPSILON`] (sign-preserving, zero treated as
/// positive) when `|ego|` is below the guard.
pub fn ratio_transform(d: &FeatureDataset) -> Result<FeatureDataset, FeatureError> {
    if paired_columns(d).is_empty() {
        return Err(FeatureError::NoPairedColumns);
    }
    let name = match d.name {
        DatasetKind::Egls => DatasetKind::EglsRatio,
        other => return Err(FeatureError::UnsupportedTransform(other.label().into())),
    };
    transform_paired(d, name, "ratio_", |lead, ego| {
        let denom = if ego.abs() < RATIO_EPSILON {
            if ego < 0.0 {
                ego - RATIO_EPSILON
            } else {
                ego + RATIO_EPSILON
            }
        } else {
            ego
        };
        lead / denom
    })
}

/// What [`prune_collinear`] kept and why it dropped the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneReport {
    pub retained: Vec<String>,
    /// (dropped column, retained column it correlated with, |r|).
    pub dropped: Vec<(String, String, f64)>,
}

/// Greedy collinearity pruning: walk columns in declared order and drop any
/// later column whose |Pearson| with an already-retained column exceeds the
/// threshold. Undefined correlations (constant columns) never trigger a drop.
pub fn prune_collinear(d: &FeatureDataset, threshold: f64) -> (FeatureDataset, PruneReport) {
    let mut retained: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    let cols: Vec<Vec<f64>> = (0..d.n_cols()).map(|j| d.column(j)).collect();
    'outer: for j in 0..d.n_cols() {
        for &kept in &retained {
            if let Ok(r) = stats::pearson(&cols[kept], &cols[j]) {
                if r.abs() > threshold {
                    dropped.push((d.columns[j].clone(), d.columns[kept].clone(), r.abs()));
                    continue 'outer;
                }
            }
        }
        retained.push(j);
    }
    let columns: Vec<String> = retained.iter().map(|&j| d.columns[j].clone()).collect();
    let mut x = Vec::with_capacity(d.n_rows() * columns.len());
    for i in 0..d.n_rows() {
        let row = d.row(i);
        for &j in &retained {
            x.push(row[j]);
        }
    }
    let pruned = FeatureDataset::new(
        d.name,
        columns.clone(),
        x,
        d.y.clone(),
        d.timestamps.clone(),
        d.chronological,
    );
    (
        pruned,
        PruneReport {
            retained: columns,
            dropped,
        },
    )
}

/// Min-max scale every feature column and the target to `[0, 1]`.
///
/// `ScaleFit::Full` fits on all rows (scale before split); `ScaleFit::Train`
/// fits on the first `floor(train_ratio * n)` rows only. Constant columns map
/// to all zeros and are flagged.
pub fn minmax_scale(
    d: &FeatureDataset,
    fit: ScaleFit,
    train_ratio: f64,
) -> Result<FeatureDataset, FeatureError> {
    let n = d.n_rows();
    if n == 0 {
        return Err(FeatureError::EmptyDataset);
    }
    let fit_rows = match fit {
        ScaleFit::Full => n,
        ScaleFit::Train => ((train_ratio * n as f64).floor() as usize).clamp(1, n),
    };
    let mut col_ranges = Vec::with_capacity(d.n_cols());
    for j in 0..d.n_cols() {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for i in 0..fit_rows {
            let v = d.row(i)[j];
            min = min.min(v);
            max = max.max(v);
        }
        col_ranges.push((min, max));
    }
    let (mut ty_min, mut ty_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &d.y[..fit_rows] {
        ty_min = ty_min.min(v);
        ty_max = ty_max.max(v);
    }
    let params = ScaleParams {
        constant_columns: col_ranges.iter().map(|(lo, hi)| hi <= lo).collect(),
        constant_target: ty_max <= ty_min,
        columns: col_ranges.clone(),
        target: (ty_min, ty_max),
        fit,
    };
    let mut x = Vec::with_capacity(d.n_rows() * d.n_cols());
    for i in 0..n {
        let row = d.row(i);
        for (j, &(min, max)) in col_ranges.iter().enumerate() {
            x.push(ScaleParams::scale_value(min, max, row[j]));
        }
    }
    let y: Vec<f64> = d
        .y
        .iter()
        .map(|&v| ScaleParams::scale_value(ty_min, ty_max, v))
        .collect();
    let mut out = FeatureDataset::new(
        d.name,
        d.columns.clone(),
        x,
        y,
        d.timestamps.clone(),
        d.chronological,
    );
    out.scale = Some(params);
    Ok(out)
}

/// Chronological train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub split_index: usize,
}

/// Split at `floor(ratio * n)` preserving row order; no shuffling.
pub fn temporal_split(d: &FeatureDataset, ratio: f64) -> Result<SplitDataset, FeatureError> {
    if !d.chronological {
        return Err(FeatureError::NotChronological);
    }
    let n = d.n_rows();
    if n < 5 {
        return Err(FeatureError::TooFewRows { n, min: 5 });
    }
    let split_index = (ratio * n as f64).floor() as usize;
    let take = |lo: usize, hi: usize| -> FeatureDataset {
        let w = d.n_cols();
        let mut part = FeatureDataset::new(
            d.name,
            d.columns.clone(),
            d.matrix()[lo * w..hi * w].to_vec(),
            d.y[lo..hi].to_vec(),
            d.timestamps[lo..hi].to_vec(),
            true,
        );
        part.scale = d.scale.clone();
        part
    };
    Ok(SplitDataset {
        train: take(0, split_index),
        test: take(split_index, n),
        split_index,
    })
}

/// Lookback windows over one partition: window `i` holds rows
/// `[i, i + lookback)` and its target is `y[i + lookback]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub n_windows: usize,
    pub lookback: usize,
    pub n_features: usize,
    /// Row-major `n_windows x lookback x n_features`.
    pub data: Vec<f64>,
    pub targets: Vec<f64>,
}

impl WindowSet {
    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.lookback * self.n_features;
        &self.data[i * w..(i + 1) * w]
    }
}

/// Build windows within one split partition (never across partitions, so no
/// train-to-test leakage through window context). `lookback = 0` degenerates
/// to one empty window per row.
pub fn windowize(d: &FeatureDataset, lookback: usize) -> Result<WindowSet, FeatureError> {
    let n = d.n_rows();
    if n <= lookback {
        return Err(FeatureError::PartitionTooShort { n, lookback });
    }
    let n_windows = n - lookback;
    let n_features = d.n_cols();
    let mut data = Vec::with_capacity(n_windows * lookback * n_features);
    let mut targets = Vec::with_capacity(n_windows);
    for i in 0..n_windows {
        data.extend_from_slice(&d.matrix()[i * n_features..(i + lookback) * n_features]);
        targets.push(d.y[i + lookback]);
    }
    Ok(WindowSet {
        n_windows,
        lookback,
        n_features,
        data,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{BinAlignment, OffsetBin};
    use crate::trace_store::{Direction, KpiValues};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn full_sample(ts: f64, datarate: f64, seedish: f64) -> TraceSample {
        TraceSample {
            timestamp: ts,
            device_id: "pc4".into(),
            measurement_id: 0,
            operator_id: 1,
            direction: Direction::Downlink,
            target_datarate: 350_000.0,
            latitude: 52.52,
            longitude: 13.405,
            speed: 10.0,
            datarate,
            kpis: KpiValues {
                pcell_snr_1: Some(10.0 + seedish),
                pcell_snr_2: Some(9.0 - seedish),
                pcell_rsrp_max: Some(-95.0 + seedish),
                pcell_rsrq_max: Some(-11.0),
                pcell_rssi_max: Some(-65.0 + 0.5 * seedish),
                pcell_downlink_tb_size: Some(20_000.0 + 100.0 * seedish),
                pcell_downlink_num_rbs: Some(150.0),
                pcell_downlink_average_mcs: Some(15.0),
                pcell_downlink_tx_power: Some(-10.0),
            },
        }
    }

    fn pair_at(ts: f64, lag: f64) -> AlignedPair {
        AlignedPair {
            ego: full_sample(ts, 1.0e7 + ts * 100.0, ts * 0.1),
            lead: full_sample(ts - lag, 1.2e7, ts * 0.05),
            delta_t: lag,
            delta_s: 5.0,
            delta_v: -0.5,
        }
    }

    #[test]
    fn schema_matches_declared_column_sets() {
        assert_eq!(base_columns(DatasetKind::Egf), EGF_COLUMNS.to_vec());
        let eglt = base_columns(DatasetKind::Eglt);
        assert_eq!(
            eglt,
            [
                "PCell_SNR_1",
                "PCell_SNR_2",
                "PCell_RSRP_max",
                "PCell_RSRQ_max",
                "PCell_RSSI_max",
                "PCell_Downlink_TB_Size",
                "PCell_Downlink_Num_RBs",
                "PCell_Downlink_Average_MCS",
                "lead_datarate",
                "lead_PCell_Downlink_TB_Size",
                "lead_PCell_Downlink_Tx_Power",
                "lead_PCell_Downlink_Num_RBs",
                "lead_PCell_Downlink_Average_MCS",
                "lead_PCell_RSSI_max",
                "delta_v",
                "delta_s",
            ]
        );
        let egls = base_columns(DatasetKind::Egls);
        assert_eq!(
            egls,
            [
                "PCell_SNR_1",
                "PCell_SNR_2",
                "PCell_RSRP_max",
                "PCell_RSRQ_max",
                "PCell_RSSI_max",
                "PCell_Downlink_TB_Size",
                "PCell_Downlink_Num_RBs",
                "PCell_Downlink_Average_MCS",
                "lead_PCell_SNR_1",
                "lead_PCell_SNR_2",
                "lead_PCell_RSRP_max",
                "lead_PCell_RSRQ_max",
                "lead_PCell_RSSI_max",
                "lead_PCell_Downlink_Num_RBs",
                "lead_PCell_Downlink_Average_MCS",
                "delta_v",
                "delta_s",
                "delta_t",
            ]
        );
        // Transform kinds share their base's columns; geo-coordinates are
        // never features.
        assert_eq!(base_columns(DatasetKind::EgltDiff), eglt);
        assert_eq!(base_columns(DatasetKind::EglsRatio), egls);
        for kind in DatasetKind::ALL {
            assert!(!base_columns(kind)
                .iter()
                .any(|c| c.contains("latitude") || c.contains("longitude")));
        }
    }

    #[test]
    fn egf_drops_null_rows() {
        let mut samples: Vec<TraceSample> =
            (0..10).map(|t| full_sample(t as f64, 1e7, 0.0)).collect();
        samples[3].kpis.pcell_rsrp_max = None;
        let d = build_egf(&samples).unwrap();
        assert_eq!(d.n_rows(), 9);
        assert_eq!(d.n_cols(), 8);
        assert!(!d.timestamps.contains(&3.0));
    }

    #[test]
    fn egf_empty_after_null_drop() {
        let mut s = full_sample(0.0, 1e7, 0.0);
        s.kpis.pcell_snr_1 = None;
        assert_eq!(build_egf(&[s]), Err(FeatureError::EmptyDataset));
    }

    #[test]
    fn eglt_has_sixteen_columns() {
        let pairs: Vec<AlignedPair> = (0..20).map(|t| pair_at(t as f64, 0.0)).collect();
        let d = build_eglt(&pairs).unwrap();
        assert_eq!(d.n_cols(), 8 + 6 + 2);
        assert_eq!(d.n_rows(), 20);
        let lead_dr = d.column(d.column_index("lead_datarate").unwrap());
        assert!(lead_dr.iter().all(|&v| v == 1.2e7));
    }

    #[test]
    fn self_pair_has_zero_deltas() {
        let s = full_sample(5.0, 1e7, 0.3);
        let pair = AlignedPair {
            ego: s.clone(),
            lead: s,
            delta_t: 0.0,
            delta_s: 0.0,
            delta_v: 0.0,
        };
        let d = build_eglt(&[pair]).unwrap();
        assert_eq!(d.row(0)[d.column_index("delta_s").unwrap()], 0.0);
        assert_eq!(d.row(0)[d.column_index("delta_v").unwrap()], 0.0);
    }

    fn egls_fixture() -> SpatialAlignment {
        SpatialAlignment {
            bins: vec![
                BinAlignment {
                    bin: OffsetBin::new(0.0, 1.0),
                    pairs: (0..10).map(|t| pair_at(t as f64 * 2.0, 30.0)).collect(),
                },
                BinAlignment {
                    bin: OffsetBin::new(1.0, 2.0),
                    pairs: (0..5).map(|t| pair_at(t as f64 * 2.0 + 1.0, 90.0)).collect(),
                },
            ],
        }
    }

    #[test]
    fn egls_concatenates_bins_in_time_order() {
        let d = build_egls(&egls_fixture()).unwrap();
        assert_eq!(d.n_rows(), 15);
        assert_eq!(d.n_cols(), 18);
        for w in d.timestamps.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let dt = d.column(d.column_index("delta_t").unwrap());
        assert!(dt.iter().all(|&v| v == 30.0 || v == 90.0));
    }

    #[test]
    fn egls_single_pair_keeps_bin_gap() {
        let alignment = SpatialAlignment {
            bins: vec![BinAlignment {
                bin: OffsetBin::new(1.0, 2.0),
                pairs: vec![pair_at(100.0, 75.0)],
            }],
        };
        let d = build_egls(&alignment).unwrap();
        assert_eq!(d.n_rows(), 1);
        let dt = d.row(0)[d.column_index("delta_t").unwrap()];
        assert!((60.0..120.0).contains(&dt));
    }

    #[test]
    fn diff_transform_collapses_pairs() {
        let pairs: Vec<AlignedPair> = (0..8).map(|t| pair_at(t as f64, 0.0)).collect();
        let d = build_eglt(&pairs).unwrap();
        let diff = diff_transform(&d).unwrap();
        // Four KPI pairs collapse: TB_Size, Num_RBs, Average_MCS, RSSI_max.
        assert_eq!(diff.n_cols(), 16 - 4);
        assert_eq!(diff.name, DatasetKind::EgltDiff);
        let j = diff.column_index("diff_PCell_RSSI_max").unwrap();
        let ego_j = d.column_index("PCell_RSSI_max").unwrap();
        let lead_j = d.column_index("lead_PCell_RSSI_max").unwrap();
        for i in 0..d.n_rows() {
            let expect = d.row(i)[lead_j] - d.row(i)[ego_j];
            assert!((diff.row(i)[j] - expect).abs() < 1e-12);
        }
        // Unpaired columns pass through.
        assert!(diff.column_index("lead_datarate").is_some());
        assert!(diff.column_index("delta_s").is_some());
        assert!(diff.column_index("PCell_SNR_1").is_some());
    }

    #[test]
    fn diff_values_match_hand_case() {
        // lead RSSI -60, ego RSSI -70 → diff = 10.
        let mut pair = pair_at(0.0, 0.0);
        pair.ego.kpis.pcell_rssi_max = Some(-70.0);
        pair.lead.kpis.pcell_rssi_max = Some(-60.0);
        let d = build_eglt(&[pair]).unwrap();
        let diff = diff_transform(&d).unwrap();
        let j = diff.column_index("diff_PCell_RSSI_max").unwrap();
        assert_eq!(diff.row(0)[j], 10.0);
    }

    #[test]
    fn diff_of_equal_sides_is_zero_and_reconstructs() {
        let pairs: Vec<AlignedPair> = (0..6)
            .map(|t| {
                let s = full_sample(t as f64, 1e7, t as f64 * 0.2);
                AlignedPair {
                    ego: s.clone(),
                    lead: s,
                    delta_t: 0.0,
                    delta_s: 0.0,
                    delta_v: 0.0,
                }
            })
            .collect();
        let d = build_eglt(&pairs).unwrap();
        let diff = diff_transform(&d).unwrap();
        for (ego_idx, lead_idx, base) in super::paired_columns(&d) {
            let j = diff.column_index(&format!("diff_{base}")).unwrap();
            for i in 0..d.n_rows() {
                assert_eq!(diff.row(i)[j], 0.0);
                // lead = diff + ego, element-wise.
                let rebuilt = diff.row(i)[j] + d.row(i)[ego_idx];
                assert!((rebuilt - d.row(i)[lead_idx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diff_requires_pairs_and_canonical_kind() {
        let samples: Vec<TraceSample> = (0..5).map(|t| full_sample(t as f64, 1e7, 0.1)).collect();
        let egf = build_egf(&samples).unwrap();
        assert_eq!(diff_transform(&egf), Err(FeatureError::NoPairedColumns));
        let pairs: Vec<AlignedPair> = (0..5).map(|t| pair_at(t as f64, 30.0)).collect();
        let egls = build_egls(&SpatialAlignment {
            bins: vec![BinAlignment {
                bin: OffsetBin::new(0.0, 1.0),
                pairs,
            }],
        })
        .unwrap();
        assert!(matches!(
            diff_transform(&egls),
            Err(FeatureError::UnsupportedTransform(_))
        ));
    }

    #[test]
    fn ratio_transform_values_and_guard() {
        let mut pairs: Vec<AlignedPair> = (0..4).map(|t| pair_at(t as f64, 30.0)).collect();
        // lead 2, ego 1 → 2.0; ego 0, lead 5 → 5 / epsilon.
        pairs[0].ego.kpis.pcell_snr_1 = Some(1.0);
        pairs[0].lead.kpis.pcell_snr_1 = Some(2.0);
        pairs[1].ego.kpis.pcell_snr_1 = Some(0.0);
        pairs[1].lead.kpis.pcell_snr_1 = Some(5.0);
        let alignment = SpatialAlignment {
            bins: vec![BinAlignment {
                bin: OffsetBin::new(0.0, 1.0),
                pairs,
            }],
        };
        let d = build_egls(&alignment).unwrap();
        let ratio = ratio_transform(&d).unwrap();
        assert_eq!(ratio.name, DatasetKind::EglsRatio);
        assert_eq!(ratio.n_cols(), 18 - 7);
        let j = ratio.column_index("ratio_PCell_SNR_1").unwrap();
        assert!((ratio.row(0)[j] - 2.0).abs() < 1e-12);
        let guarded = ratio.row(1)[j];
        assert!(guarded.is_finite());
        assert!((guarded - 5.0 / RATIO_EPSILON).abs() / (5.0 / RATIO_EPSILON) < 1e-9);
    }

    #[test]
    fn ratio_of_equal_sides_is_one() {
        let s = full_sample(1.0, 1e7, 0.4);
        let pair = AlignedPair {
            ego: s.clone(),
            lead: s,
            delta_t: 70.0,
            delta_s: 3.0,
            delta_v: 0.0,
        };
        let alignment = SpatialAlignment {
            bins: vec![BinAlignment {
                bin: OffsetBin::new(1.0, 2.0),
                pairs: vec![pair],
            }],
        };
        let d = build_egls(&alignment).unwrap();
        let ratio = ratio_transform(&d).unwrap();
        for base in ["PCell_SNR_1", "PCell_RSRP_max", "PCell_RSSI_max"] {
            let j = ratio.column_index(&format!("ratio_{base}")).unwrap();
            assert!((ratio.row(0)[j] - 1.0).abs() < 1e-12);
        }
    }

    fn toy_dataset(cols: Vec<(&str, Vec<f64>)>) -> FeatureDataset {
        let n = cols[0].1.len();
        let names: Vec<String> = cols.iter().map(|(n, _)| n.to_string()).collect();
        let mut x = Vec::new();
        for i in 0..n {
            for (_, v) in &cols {
                x.push(v[i]);
            }
        }
        FeatureDataset::new(
            DatasetKind::Egf,
            names,
            x,
            (0..n).map(|i| i as f64).collect(),
            (0..n).map(|i| i as f64).collect(),
            true,
        )
    }

    #[test]
    fn prune_drops_identical_column() {
        let d = toy_dataset(vec![
            ("a", vec![1.0, 2.0, 3.0, 4.0]),
            ("b", vec![1.0, 2.0, 3.0, 4.0]),
        ]);
        let (pruned, report) = prune_collinear(&d, 0.7);
        assert_eq!(pruned.columns, vec!["a".to_string()]);
        assert_eq!(report.dropped.len(), 1);
        assert_eq!(report.dropped[0].0, "b");
    }

    #[test]
    fn prune_keeps_independent_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = stats::pearson(&a, &b).unwrap();
        assert!(r.abs() < 0.7, "fixture requires independent columns");
        let d = toy_dataset(vec![("a", a), ("b", b)]);
        let (pruned, _) = prune_collinear(&d, 0.7);
        assert_eq!(pruned.n_cols(), 2);
    }

    #[test]
    fn prune_constructed_collinearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-1e-4..1e-4)).collect();
        let c: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = toy_dataset(vec![("a", a), ("b", b), ("c", c)]);
        let (pruned, _) = prune_collinear(&d, 0.7);
        assert_eq!(pruned.columns, vec!["a".to_string(), "c".to_string()]);
    }

    #[test]
    fn prune_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let c: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = toy_dataset(vec![("a", a), ("b", b), ("c", c)]);
        let (once, _) = prune_collinear(&d, 0.7);
        let (twice, _) = prune_collinear(&once, 0.7);
        assert_eq!(once, twice);
    }

    #[test]
    fn scale_endpoints_and_midpoint() {
        let d = toy_dataset(vec![("a", vec![2.0, 4.0, 6.0])]);
        let scaled = minmax_scale(&d, ScaleFit::Full, 0.8).unwrap();
        assert_eq!(scaled.column(0), vec![0.0, 0.5, 1.0]);
        // Target 0..2 scales to 0, 0.5, 1 as well.
        assert_eq!(scaled.y, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn scale_constant_column_flags() {
        let d = toy_dataset(vec![("a", vec![5.0, 5.0, 5.0]), ("b", vec![0.0, 1.0, 2.0])]);
        let scaled = minmax_scale(&d, ScaleFit::Full, 0.8).unwrap();
        assert_eq!(scaled.column(0), vec![0.0, 0.0, 0.0]);
        let params = scaled.scale.as_ref().unwrap();
        assert_eq!(params.constant_columns, vec![true, false]);
    }

    #[test]
    fn scale_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let vals: Vec<f64> = (0..50).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let d = toy_dataset(vec![("a", vals.clone())]);
        let scaled = minmax_scale(&d, ScaleFit::Full, 0.8).unwrap();
        let params = scaled.scale.as_ref().unwrap();
        let back = params.inverse_column(0, &scaled.column(0));
        for (orig, rt) in vals.iter().zip(&back) {
            assert!((orig - rt).abs() <= 1e-12 * orig.abs().max(1.0));
        }
        let y_back = params.inverse_target(&scaled.y);
        for (orig, rt) in d.y.iter().zip(&y_back) {
            assert!((orig - rt).abs() <= 1e-12 * orig.abs().max(1.0));
        }
    }

    #[test]
    fn scale_full_fit_bounds_all_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vals: Vec<f64> = (0..200).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let d = toy_dataset(vec![("a", vals)]);
        let scaled = minmax_scale(&d, ScaleFit::Full, 0.8).unwrap();
        assert!(scaled.matrix().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(scaled.y.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn scale_train_fit_uses_train_rows_only() {
        let d = toy_dataset(vec![("a", vec![0.0, 1.0, 2.0, 3.0, 100.0])]);
        let scaled = minmax_scale(&d, ScaleFit::Train, 0.8).unwrap();
        // Fit on first 4 rows: max is 3, so the last row exceeds 1.
        assert!(scaled.column(0)[4] > 1.0);
        assert_eq!(scaled.scale.as_ref().unwrap().columns[0], (0.0, 3.0));
    }

    #[test]
    fn split_arithmetic_and_order() {
        let n = 9699;
        let d = toy_dataset(vec![("a", (0..n).map(|i| i as f64).collect())]);
        let split = temporal_split(&d, 0.8).unwrap();
        assert_eq!(split.split_index, 7759);
        assert_eq!(split.train.n_rows(), 7759);
        assert_eq!(split.test.n_rows(), 1940);
        assert!(split.train.timestamps.last().unwrap() < split.test.timestamps.first().unwrap());

        let d10 = toy_dataset(vec![("a", (0..10).map(|i| i as f64).collect())]);
        let s10 = temporal_split(&d10, 0.8).unwrap();
        assert_eq!((s10.train.n_rows(), s10.test.n_rows()), (8, 2));
    }

    #[test]
    fn split_partitions_rows_exactly() {
        let d = toy_dataset(vec![("a", (0..37).map(|i| (i as f64).sin()).collect())]);
        let split = temporal_split(&d, 0.8).unwrap();
        let mut rebuilt = split.train.matrix().to_vec();
        rebuilt.extend_from_slice(split.test.matrix());
        assert_eq!(rebuilt, d.matrix());
        let mut y = split.train.y.clone();
        y.extend_from_slice(&split.test.y);
        assert_eq!(y, d.y);
    }

    #[test]
    fn split_too_few_rows() {
        let d = toy_dataset(vec![("a", vec![1.0, 2.0, 3.0])]);
        assert!(matches!(
            temporal_split(&d, 0.8),
            Err(FeatureError::TooFewRows { .. })
        ));
    }

    #[test]
    fn window_counts_and_contents() {
        let n = 100;
        let d = toy_dataset(vec![
            ("a", (0..n).map(|i| i as f64).collect()),
            ("b", (0..n).map(|i| (i * 2) as f64).collect()),
        ]);
        let w = windowize(&d, 60).unwrap();
        assert_eq!(w.n_windows, 40);
        assert_eq!(w.lookback, 60);
        assert_eq!(w.n_features, 2);
        // Slice-copy oracle: window 5 equals rows 5..65 of the matrix.
        assert_eq!(w.window(5), &d.matrix()[5 * 2..65 * 2]);
        assert_eq!(w.targets[5], d.y[65]);
    }

    #[test]
    fn window_degenerate_lookback() {
        let d = toy_dataset(vec![("a", (0..7).map(|i| i as f64).collect())]);
        let w = windowize(&d, 0).unwrap();
        assert_eq!(w.n_windows, 7);
        assert_eq!(w.targets, d.y);
        assert!(w.data.is_empty());
    }

    #[test]
    fn window_partition_too_short() {
        let d = toy_dataset(vec![("a", (0..10).map(|i| i as f64).collect())]);
        assert!(matches!(
            windowize(&d, 10),
            Err(FeatureError::PartitionTooShort { .. })
        ));
    }
}
