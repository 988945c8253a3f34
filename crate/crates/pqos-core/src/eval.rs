//! Error metrics, the multi-run experiment grid and report emission.
//!
//! Metrics are MAE, RMSE and a modified SMAPE whose denominator is floored by
//! a small epsilon (default `exp(-8)`) to survive the near-zero values that
//! min-max scaling produces. The experiment grid trains every configured
//! model family on every dataset for `n_runs` seeded runs, aggregates
//! mean/std per cell and reports improvement percentages against the EGF
//! baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featureset::{windowize, DatasetKind, SplitDataset};
use crate::models::{
    train_conv, train_gbt, train_recurrent, ConvNetConfig, GbtConfig, ModelKind, RecurrentConfig,
};
use crate::plot;

/// Default SMAPE denominator floor, read literally as e^-8.
pub fn default_smape_eps() -> f64 {
    (-8.0f64).exp()
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("baseline must be > 0")]
    ZeroBaseline,
    #[error("epsilon must be > 0")]
    BadEpsilon,
}

/// Mean absolute error.
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, f)| (f - a).abs())
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Root mean squared error.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, f)| (f - a) * (f - a))
        .sum();
    Ok((sum / actual.len() as f64).sqrt())
}

/// Modified symmetric mean absolute percentage error:
/// `(1/n) * sum |F - A| / max(eps, (|A| + |F|) / 2)`.
pub fn smape(actual: &[f64], predicted: &[f64], eps: f64) -> Result<f64, MetricsError> {
    check_lengths(actual, predicted)?;
    if eps <= 0.0 {
        return Err(MetricsError::BadEpsilon);
    }
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, f)| (f - a).abs() / ((a.abs() + f.abs()) / 2.0).max(eps))
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Improvement of `candidate` over `baseline` in percent:
/// `100 * (baseline - candidate) / baseline`.
pub fn improvement(baseline: f64, candidate: f64) -> Result<f64, MetricsError> {
    if baseline <= 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(100.0 * (baseline - candidate) / baseline)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Which space the metrics are computed in. `Scaled` matches the min-max
/// scaled target; `Unscaled` inverse-transforms truth and predictions first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSpace {
    #[default]
    Scaled,
    Unscaled,
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub gbt: GbtConfig,
    pub conv: ConvNetConfig,
    pub recurrent: RecurrentConfig,
    pub n_runs: usize,
    pub base_seed: u64,
    pub smape_eps: f64,
    pub target_space: TargetSpace,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gbt: GbtConfig::default(),
            conv: ConvNetConfig::default(),
            recurrent: RecurrentConfig::default(),
            n_runs: 50,
            base_seed: 0,
            smape_eps: default_smape_eps(),
            target_space: TargetSpace::Scaled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dataset: DatasetKind,
    pub model: ModelKind,
    pub run_index: usize,
    pub seed: u64,
    pub mae: f64,
    pub smape: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub dataset: DatasetKind,
    pub model: ModelKind,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub smape_mean: f64,
    pub smape_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub dataset: DatasetKind,
    pub model: ModelKind,
    pub metric: String,
    pub baseline: f64,
    pub candidate: f64,
    /// `100 * (baseline - candidate) / baseline`, rounded to 2 decimals at
    /// report time.
    pub percent: f64,
}

/// Truth and first-run predictions for one grid cell, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub dataset: DatasetKind,
    pub model: ModelKind,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunMetrics>,
    pub cells: Vec<CellAggregate>,
    pub improvements: Vec<Improvement>,
    pub plots: Vec<PlotSeries>,
    /// (dataset, model, run, error) for excluded runs.
    pub failures: Vec<(DatasetKind, ModelKind, usize, String)>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no datasets supplied")]
    NoDatasets,
    #[error("all {n_runs} runs failed for {dataset} x {model}: {first_error}")]
    CellFailed {
        dataset: DatasetKind,
        model: ModelKind,
        n_runs: usize,
        first_error: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct RunOutcome {
    metrics: Option<RunMetrics>,
    plot: Option<PlotSeries>,
    error: Option<String>,
}

/// Execute the dataset x model grid for `n_runs` seeded runs each.
///
/// Per-run seed is `base_seed + run_index`. Individual run failures are
/// recorded and excluded from aggregates; a cell where every run fails aborts
/// the experiment. Runs execute in parallel and are collected in
/// deterministic (dataset, model, run) order.
pub fn run_experiment(
    datasets: &[(DatasetKind, SplitDataset)],
    models: &[ModelKind],
    cfg: &ExperimentConfig,
) -> Result<MetricsReport, EvalError> {
    if datasets.is_empty() || models.is_empty() {
        return Err(EvalError::NoDatasets);
    }
    // Window tensors per (dataset, lookback), built once.
    let mut window_cache = BTreeMap::new();
    for (kind, split) in datasets {
        for model in models {
            let lookback = match model {
                ModelKind::Gbt => continue,
                ModelKind::Conv => cfg.conv.lookback,
                ModelKind::Recurrent => cfg.recurrent.lookback,
            };
            window_cache.entry((*kind, lookback)).or_insert_with(|| {
                let train = windowize(&split.train, lookback);
                let test = windowize(&split.test, lookback);
                match (train, test) {
                    (Ok(tr), Ok(te)) => Ok((tr, te)),
                    (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
                }
            });
        }
    }

    let tasks: Vec<(usize, usize, usize)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(d, _)| {
            models.iter().enumerate().flat_map(move |(m, _)| {
                (0..cfg.n_runs).map(move |r| (d, m, r))
            })
        })
        .collect();

    let outcomes: Vec<RunOutcome> = tasks
        .par_iter()
        .map(|&(d, m, r)| {
            let (kind, split) = &datasets[d];
            let model_kind = models[m];
            let seed = cfg.base_seed + r as u64;
            let result = run_one(kind, split, model_kind, r, seed, cfg, &window_cache);
            match result {
                Ok((metrics, plot)) => RunOutcome {
                    metrics: Some(metrics),
                    plot,
                    error: None,
                },
                Err(err) => RunOutcome {
                    metrics: None,
                    plot: None,
                    error: Some(err),
                },
            }
        })
        .collect();

    let mut runs = Vec::new();
    let mut plots = Vec::new();
    let mut failures = Vec::new();
    for (&(d, m, r), outcome) in tasks.iter().zip(outcomes) {
        let (kind, _) = &datasets[d];
        let model_kind = models[m];
        if let Some(metrics) = outcome.metrics {
            runs.push(metrics);
        }
        if let Some(plot) = outcome.plot {
            plots.push(plot);
        }
        if let Some(error) = outcome.error {
            failures.push((*kind, model_kind, r, error));
        }
    }

    // Aggregate per cell; abort when a whole cell failed.
    let mut cells = Vec::new();
    for (kind, _) in datasets {
        for model in models {
            let cell_runs: Vec<&RunMetrics> = runs
                .iter()
                .filter(|r| r.dataset == *kind && r.model == *model)
                .collect();
            let n_failed = failures
                .iter()
                .filter(|(d, m, _, _)| d == kind && m == model)
                .count();
            if cell_runs.is_empty() {
                let first_error = failures
                    .iter()
                    .find(|(d, m, _, _)| d == kind && m == model)
                    .map(|(_, _, _, e)| e.clone())
                    .unwrap_or_else(|| "unknown".into());
                return Err(EvalError::CellFailed {
                    dataset: *kind,
                    model: *model,
                    n_runs: cfg.n_runs,
                    first_error,
                });
            }
            let stats = |f: fn(&RunMetrics) -> f64| -> (f64, f64) {
                let values: Vec<f64> = cell_runs.iter().map(|r| f(r)).collect();
                mean_std(&values)
            };
            let (mae_mean, mae_std) = stats(|r| r.mae);
            let (smape_mean, smape_std) = stats(|r| r.smape);
            let (rmse_mean, rmse_std) = stats(|r| r.rmse);
            cells.push(CellAggregate {
                dataset: *kind,
                model: *model,
                n_ok: cell_runs.len(),
                n_failed,
                mae_mean,
                mae_std,
                smape_mean,
                smape_std,
                rmse_mean,
                rmse_std,
            });
        }
    }

    // Improvements against the EGF baseline, per model and metric.
    let mut improvements = Vec::new();
    for model in models {
        let Some(baseline) = cells
            .iter()
            .find(|c| c.dataset == DatasetKind::Egf && c.model == *model)
        else {
            continue;
        };
        for cell in cells.iter().filter(|c| c.model == *model) {
            if cell.dataset == DatasetKind::Egf {
                continue;
            }
            for (metric, base, cand) in [
                ("mae", baseline.mae_mean, cell.mae_mean),
                ("smape", baseline.smape_mean, cell.smape_mean),
                ("rmse", baseline.rmse_mean, cell.rmse_mean),
            ] {
                if base > 0.0 {
                    improvements.push(Improvement {
                        dataset: cell.dataset,
                        model: *model,
                        metric: metric.to_string(),
                        baseline: base,
                        candidate: cand,
                        percent: improvement(base, cand).expect("baseline checked > 0"),
                    });
                }
            }
        }
    }

    Ok(MetricsReport {
        config: cfg.clone(),
        runs,
        cells,
        improvements,
        plots,
        failures,
    })
}

type WindowCache = BTreeMap<(DatasetKind, usize), Result<(crate::featureset::WindowSet, crate::featureset::WindowSet), String>>;

fn run_one(
    kind: &DatasetKind,
    split: &SplitDataset,
    model_kind: ModelKind,
    run_index: usize,
    seed: u64,
    cfg: &ExperimentConfig,
    windows: &WindowCache,
) -> Result<(RunMetrics, Option<PlotSeries>), String> {
    let (truth, predicted) = match model_kind {
        ModelKind::Gbt => {
            let mut gbt_cfg = cfg.gbt.clone();
            gbt_cfg.seed = seed;
            let model = train_gbt(&split.train, &gbt_cfg).map_err(|e| e.to_string())?;
            let preds = model
                .predict_dataset(&split.test)
                .map_err(|e| e.to_string())?;
            (split.test.y.clone(), preds)
        }
        ModelKind::Conv => {
            let (train_w, test_w) = windows
                .get(&(*kind, cfg.conv.lookback))
                .ok_or("missing window cache")?
                .as_ref()
                .map_err(|e| e.clone())?;
            let mut conv_cfg = cfg.conv.clone();
            conv_cfg.seed = seed;
            let model = train_conv(train_w, &conv_cfg).map_err(|e| e.to_string())?;
            let preds = model.predict(test_w).map_err(|e| e.to_string())?;
            (test_w.targets.clone(), preds)
        }
        ModelKind::Recurrent => {
            let (train_w, test_w) = windows
                .get(&(*kind, cfg.recurrent.lookback))
                .ok_or("missing window cache")?
                .as_ref()
                .map_err(|e| e.clone())?;
            let mut rec_cfg = cfg.recurrent.clone();
            rec_cfg.seed = seed;
            let model = train_recurrent(train_w, &rec_cfg).map_err(|e| e.to_string())?;
            let preds = model.predict(test_w).map_err(|e| e.to_string())?;
            (test_w.targets.clone(), preds)
        }
    };
    let (truth, predicted) = match cfg.target_space {
        TargetSpace::Scaled => (truth, predicted),
        TargetSpace::Unscaled => match &split.test.scale {
            Some(params) => (
                params.inverse_target(&truth),
                params.inverse_target(&predicted),
            ),
            None => (truth, predicted),
        },
    };
    let metrics = RunMetrics {
        dataset: *kind,
        model: model_kind,
        run_index,
        seed,
        mae: mae(&truth, &predicted).map_err(|e| e.to_string())?,
        smape: smape(&truth, &predicted, cfg.smape_eps).map_err(|e| e.to_string())?,
        rmse: rmse(&truth, &predicted).map_err(|e| e.to_string())?,
    };
    let plot = (run_index == 0).then_some(PlotSeries {
        dataset: *kind,
        model: model_kind,
        truth,
        predicted,
    });
    Ok((metrics, plot))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n >= 2 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Write `metrics.csv` (Table-layout: one row per dataset, one metric triple
/// per model), `report.json` and one true-vs-predicted SVG per cell.
pub fn emit_report(report: &MetricsReport, outdir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io_err = |path: &Path| {
        let p = path.display().to_string();
        move |source: std::io::Error| EvalError::Io { path: p.clone(), source }
    };
    fs::create_dir_all(outdir).map_err(io_err(outdir))?;
    let mut written = Vec::new();

    // Deterministic orders.
    let datasets: Vec<DatasetKind> = DatasetKind::ALL
        .iter()
        .filter(|k| report.cells.iter().any(|c| c.dataset == **k))
        .copied()
        .collect();
    let models: Vec<ModelKind> = ModelKind::ALL
        .iter()
        .filter(|m| report.cells.iter().any(|c| c.model == **m))
        .copied()
        .collect();

    let csv_path = outdir.join("metrics.csv");
    let mut csv = String::from("dataset");
    for model in &models {
        csv.push_str(&format!(",{model}_mae,{model}_smape,{model}_rmse"));
    }
    csv.push('\n');
    for dataset in &datasets {
        csv.push_str(dataset.label());
        for model in &models {
            let cell = report
                .cells
                .iter()
                .find(|c| c.dataset == *dataset && c.model == *model);
            match cell {
                Some(c) => csv.push_str(&format!(
                    ",{:.12},{:.12},{:.12}",
                    c.mae_mean, c.smape_mean, c.rmse_mean
                )),
                None => csv.push_str(",,,"),
            }
        }
        csv.push('\n');
    }
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    written.push(csv_path);

    let json_path = outdir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    written.push(json_path);

    let plot_dir = outdir.join("plots");
    fs::create_dir_all(&plot_dir).map_err(io_err(&plot_dir))?;
    for series in &report.plots {
        let svg = plot::line_chart(
            &format!("{} / {}: true vs predicted datarate", series.dataset, series.model),
            "test-set index",
            "datarate (scaled)",
            &[
                ("true", series.truth.as_slice()),
                ("predicted", series.predicted.as_slice()),
            ],
        );
        let path = plot_dir.join(format!("{}_{}.svg", series.dataset.label(), series.model));
        fs::write(&path, svg).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
