//! Stage implementations. Stages hand off through files under `workdir`:
//! synth → ingest → analyze → align → build → train → evaluate → report.
//! No stage mutates a prior stage's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use pqos_core::align::{spatial_align, temporal_align, AlignedPair, SpatialAlignment};
use pqos_core::eval::{emit_report, run_experiment, ExperimentConfig, MetricsReport};
use pqos_core::featureset::{
    build_egf, build_egls, build_eglt, diff_transform, minmax_scale, prune_collinear,
    ratio_transform, temporal_split, windowize, DatasetKind, FeatureDataset, ScaleParams,
    SplitDataset,
};
use pqos_core::models::{
    predict, train_conv, train_gbt, train_recurrent, ModelInput, ModelKind, TrainedModel,
};
use pqos_core::plot;
use pqos_core::stats::{acf, acf_half_crossing, cross_feature_corr, pairwise_avg_corr};
use pqos_core::synthgen::{generate_traces, GroundTruth};
use pqos_core::trace_store::{
    load_traces, EgoLeadSplit, RoleMap, TraceCollection, TraceFormat, NUMERIC_COLUMNS,
};

use crate::config::{merge_role_maps, PipelineConfig};
use crate::manifest::StageManifest;

/// CLI failure classes: bad configuration exits 2, a failing stage exits 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Stage { stage: String, message: String },
}

impl CliError {
    fn stage(stage: &str, message: impl ToString) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

type StageResult = Result<(), CliError>;

fn write_file(stage: &str, path: &Path, contents: &str) -> StageResult {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::stage(stage, format!("mkdir {}: {e}", parent.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::stage(stage, format!("write {}: {e}", path.display())))
}

fn paths(cfg: &PipelineConfig) -> StagePaths {
    StagePaths {
        traces_csv: cfg.workdir.join("traces.csv"),
        ground_truth: cfg.workdir.join("ground_truth.json"),
        ingested_csv: cfg.workdir.join("ingested.csv"),
        ingest_summary: cfg.workdir.join("ingest_summary.json"),
        analysis_dir: cfg.workdir.join("analysis"),
        align_dir: cfg.workdir.join("align"),
        dataset_dir: cfg.workdir.join("datasets"),
        model_dir: cfg.workdir.join("models"),
        report_json: cfg.workdir.join("report.json"),
    }
}

struct StagePaths {
    traces_csv: PathBuf,
    ground_truth: PathBuf,
    ingested_csv: PathBuf,
    ingest_summary: PathBuf,
    analysis_dir: PathBuf,
    align_dir: PathBuf,
    dataset_dir: PathBuf,
    model_dir: PathBuf,
    report_json: PathBuf,
}

/// Generate the synthetic convoy scenario and its ground-truth sidecar.
pub fn stage_synth(cfg: &PipelineConfig) -> StageResult {
    let stage = "synth";
    let p = paths(cfg);
    fs::create_dir_all(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, format!("mkdir workdir: {e}")))?;
    let (collection, truth) =
        generate_traces(&cfg.synth).map_err(|e| CliError::stage(stage, e))?;
    collection
        .write_csv(&p.traces_csv)
        .map_err(|e| CliError::stage(stage, e))?;
    let truth_json = serde_json::to_string_pretty(&truth)
        .map_err(|e| CliError::stage(stage, format!("serialize ground truth: {e}")))?;
    write_file(stage, &p.ground_truth, &truth_json)?;
    info!(
        "synth: {} samples in 2 devices -> {}",
        collection.n_samples(),
        p.traces_csv.display()
    );
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    manifest.output(&p.traces_csv).output(&p.ground_truth);
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    Ok(())
}

/// Load the trace file, apply the scenario filter and write the canonical
/// ingested CSV.
pub fn stage_ingest(cfg: &PipelineConfig) -> StageResult {
    let stage = "ingest";
    let p = paths(cfg);
    let input = cfg.input.clone().unwrap_or_else(|| p.traces_csv.clone());
    if !input.exists() {
        return Err(CliError::stage(
            stage,
            format!(
                "input trace file missing: {} (run `pqos synth` first or set `input`)",
                input.display()
            ),
        ));
    }
    let collection = load_traces(&input, TraceFormat::Csv, &cfg.ingest)
        .map_err(|e| CliError::stage(stage, e))?;
    let filter = cfg.scenario_filter().map_err(CliError::Config)?;
    let filtered = match &filter {
        Some(f) => {
            let out = collection.filter_scenario(f);
            if out.is_empty() {
                return Err(CliError::stage(
                    stage,
                    format!("scenario {:?} matched no samples", cfg.scenario),
                ));
            }
            out
        }
        None => collection.clone(),
    };
    filtered
        .write_csv(&p.ingested_csv)
        .map_err(|e| CliError::stage(stage, e))?;
    let summary = serde_json::json!({
        "source": input.display().to_string(),
        "rejected_rows": collection.rejected_rows,
        "n_samples_loaded": collection.n_samples(),
        "n_samples_after_filter": filtered.n_samples(),
        "n_groups": filtered.n_groups(),
        "scenario": cfg.scenario,
        "measurement_ids": filtered.measurement_ids(),
    });
    write_file(stage, &p.ingest_summary, &serde_json::to_string_pretty(&summary).unwrap())?;
    info!(
        "ingest: {} samples kept ({} rejected rows) -> {}",
        filtered.n_samples(),
        collection.rejected_rows,
        p.ingested_csv.display()
    );
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    manifest
        .input(&input)
        .output(&p.ingested_csv)
        .output(&p.ingest_summary);
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    Ok(())
}

fn load_ingested(stage: &str, cfg: &PipelineConfig) -> Result<TraceCollection, CliError> {
    let p = paths(cfg);
    if !p.ingested_csv.exists() {
        return Err(CliError::stage(
            stage,
            format!(
                "missing {} (run `pqos ingest` first)",
                p.ingested_csv.display()
            ),
        ));
    }
    load_traces(&p.ingested_csv, TraceFormat::Csv, &Default::default())
        .map_err(|e| CliError::stage(stage, e))
}

/// Config role map, falling back to the synth ground truth when present.
fn resolve_roles(cfg: &PipelineConfig) -> RoleMap {
    let p = paths(cfg);
    let truth_roles = fs::read_to_string(&p.ground_truth)
        .ok()
        .and_then(|json| serde_json::from_str::<GroundTruth>(&json).ok())
        .map(|t| t.role_map)
        .unwrap_or_default();
    merge_role_maps(&cfg.ingest.role_map, &truth_roles)
}

fn split_measurements(
    stage: &str,
    collection: &TraceCollection,
    roles: &RoleMap,
) -> Result<Vec<EgoLeadSplit>, CliError> {
    let mut splits = Vec::new();
    for mid in collection.measurement_ids() {
        if !roles.contains_key(&mid) {
            warn!("{stage}: no role-map entry for measurement {mid}, skipping");
            continue;
        }
        splits.push(
            collection
                .split_ego_lead(mid, roles)
                .map_err(|e| CliError::stage(stage, e))?,
        );
    }
    if splits.is_empty() {
        return Err(CliError::stage(
            stage,
            "no measurement has a usable role-map entry",
        ));
    }
    Ok(splits)
}

/// Correlation analyses: target autocorrelation, ranked feature
/// cross-correlation and the measurement-averaged pairwise matrix per
/// temporal/spatial alignment.
pub fn stage_analyze(cfg: &PipelineConfig) -> StageResult {
    let stage = "analyze";
    let p = paths(cfg);
    let collection = load_ingested(stage, cfg)?;
    let roles = resolve_roles(cfg);
    let splits = split_measurements(stage, &collection, &roles)?;
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    manifest.input(&p.ingested_csv);

    // Autocorrelation of the ego datarate, per measurement.
    let mut half_crossings = BTreeMap::new();
    for split in &splits {
        let series: Vec<f64> = split.ego.iter().map(|s| s.datarate).collect();
        let max_lag = cfg.acf_max_lag.min(series.len().saturating_sub(1));
        let values = match acf(&series, max_lag) {
            Ok(v) => v,
            Err(e) => {
                warn!("analyze: acf for measurement {} skipped: {e}", split.measurement_id);
                continue;
            }
        };
        let mut csv = String::from("lag,lag_seconds,acf\n");
        for (lag, v) in values.iter().enumerate() {
            writeln!(csv, "{lag},{},{v}", lag as f64 * cfg.seconds_per_lag).unwrap();
        }
        let path = p
            .analysis_dir
            .join(format!("acf_m{}.csv", split.measurement_id));
        write_file(stage, &path, &csv)?;
        manifest.output(&path);
        let svg = plot::line_chart(
            &format!("Datarate autocorrelation, measurement {}", split.measurement_id),
            "lag (s)",
            "autocorrelation",
            &[("acf", values.as_slice())],
        );
        let svg_path = p
            .analysis_dir
            .join(format!("acf_m{}.svg", split.measurement_id));
        write_file(stage, &svg_path, &svg)?;
        manifest.output(&svg_path);
        half_crossings.insert(
            split.measurement_id.to_string(),
            acf_half_crossing(&values).map(|lag| lag * cfg.seconds_per_lag),
        );
    }
    let summary_path = p.analysis_dir.join("acf_summary.json");
    write_file(
        stage,
        &summary_path,
        &serde_json::to_string_pretty(&serde_json::json!({
            "half_crossing_lag_s": half_crossings,
        }))
        .unwrap(),
    )?;
    manifest.output(&summary_path);

    // Ranked cross-correlation of ego features against the datarate, over all
    // measurements' ego samples.
    let all_ego: Vec<_> = splits.iter().flat_map(|s| s.ego.iter().cloned()).collect();
    let features: Vec<&str> = NUMERIC_COLUMNS.to_vec();
    let ranking = cross_feature_corr(&all_ego, "datarate", &features, cfg.correlation_method)
        .map_err(|e| CliError::stage(stage, e))?;
    let mut csv = String::from("feature,coefficient,n_samples\n");
    for r in &ranking.results {
        writeln!(csv, "{},{},{}", r.feature_a, r.coefficient, r.n_samples).unwrap();
    }
    for (feature, reason) in &ranking.skipped {
        writeln!(csv, "{feature},skipped: {reason},0").unwrap();
    }
    let cross_path = p.analysis_dir.join("cross_corr.csv");
    write_file(stage, &cross_path, &csv)?;
    manifest.output(&cross_path);

    // Pairwise same-feature correlation between ego and lead: temporally
    // aligned, plus one row per spatial offset bin, averaged equally over
    // measurements.
    let mut row_labels = vec!["temporal".to_string()];
    let mut temporal_sets: BTreeMap<u32, Vec<AlignedPair>> = BTreeMap::new();
    let mut spatial_sets: Vec<BTreeMap<u32, Vec<AlignedPair>>> =
        vec![BTreeMap::new(); cfg.spatial.bins.len()];
    for split in &splits {
        let t = temporal_align(&split.ego, &split.lead, cfg.temporal_tolerance_s);
        temporal_sets.insert(split.measurement_id, t.pairs);
        let s = spatial_align(&split.ego, &split.lead, &cfg.spatial)
            .map_err(|e| CliError::stage(stage, e))?;
        for (i, bin) in s.bins.into_iter().enumerate() {
            spatial_sets[i].insert(split.measurement_id, bin.pairs);
        }
    }
    for bin in &cfg.spatial.bins {
        row_labels.push(bin.label());
    }
    let mut matrix_rows = Vec::new();
    matrix_rows.push(pairwise_avg_corr(&temporal_sets, &features, cfg.correlation_method).averaged);
    for set in &spatial_sets {
        matrix_rows.push(pairwise_avg_corr(set, &features, cfg.correlation_method).averaged);
    }
    let mut csv = String::from("alignment");
    for f in &features {
        write!(csv, ",{f}").unwrap();
    }
    csv.push('\n');
    for (label, row) in row_labels.iter().zip(&matrix_rows) {
        write!(csv, "{label}").unwrap();
        for cell in row {
            match cell {
                Some(v) => write!(csv, ",{v}").unwrap(),
                None => write!(csv, ",").unwrap(),
            }
        }
        csv.push('\n');
    }
    let pairwise_path = p.analysis_dir.join("pairwise_corr.csv");
    write_file(stage, &pairwise_path, &csv)?;
    manifest.output(&pairwise_path);
    let heatmap = plot::heatmap(
        "Ego/lead same-feature correlation (equal-weight average over measurements)",
        &row_labels,
        &features.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
        &matrix_rows,
    );
    let heatmap_path = p.analysis_dir.join("pairwise_corr.svg");
    write_file(stage, &heatmap_path, &heatmap)?;
    manifest.output(&heatmap_path);

    info!("analyze: wrote {}", p.analysis_dir.display());
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    Ok(())
}

fn pairs_csv(pairs: &[AlignedPair]) -> String {
    let mut csv = String::from("ego_ts,lead_ts,delta_t,delta_s,delta_v\n");
    for pair in pairs {
        writeln!(
            csv,
            "{},{},{},{},{}",
            pair.ego.timestamp, pair.lead.timestamp, pair.delta_t, pair.delta_s, pair.delta_v
        )
        .unwrap();
    }
    csv
}

/// Temporal and spatial alignment artifacts: per-bin pair counts and pair
/// CSVs per measurement.
pub fn stage_align(cfg: &PipelineConfig) -> StageResult {
    let stage = "align";
    let p = paths(cfg);
    let collection = load_ingested(stage, cfg)?;
    let roles = resolve_roles(cfg);
    let splits = split_measurements(stage, &collection, &roles)?;
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    manifest.input(&p.ingested_csv);
    let mut counts = serde_json::Map::new();
    for split in &splits {
        let mid = split.measurement_id;
        let temporal = temporal_align(&split.ego, &split.lead, cfg.temporal_tolerance_s);
        let t_path = p.align_dir.join(format!("temporal_m{mid}.csv"));
        write_file(stage, &t_path, &pairs_csv(&temporal.pairs))?;
        manifest.output(&t_path);
        let spatial = spatial_align(&split.ego, &split.lead, &cfg.spatial)
            .map_err(|e| CliError::stage(stage, e))?;
        let mut bin_counts = serde_json::Map::new();
        for bin in &spatial.bins {
            let label = bin.bin.label();
            if bin.pairs.is_empty() {
                warn!("align: measurement {mid} bin {label} is empty");
            }
            let s_path = p.align_dir.join(format!("spatial_m{mid}_{label}.csv"));
            write_file(stage, &s_path, &pairs_csv(&bin.pairs))?;
            manifest.output(&s_path);
            bin_counts.insert(label, serde_json::json!(bin.pairs.len()));
        }
        counts.insert(
            mid.to_string(),
            serde_json::json!({
                "temporal_pairs": temporal.pairs.len(),
                "unmatched_ego": temporal.unmatched_ego,
                "spatial_bins": bin_counts,
            }),
        );
    }
    let counts_path = p.align_dir.join("counts.json");
    write_file(
        stage,
        &counts_path,
        &serde_json::to_string_pretty(&serde_json::Value::Object(counts)).unwrap(),
    )?;
    manifest.output(&counts_path);
    info!("align: wrote {}", p.align_dir.display());
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    Ok(())
}

/// Concatenate per-measurement datasets in (measurement_id, timestamp) order.
fn concat_datasets(parts: Vec<FeatureDataset>) -> FeatureDataset {
    let mut iter = parts.into_iter();
    let mut base = iter.next().expect("at least one part");
    for part in iter {
        assert_eq!(base.columns, part.columns, "column sets must match");
        let mut x = base.matrix().to_vec();
        x.extend_from_slice(part.matrix());
        let mut y = base.y.clone();
        y.extend_from_slice(&part.y);
        let mut ts = base.timestamps.clone();
        ts.extend_from_slice(&part.timestamps);
        base = FeatureDataset::new(base.name, base.columns.clone(), x, y, ts, true);
    }
    base
}

fn build_one_kind(
    kind: DatasetKind,
    splits: &[EgoLeadSplit],
    cfg: &PipelineConfig,
) -> Result<FeatureDataset, String> {
    let mut parts = Vec::new();
    for split in splits {
        let built = match kind {
            DatasetKind::Egf => build_egf(&split.ego),
            DatasetKind::Eglt | DatasetKind::EgltDiff => {
                let pairs = temporal_align(&split.ego, &split.lead, cfg.temporal_tolerance_s);
                build_eglt(&pairs.pairs).and_then(|d| {
                    if kind == DatasetKind::EgltDiff {
                        diff_transform(&d)
                    } else {
                        Ok(d)
                    }
                })
            }
            DatasetKind::Egls | DatasetKind::EglsRatio => {
                let alignment: SpatialAlignment =
                    spatial_align(&split.ego, &split.lead, &cfg.spatial).map_err(|e| e.to_string())?;
                build_egls(&alignment).and_then(|d| {
                    if kind == DatasetKind::EglsRatio {
                        ratio_transform(&d)
                    } else {
                        Ok(d)
                    }
                })
            }
        };
        parts.push(built.map_err(|e| format!("measurement {}: {e}", split.measurement_id))?);
    }
    Ok(concat_datasets(parts))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct DatasetSidecar {
    name: DatasetKind,
    columns: Vec<String>,
    n_rows: usize,
    split_index: usize,
    scale: ScaleParams,
    retained_after_prune: Option<Vec<String>>,
    provenance: Provenance,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Provenance {
    source: String,
    config_hash: String,
}

/// Build, optionally prune, scale and persist the configured datasets.
pub fn stage_build(cfg: &PipelineConfig) -> StageResult {
    let stage = "build";
    let p = paths(cfg);
    let collection = load_ingested(stage, cfg)?;
    let roles = resolve_roles(cfg);
    let splits = split_measurements(stage, &collection, &roles)?;
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    manifest.input(&p.ingested_csv);
    for &kind in &cfg.datasets {
        let built =
            build_one_kind(kind, &splits, cfg).map_err(|e| CliError::stage(stage, e))?;
        let (pruned, prune_report) = match cfg.prune_threshold {
            Some(threshold) => {
                let (d, report) = prune_collinear(&built, threshold);
                (d, Some(report.retained))
            }
            None => (built, None),
        };
        let scaled = minmax_scale(&pruned, cfg.scale_fit, cfg.train_ratio)
            .map_err(|e| CliError::stage(stage, e))?;
        let split = temporal_split(&scaled, cfg.train_ratio)
            .map_err(|e| CliError::stage(stage, e))?;

        let mut csv = String::from("ego_timestamp");
        for c in &scaled.columns {
            write!(csv, ",{c}").unwrap();
        }
        csv.push_str(",target\n");
        for i in 0..scaled.n_rows() {
            write!(csv, "{}", scaled.timestamps[i]).unwrap();
            for v in scaled.row(i) {
                write!(csv, ",{v}").unwrap();
            }
            writeln!(csv, ",{}", scaled.y[i]).unwrap();
        }
        let csv_path = p.dataset_dir.join(format!("{}.csv", kind.label()));
        write_file(stage, &csv_path, &csv)?;
        manifest.output(&csv_path);

        let sidecar = DatasetSidecar {
            name: kind,
            columns: scaled.columns.clone(),
            n_rows: scaled.n_rows(),
            split_index: split.split_index,
            scale: scaled.scale.clone().expect("scaled dataset has params"),
            retained_after_prune: prune_report,
            provenance: Provenance {
                source: p.ingested_csv.display().to_string(),
                config_hash: cfg.hash(),
            },
        };
        let sidecar_path = p.dataset_dir.join(format!("{}.json", kind.label()));
        write_file(
            stage,
            &sidecar_path,
            &serde_json::to_string_pretty(&sidecar).unwrap(),
        )?;
        manifest.output(&sidecar_path);
        info!(
            "build: {} -> {} rows x {} cols (train {} / test {})",
            kind.label(),
            scaled.n_rows(),
            scaled.n_cols(),
            split.split_index,
            scaled.n_rows() - split.split_index
        );
    }
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    Ok(())
}

/// Reload a dataset written by [`stage_build`].
fn load_dataset(
    stage: &str,
    cfg: &PipelineConfig,
    kind: DatasetKind,
) -> Result<FeatureDataset, CliError> {
    let p = paths(cfg);
    let csv_path = p.dataset_dir.join(format!("{}.csv", kind.label()));
    let sidecar_path = p.dataset_dir.join(format!("{}.json", kind.label()));
    for path in [&csv_path, &sidecar_path] {
        if !path.exists() {
            return Err(CliError::stage(
                stage,
                format!(
                    "missing dataset file {} (run `pqos build` first)",
                    path.display()
                ),
            ));
        }
    }
    let sidecar: DatasetSidecar = serde_json::from_str(
        &fs::read_to_string(&sidecar_path)
            .map_err(|e| CliError::stage(stage, format!("read {}: {e}", sidecar_path.display())))?,
    )
    .map_err(|e| CliError::stage(stage, format!("parse {}: {e}", sidecar_path.display())))?;
    let raw = fs::read_to_string(&csv_path)
        .map_err(|e| CliError::stage(stage, format!("read {}: {e}", csv_path.display())))?;
    let mut lines = raw.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::stage(stage, format!("{} is empty", csv_path.display())))?;
    let expected_header = {
        let mut h = String::from("ego_timestamp");
        for c in &sidecar.columns {
            write!(h, ",{c}").unwrap();
        }
        h.push_str(",target");
        h
    };
    if header != expected_header {
        return Err(CliError::stage(
            stage,
            format!("{} header does not match its sidecar", csv_path.display()),
        ));
    }
    let n_cols = sidecar.columns.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ts = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols + 2 {
            return Err(CliError::stage(
                stage,
                format!("{} line {}: wrong field count", csv_path.display(), lineno + 2),
            ));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|e| CliError::stage(stage, format!("bad float '{s}': {e}")))
        };
        ts.push(parse(fields[0])?);
        for f in &fields[1..=n_cols] {
            x.push(parse(f)?);
        }
        y.push(parse(fields[n_cols + 1])?);
    }
    let mut d = FeatureDataset::new(sidecar.name, sidecar.columns, x, y, ts, true);
    d.scale = Some(sidecar.scale);
    Ok(d)
}

fn split_loaded(
    stage: &str,
    cfg: &PipelineConfig,
    kind: DatasetKind,
) -> Result<SplitDataset, CliError> {
    let d = load_dataset(stage, cfg, kind)?;
    temporal_split(&d, cfg.train_ratio).map_err(|e| CliError::stage(stage, e))
}

/// Train one model per configured (dataset, family) pair at the base seed and
/// persist the serialized models.
pub fn stage_train(cfg: &PipelineConfig) -> StageResult {
    let stage = "train";
    let p = paths(cfg);
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    for &kind in &cfg.datasets {
        let split = split_loaded(stage, cfg, kind)?;
        for &model_kind in &cfg.models {
            let trained: TrainedModel = match model_kind {
                ModelKind::Gbt => {
                    let mut gbt_cfg = cfg.gbt.clone();
                    gbt_cfg.seed = cfg.base_seed;
                    TrainedModel::Gbt(
                        train_gbt(&split.train, &gbt_cfg).map_err(|e| CliError::stage(stage, e))?,
                    )
                }
                ModelKind::Conv => {
                    let mut conv_cfg = cfg.conv.clone();
                    conv_cfg.seed = cfg.base_seed;
                    let windows = windowize(&split.train, conv_cfg.lookback)
                        .map_err(|e| CliError::stage(stage, e))?;
                    TrainedModel::Conv(
                        train_conv(&windows, &conv_cfg).map_err(|e| CliError::stage(stage, e))?,
                    )
                }
                ModelKind::Recurrent => {
                    let mut rec_cfg = cfg.recurrent.clone();
                    rec_cfg.seed = cfg.base_seed;
                    let windows = windowize(&split.train, rec_cfg.lookback)
                        .map_err(|e| CliError::stage(stage, e))?;
                    TrainedModel::Recurrent(
                        train_recurrent(&windows, &rec_cfg)
                            .map_err(|e| CliError::stage(stage, e))?,
                    )
                }
            };
            // Smoke prediction keeps the artifact honest.
            let n_preds = match (&trained, model_kind) {
                (_, ModelKind::Gbt) => predict(&trained, &ModelInput::Rows(&split.test))
                    .map_err(|e| CliError::stage(stage, e))?
                    .len(),
                (_, _) => {
                    let lookback = match model_kind {
                        ModelKind::Conv => cfg.conv.lookback,
                        _ => cfg.recurrent.lookback,
                    };
                    let windows = windowize(&split.test, lookback)
                        .map_err(|e| CliError::stage(stage, e))?;
                    predict(&trained, &ModelInput::Windows(&windows))
                        .map_err(|e| CliError::stage(stage, e))?
                        .len()
                }
            };
            let json = trained.to_json().map_err(|e| CliError::stage(stage, e))?;
            let path = p
                .model_dir
                .join(format!("{}_{}.json", kind.label(), model_kind));
            write_file(stage, &path, &json)?;
            manifest.output(&path);
            info!(
                "train: {} x {} -> {} ({} test predictions)",
                kind.label(),
                model_kind,
                path.display(),
                n_preds
            );
        }
    }
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    Ok(())
}

fn experiment_config(cfg: &PipelineConfig) -> ExperimentConfig {
    ExperimentConfig {
        gbt: cfg.gbt.clone(),
        conv: cfg.conv.clone(),
        recurrent: cfg.recurrent.clone(),
        n_runs: cfg.n_runs,
        base_seed: cfg.base_seed,
        smape_eps: cfg.smape_eps,
        target_space: cfg.target_space,
    }
}

/// Run the full n-runs experiment grid over the built datasets.
pub fn stage_evaluate(cfg: &PipelineConfig) -> StageResult {
    let stage = "evaluate";
    let p = paths(cfg);
    let mut datasets = Vec::new();
    for &kind in &cfg.datasets {
        datasets.push((kind, split_loaded(stage, cfg, kind)?));
    }
    let report = run_experiment(&datasets, &cfg.models, &experiment_config(cfg))
        .map_err(|e| CliError::stage(stage, e))?;
    for (dataset, model, run, error) in &report.failures {
        warn!("evaluate: {dataset} x {model} run {run} failed: {error}");
    }
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::stage(stage, format!("serialize report: {e}")))?;
    write_file(stage, &p.report_json, &json)?;
    info!(
        "evaluate: {} runs over {} cells -> {}",
        report.runs.len(),
        report.cells.len(),
        p.report_json.display()
    );
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    for &kind in &cfg.datasets {
        manifest.input(&p.dataset_dir.join(format!("{}.csv", kind.label())));
    }
    manifest.output(&p.report_json);
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    Ok(())
}

/// Render metrics.csv, report.json and the true-vs-predicted plots into
/// `outdir`.
pub fn stage_report(cfg: &PipelineConfig) -> StageResult {
    let stage = "report";
    let p = paths(cfg);
    if !p.report_json.exists() {
        return Err(CliError::stage(
            stage,
            format!(
                "missing {} (run `pqos evaluate` first)",
                p.report_json.display()
            ),
        ));
    }
    let report: MetricsReport = serde_json::from_str(
        &fs::read_to_string(&p.report_json)
            .map_err(|e| CliError::stage(stage, format!("read report: {e}")))?,
    )
    .map_err(|e| CliError::stage(stage, format!("parse report: {e}")))?;
    let files = emit_report(&report, &cfg.outdir).map_err(|e| CliError::stage(stage, e))?;
    let mut manifest = StageManifest::new(stage, &cfg.hash());
    manifest.input(&p.report_json);
    for f in &files {
        manifest.output(f);
    }
    manifest
        .write(&cfg.workdir)
        .map_err(|e| CliError::stage(stage, e))?;
    info!("report: wrote {} files under {}", files.len(), cfg.outdir.display());
    // Improvement summary on stdout, percentages to 2 decimals.
    for imp in &report.improvements {
        println!(
            "{} {} {}: {:.4} -> {:.4} ({:+.2}%)",
            imp.dataset, imp.model, imp.metric, imp.baseline, imp.candidate, imp.percent
        );
    }
    Ok(())
}

/// All stages in order. The synth stage is skipped when an external input
/// trace file is configured.
pub fn stage_pipeline(cfg: &PipelineConfig) -> StageResult {
    if cfg.input.is_none() {
        stage_synth(cfg)?;
    }
    stage_ingest(cfg)?;
    stage_analyze(cfg)?;
    stage_align(cfg)?;
    stage_build(cfg)?;
    stage_train(cfg)?;
    stage_evaluate(cfg)?;
    stage_report(cfg)?;
    Ok(())
}
