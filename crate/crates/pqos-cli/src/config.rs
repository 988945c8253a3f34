//! Pipeline configuration: JSON file (with `//` and `/* */` comments
//! stripped) plus command-line overrides. Every stage resolves its inputs
//! and outputs relative to `workdir`/`outdir`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pqos_core::align::SpatialAlignSpec;
use pqos_core::eval::{default_smape_eps, TargetSpace};
use pqos_core::featureset::{DatasetKind, ScaleFit};
use pqos_core::models::{ConvNetConfig, GbtConfig, ModelKind, RecurrentConfig};
use pqos_core::stats::CorrelationMethod;
use pqos_core::synthgen::SynthConfig;
use pqos_core::trace_store::IngestConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    pub outdir: PathBuf,
    /// Trace CSV to ingest; defaults to the synth stage's output.
    pub input: Option<PathBuf>,
    pub synth: SynthConfig,
    pub ingest: IngestConfig,
    /// Scenario preset name applied at ingestion (key into
    /// `ingest.scenario_presets`); `null` ingests everything.
    pub scenario: Option<String>,
    pub temporal_tolerance_s: f64,
    pub spatial: SpatialAlignSpec,
    pub acf_max_lag: usize,
    /// Seconds of wall-clock time per sample lag (1.0 for 1 Hz traces).
    pub seconds_per_lag: f64,
    pub correlation_method: CorrelationMethod,
    pub datasets: Vec<DatasetKind>,
    pub scale_fit: ScaleFit,
    pub train_ratio: f64,
    /// Collinearity pruning threshold; `null` skips pruning (the canonical
    /// column sets are already pruned).
    pub prune_threshold: Option<f64>,
    pub models: Vec<ModelKind>,
    pub gbt: GbtConfig,
    pub conv: ConvNetConfig,
    pub recurrent: RecurrentConfig,
    pub n_runs: usize,
    pub base_seed: u64,
    pub smape_eps: f64,
    pub target_space: TargetSpace,
    /// Worker threads for run-level parallelism; `null` = all cores.
    pub jobs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workdir: PathBuf::from("work"),
            outdir: PathBuf::from("out"),
            input: None,
            synth: SynthConfig::default(),
            ingest: IngestConfig::default(),
            scenario: Some("A3D".to_string()),
            temporal_tolerance_s: 0.5,
            spatial: SpatialAlignSpec::default(),
            acf_max_lag: 120,
            seconds_per_lag: 1.0,
            correlation_method: CorrelationMethod::Pearson,
            datasets: DatasetKind::ALL.to_vec(),
            scale_fit: ScaleFit::Full,
            train_ratio: 0.8,
            prune_threshold: None,
            models: ModelKind::ALL.to_vec(),
            gbt: GbtConfig::default(),
            conv: ConvNetConfig::default(),
            recurrent: RecurrentConfig::default(),
            n_runs: 50,
            base_seed: 0,
            smape_eps: default_smape_eps(),
            target_space: TargetSpace::Scaled,
            jobs: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let stripped = strip_comments(&raw);
        serde_json::from_str(&stripped)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Resolved scenario filter, if a preset is configured.
    pub fn scenario_filter(
        &self,
    ) -> Result<Option<pqos_core::trace_store::ScenarioFilter>, String> {
        match &self.scenario {
            None => Ok(None),
            Some(name) => self
                .ingest
                .scenario_presets
                .get(name)
                .cloned()
                .map(Some)
                .ok_or_else(|| {
                    format!(
                        "scenario preset '{name}' not found; known: {:?}",
                        self.ingest.scenario_presets.keys().collect::<Vec<_>>()
                    )
                }),
        }
    }

    /// SHA-256 of the canonical JSON serialization, for manifests.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Strip `//` line comments and `/* */` block comments outside string
/// literals.
pub fn strip_comments(input: &str) -> String {
    let bytes = input.as_bytes();
    let mut out = String::with_capacity(input.len());
    let mut i = 0;
    let mut in_string = false;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if in_string {
            out.push(c);
            if c == '\\' && i + 1 < bytes.len() {
                out.push(bytes[i + 1] as char);
                i += 2;
                continue;
            }
            if c == '"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
                i += 1;
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == b'/' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == b'*' => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

/// Merge role maps: entries from `extra` fill gaps in `base` (config wins).
pub fn merge_role_maps(
    base: &pqos_core::trace_store::RoleMap,
    extra: &pqos_core::trace_store::RoleMap,
) -> pqos_core::trace_store::RoleMap {
    let mut merged: BTreeMap<_, _> = extra.clone();
    for (k, v) in base {
        merged.insert(*k, v.clone());
    }
    merged
}
