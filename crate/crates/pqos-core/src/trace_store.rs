//! Trace schema, ingestion and scenario grouping.
//!
//! A trace file is a flat table of per-second samples taken by one or more
//! devices over several drive runs ("measurements"). This module defines the
//! canonical sample schema, loads CSV files into a [`TraceCollection`] grouped
//! by `(measurement_id, device_id)`, filters collections down to a scenario
//! (operator, direction, target datarate) and splits a measurement group into
//! its ego and lead series using a configured role map.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Transmission direction of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downlink,
    Uplink,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "downlink" | "dl" => Ok(Direction::Downlink),
            "uplink" | "ul" => Ok(Direction::Uplink),
            other => Err(format!("unknown direction '{other}'")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Downlink => write!(f, "downlink"),
            Direction::Uplink => write!(f, "uplink"),
        }
    }
}

/// Optional per-sample radio KPIs. A `None` means the source row had no value
/// for that column; rows are only dropped on nulls at feature-matrix
/// construction, so samples stay usable for datasets that need fewer columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiValues {
    pub pcell_snr_1: Option<f64>,
    pub pcell_snr_2: Option<f64>,
    pub pcell_rsrp_max: Option<f64>,
    pub pcell_rsrq_max: Option<f64>,
    pub pcell_rssi_max: Option<f64>,
    pub pcell_downlink_tb_size: Option<f64>,
    pub pcell_downlink_num_rbs: Option<f64>,
    pub pcell_downlink_average_mcs: Option<f64>,
    pub pcell_downlink_tx_power: Option<f64>,
}

/// KPI column names as they appear in the source tables.
pub const KPI_COLUMNS: [&str; 9] = [
    "PCell_SNR_1",
    "PCell_SNR_2",
    "PCell_RSRP_max",
    "PCell_RSRQ_max",
    "PCell_RSSI_max",
    "PCell_Downlink_TB_Size",
    "PCell_Downlink_Num_RBs",
    "PCell_Downlink_Average_MCS",
    "PCell_Downlink_Tx_Power",
];

/// Mandatory (non-nullable) columns. A row that fails to parse any of these
/// is rejected and counted; a file whose header lacks one of them is a schema
/// mismatch.
pub const MANDATORY_COLUMNS: [&str; 10] = [
    "timestamp",
    "device_id",
    "measurement_id",
    "operator_id",
    "direction",
    "target_datarate",
    "latitude",
    "longitude",
    "speed",
    "datarate",
];

/// Numeric columns usable as correlation features (the target `datarate`
/// included; callers exclude it from rankings where required).
pub const NUMERIC_COLUMNS: [&str; 13] = [
    "latitude",
    "longitude",
    "speed",
    "datarate",
    "PCell_SNR_1",
    "PCell_SNR_2",
    "PCell_RSRP_max",
    "PCell_RSRQ_max",
    "PCell_RSSI_max",
    "PCell_Downlink_TB_Size",
    "PCell_Downlink_Num_RBs",
    "PCell_Downlink_Average_MCS",
    "PCell_Downlink_Tx_Power",
];

/// One timestamped row of a device's radio and positioning KPIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Seconds since epoch; fractional values allowed.
    pub timestamp: f64,
    pub device_id: String,
    pub measurement_id: u32,
    pub operator_id: u32,
    pub direction: Direction,
    /// Requested datarate in kbit/s.
    pub target_datarate: f64,
    pub latitude: f64,
    pub longitude: f64,
    /// Ground speed in m/s.
    pub speed: f64,
    /// Achieved datarate in bit/s — the prediction target.
    pub datarate: f64,
    #[serde(flatten)]
    pub kpis: KpiValues,
}

impl TraceSample {
    /// Value of a named numeric column, `None` when the KPI is null.
    pub fn numeric_value(&self, column: &str) -> Option<f64> {
        match column {
            "timestamp" => Some(self.timestamp),
            "latitude" => Some(self.latitude),
            "longitude" => Some(self.longitude),
            "speed" => Some(self.speed),
            "datarate" => Some(self.datarate),
            "target_datarate" => Some(self.target_datarate),
            "PCell_SNR_1" => self.kpis.pcell_snr_1,
            "PCell_SNR_2" => self.kpis.pcell_snr_2,
            "PCell_RSRP_max" => self.kpis.pcell_rsrp_max,
            "PCell_RSRQ_max" => self.kpis.pcell_rsrq_max,
            "PCell_RSSI_max" => self.kpis.pcell_rssi_max,
            "PCell_Downlink_TB_Size" => self.kpis.pcell_downlink_tb_size,
            "PCell_Downlink_Num_RBs" => self.kpis.pcell_downlink_num_rbs,
            "PCell_Downlink_Average_MCS" => self.kpis.pcell_downlink_average_mcs,
            "PCell_Downlink_Tx_Power" => self.kpis.pcell_downlink_tx_power,
            _ => None,
        }
    }

    fn kpi_by_column(&self, column: &str) -> Option<f64> {
        self.numeric_value(column)
    }

    fn set_kpi(&mut self, column: &str, value: Option<f64>) {
        match column {
            "PCell_SNR_1" => self.kpis.pcell_snr_1 = value,
            "PCell_SNR_2" => self.kpis.pcell_snr_2 = value,
            "PCell_RSRP_max" => self.kpis.pcell_rsrp_max = value,
            "PCell_RSRQ_max" => self.kpis.pcell_rsrq_max = value,
            "PCell_RSSI_max" => self.kpis.pcell_rssi_max = value,
            "PCell_Downlink_TB_Size" => self.kpis.pcell_downlink_tb_size = value,
            "PCell_Downlink_Num_RBs" => self.kpis.pcell_downlink_num_rbs = value,
            "PCell_Downlink_Average_MCS" => self.kpis.pcell_downlink_average_mcs = value,
            "PCell_Downlink_Tx_Power" => self.kpis.pcell_downlink_tx_power = value,
            _ => {}
        }
    }
}

/// Scenario predicate; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_datarate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_ids: Option<BTreeSet<u32>>,
}

impl ScenarioFilter {
    /// The canonical preset: operator 1, downlink, 350,000 kbit/s target.
    pub fn a3d() -> Self {
        ScenarioFilter {
            operator_id: Some(1),
            direction: Some(Direction::Downlink),
            target_datarate: Some(350_000.0),
            measurement_ids: None,
        }
    }

    pub fn matches(&self, sample: &TraceSample) -> bool {
        if let Some(op) = self.operator_id {
            if sample.operator_id != op {
                return false;
            }
        }
        if let Some(dir) = self.direction {
            if sample.direction != dir {
                return false;
            }
        }
        if let Some(target) = self.target_datarate {
            if sample.target_datarate != target {
                return false;
            }
        }
        if let Some(ids) = &self.measurement_ids {
            if !ids.contains(&sample.measurement_id) {
                return false;
            }
        }
        true
    }
}

/// Lead/ego assignment for one measurement run. The ego side may be left
/// implicit when the group has exactly two devices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleEntry {
    pub lead: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego: Option<String>,
}

/// Role map keyed by measurement id. Roles are explicit configuration; there
/// is no inference heuristic.
pub type RoleMap = BTreeMap<u32, RoleEntry>;

/// Ingestion configuration: canonical column name → source header, the role
/// map and named scenario presets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Canonical name → source column header. Identity unless overridden.
    #[serde(default)]
    pub column_map: BTreeMap<String, String>,
    #[serde(default)]
    pub role_map: RoleMap,
    #[serde(default = "default_presets")]
    pub scenario_presets: BTreeMap<String, ScenarioFilter>,
}

fn default_presets() -> BTreeMap<String, ScenarioFilter> {
    let mut presets = BTreeMap::new();
    presets.insert("A3D".to_string(), ScenarioFilter::a3d());
    presets
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            column_map: BTreeMap::new(),
            role_map: RoleMap::new(),
            scenario_presets: default_presets(),
        }
    }
}

impl IngestConfig {
    fn source_column<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.column_map
            .get(canonical)
            .map(String::as_str)
            .unwrap_or(canonical)
    }
}

/// Supported trace file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace file not found: {path}")]
    FileNotFound { path: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch, missing mandatory columns: {missing:?}")]
    SchemaMismatch { missing: Vec<String> },
    #[error("no valid rows in {path} ({rejected} rejected)")]
    EmptyCollection { path: String, rejected: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("measurement {measurement_id} not present in collection")]
    UnknownMeasurement { measurement_id: u32 },
    #[error(
        "cannot assign ego/lead roles for measurement {measurement_id}: \
         {n_devices} device(s), role map entry {role_entry}"
    )]
    AmbiguousRoles {
        measurement_id: u32,
        n_devices: usize,
        role_entry: String,
    },
}

/// Where a collection came from and what was applied to it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
}

/// Samples grouped by `(measurement_id, device_id)`, chronologically sorted
/// within each group, with duplicate timestamps removed at construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceCollection {
    groups: BTreeMap<(u32, String), Vec<TraceSample>>,
    pub provenance: Provenance,
    /// Rows dropped during construction (unparseable mandatory fields,
    /// out-of-range coordinates, negative datarate, duplicate timestamps).
    pub rejected_rows: usize,
}

impl TraceCollection {
    /// Group, sort and deduplicate a flat sample list. Duplicate
    /// `(device, measurement, timestamp)` triples keep the first occurrence;
    /// the rest are counted as rejected.
    pub fn from_samples(samples: Vec<TraceSample>, provenance: Provenance) -> Self {
        let mut groups: BTreeMap<(u32, String), Vec<TraceSample>> = BTreeMap::new();
        for sample in samples {
            groups
                .entry((sample.measurement_id, sample.device_id.clone()))
                .or_default()
                .push(sample);
        }
        let mut rejected = 0;
        for series in groups.values_mut() {
            series.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            let before = series.len();
            series.dedup_by(|next, prev| next.timestamp == prev.timestamp);
            rejected += before - series.len();
        }
        TraceCollection {
            groups,
            provenance,
            rejected_rows: rejected,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.groups.values().all(Vec::is_empty)
    }

    pub fn n_samples(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group keys in `(measurement_id, device_id)` order.
    pub fn group_keys(&self) -> impl Iterator<Item = &(u32, String)> {
        self.groups.keys()
    }

    pub fn group(&self, measurement_id: u32, device_id: &str) -> Option<&[TraceSample]> {
        self.groups
            .get(&(measurement_id, device_id.to_string()))
            .map(Vec::as_slice)
    }

    pub fn measurement_ids(&self) -> BTreeSet<u32> {
        self.groups.keys().map(|(m, _)| *m).collect()
    }

    pub fn devices_in_measurement(&self, measurement_id: u32) -> Vec<&str> {
        self.groups
            .keys()
            .filter(|(m, _)| *m == measurement_id)
            .map(|(_, d)| d.as_str())
            .collect()
    }

    /// All samples in deterministic group order.
    pub fn iter_samples(&self) -> impl Iterator<Item = &TraceSample> {
        self.groups.values().flatten()
    }

    /// Keep only samples matching every set field of the filter. An empty
    /// result is a signal for the caller, not an error.
    pub fn filter_scenario(&self, filter: &ScenarioFilter) -> TraceCollection {
        let mut groups = BTreeMap::new();
        for (key, series) in &self.groups {
            let kept: Vec<TraceSample> = series
                .iter()
                .filter(|s| filter.matches(s))
                .cloned()
                .collect();
            if !kept.is_empty() {
                groups.insert(key.clone(), kept);
            }
        }
        TraceCollection {
            groups,
            provenance: Provenance {
                source: self.provenance.source.clone(),
                filter: Some(
                    serde_json::to_string(filter).unwrap_or_else(|_| "<unprintable>".into()),
                ),
            },
            rejected_rows: 0,
        }
    }

    /// Split one measurement group into `(ego, lead)` series using the role
    /// map. Roles come exclusively from configuration.
    pub fn split_ego_lead(
        &self,
        measurement_id: u32,
        role_map: &RoleMap,
    ) -> Result<EgoLeadSplit, TraceError> {
        let devices = self.devices_in_measurement(measurement_id);
        if devices.is_empty() {
            return Err(TraceError::UnknownMeasurement { measurement_id });
        }
        let entry = role_map.get(&measurement_id);
        let ambiguous = |entry: Option<&RoleEntry>| TraceError::AmbiguousRoles {
            measurement_id,
            n_devices: devices.len(),
            role_entry: entry
                .map(|e| format!("lead={} ego={:?}", e.lead, e.ego))
                .unwrap_or_else(|| "<none>".into()),
        };
        let Some(entry) = entry else {
            return Err(ambiguous(None));
        };
        let lead_id = entry.lead.clone();
        let ego_id = match &entry.ego {
            Some(ego) => ego.clone(),
            None => {
                // Implicit ego: the single remaining device of a two-device group.
                if devices.len() != 2 {
                    return Err(ambiguous(Some(entry)));
                }
                let other = devices.iter().find(|d| **d != lead_id);
                match other {
                    Some(d) => d.to_string(),
                    None => return Err(ambiguous(Some(entry))),
                }
            }
        };
        if ego_id == lead_id {
            return Err(ambiguous(Some(entry)));
        }
        let lead = self
            .group(measurement_id, &lead_id)
            .ok_or_else(|| ambiguous(Some(entry)))?
            .to_vec();
        let ego = self
            .group(measurement_id, &ego_id)
            .ok_or_else(|| ambiguous(Some(entry)))?
            .to_vec();
        Ok(EgoLeadSplit {
            measurement_id,
            ego_device: ego_id,
            lead_device: lead_id,
            ego,
            lead,
        })
    }

    /// Write the collection as canonical CSV. Floats use the shortest
    /// round-trippable representation, so `load(write(c)) == c` exactly.
    pub fn write_csv(&self, path: &Path) -> Result<(), TraceError> {
        let file = File::create(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut out = BufWriter::new(file);
        let mut header: Vec<&str> = MANDATORY_COLUMNS.to_vec();
        header.extend(KPI_COLUMNS);
        writeln!(out, "{}", header.join(",")).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for sample in self.iter_samples() {
            let mut fields: Vec<String> = vec![
                format!("{}", sample.timestamp),
                sample.device_id.clone(),
                format!("{}", sample.measurement_id),
                format!("{}", sample.operator_id),
                sample.direction.to_string(),
                format!("{}", sample.target_datarate),
                format!("{}", sample.latitude),
                format!("{}", sample.longitude),
                format!("{}", sample.speed),
                format!("{}", sample.datarate),
            ];
            for kpi in KPI_COLUMNS {
                fields.push(match sample.kpi_by_column(kpi) {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                });
            }
            writeln!(out, "{}", fields.join(",")).map_err(|source| TraceError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Result of [`TraceCollection::split_ego_lead`].
#[derive(Debug, Clone)]
pub struct EgoLeadSplit {
    pub measurement_id: u32,
    pub ego_device: String,
    pub lead_device: String,
    pub ego: Vec<TraceSample>,
    pub lead: Vec<TraceSample>,
}

/// Load a trace file into a grouped collection.
///
/// Rows whose mandatory fields fail to parse, whose coordinates are out of
/// range or whose datarate is negative are rejected and counted; null KPI
/// cells are retained as `None`.
pub fn load_traces(
    path: &Path,
    format: TraceFormat,
    config: &IngestConfig,
) -> Result<TraceCollection, TraceError> {
    match format {
        TraceFormat::Csv => load_csv(path, config),
    }
}

fn load_csv(path: &Path, config: &IngestConfig) -> Result<TraceCollection, TraceError> {
    if !path.exists() {
        return Err(TraceError::FileNotFound {
            path: path.display().to_string(),
        });
    }
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let headers = reader.headers()?.clone();
    let index_of = |name: &str| headers.iter().position(|h| h == name);

    let mut mandatory_idx = BTreeMap::new();
    let mut missing = Vec::new();
    for canonical in MANDATORY_COLUMNS {
        match index_of(config.source_column(canonical)) {
            Some(idx) => {
                mandatory_idx.insert(canonical, idx);
            }
            None => missing.push(canonical.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(TraceError::SchemaMismatch { missing });
    }
    let kpi_idx: BTreeMap<&str, Option<usize>> = KPI_COLUMNS
        .iter()
        .map(|&canonical| (canonical, index_of(config.source_column(canonical))))
        .collect();

    let mut samples = Vec::new();
    let mut rejected = 0usize;
    for record in reader.records() {
        let record = record?;
        match parse_row(&record, &mandatory_idx, &kpi_idx) {
            Some(sample) => samples.push(sample),
            None => rejected += 1,
        }
    }
    if samples.is_empty() {
        return Err(TraceError::EmptyCollection {
            path: path.display().to_string(),
            rejected,
        });
    }
    let mut collection = TraceCollection::from_samples(
        samples,
        Provenance {
            source: path.display().to_string(),
            filter: None,
        },
    );
    collection.rejected_rows += rejected;
    Ok(collection)
}

fn parse_row(
    record: &csv::StringRecord,
    mandatory_idx: &BTreeMap<&str, usize>,
    kpi_idx: &BTreeMap<&str, Option<usize>>,
) -> Option<TraceSample> {
    let field = |name: &str| -> Option<&str> {
        let value = record.get(*mandatory_idx.get(name)?)?.trim();
        if value.is_empty() {
            None
        } else {
            Some(value)
        }
    };
    let numeric = |name: &str| -> Option<f64> {
        let v: f64 = field(name)?.parse().ok()?;
        v.is_finite().then_some(v)
    };

    let latitude = numeric("latitude")?;
    let longitude = numeric("longitude")?;
    if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
        return None;
    }
    let datarate = numeric("datarate")?;
    if datarate < 0.0 {
        return None;
    }
    let mut sample = TraceSample {
        timestamp: numeric("timestamp")?,
        device_id: field("device_id")?.to_string(),
        measurement_id: field("measurement_id")?.parse().ok()?,
        operator_id: field("operator_id")?.parse().ok()?,
        direction: field("direction")?.parse().ok()?,
        target_datarate: numeric("target_datarate")?,
        latitude,
        longitude,
        speed: numeric("speed")?,
        datarate,
        kpis: KpiValues::default(),
    };
    for (&canonical, &idx) in kpi_idx {
        let value = idx
            .and_then(|i| record.get(i))
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite());
        sample.set_kpi(canonical, value);
    }
    Some(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(device: &str, measurement: u32, ts: f64) -> TraceSample {
        TraceSample {
            timestamp: ts,
            device_id: device.to_string(),
            measurement_id: measurement,
            operator_id: 1,
            direction: Direction::Downlink,
            target_datarate: 350_000.0,
            latitude: 52.52,
            longitude: 13.405,
            speed: 10.0,
            datarate: 1.0e7,
            kpis: KpiValues {
                pcell_snr_1: Some(12.0),
                ..KpiValues::default()
            },
        }
    }

    fn write_temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    const HEADER: &str = "timestamp,device_id,measurement_id,operator_id,direction,\
target_datarate,latitude,longitude,speed,datarate,PCell_SNR_1,PCell_SNR_2,\
PCell_RSRP_max,PCell_RSRQ_max,PCell_RSSI_max,PCell_Downlink_TB_Size,\
PCell_Downlink_Num_RBs,PCell_Downlink_Average_MCS,PCell_Downlink_Tx_Power";

    #[test]
    fn rejects_row_with_missing_mandatory_field() {
        let csv = format!(
            "{HEADER}\n\
             1.0,pc1,0,1,downlink,350000,52.52,13.405,10,1e7,12,,,,,,,,\n\
             2.0,pc1,0,1,downlink,350000,52.52,13.405,10,1e7,12,,,,,,,,\n\
             3.0,pc1,0,1,downlink,350000,,13.405,10,1e7,12,,,,,,,,\n\
             4.0,pc1,0,1,downlink,350000,52.52,13.405,10,1e7,12,,,,,,,,\n"
        );
        let f = write_temp_csv(&csv);
        let c = load_traces(f.path(), TraceFormat::Csv, &IngestConfig::default()).unwrap();
        assert_eq!(c.n_samples(), 3);
        assert_eq!(c.rejected_rows, 1);
    }

    #[test]
    fn missing_mandatory_column_is_schema_mismatch() {
        let csv = "timestamp,device_id\n1.0,pc1\n";
        let f = write_temp_csv(csv);
        let err = load_traces(f.path(), TraceFormat::Csv, &IngestConfig::default()).unwrap_err();
        match err {
            TraceError::SchemaMismatch { missing } => {
                assert!(missing.contains(&"latitude".to_string()));
            }
            other => panic!("expected SchemaMismatch, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_collection() {
        let f = write_temp_csv(&format!("{HEADER}\n"));
        let err = load_traces(f.path(), TraceFormat::Csv, &IngestConfig::default()).unwrap_err();
        assert!(matches!(err, TraceError::EmptyCollection { .. }));
    }

    #[test]
    fn missing_file_is_file_not_found() {
        let err = load_traces(
            Path::new("/nonexistent/trace.csv"),
            TraceFormat::Csv,
            &IngestConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TraceError::FileNotFound { .. }));
    }

    #[test]
    fn column_map_renames_headers() {
        let csv = "time_s,device_id,measurement_id,operator_id,direction,\
target_datarate,latitude,longitude,speed,datarate\n\
1.0,pc1,0,1,downlink,350000,52.52,13.405,10,1e7\n";
        let f = write_temp_csv(csv);
        let mut cfg = IngestConfig::default();
        cfg.column_map
            .insert("timestamp".to_string(), "time_s".to_string());
        let c = load_traces(f.path(), TraceFormat::Csv, &cfg).unwrap();
        assert_eq!(c.n_samples(), 1);
        // All KPI columns absent from the header: values must come back null.
        assert_eq!(c.iter_samples().next().unwrap().kpis, KpiValues::default());
    }

    #[test]
    fn filter_a3d_keeps_only_matching_rows() {
        let mut samples = Vec::new();
        for (op, target) in [(1u32, 350_000.0), (1, 400.0), (2, 350_000.0)] {
            for ts in 0..4 {
                let mut s = sample("pc1", op, ts as f64);
                s.operator_id = op;
                s.target_datarate = target;
                samples.push(s);
            }
        }
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let filtered = c.filter_scenario(&ScenarioFilter::a3d());
        assert_eq!(filtered.n_samples(), 4);
        assert!(filtered
            .iter_samples()
            .all(|s| s.operator_id == 1 && s.target_datarate == 350_000.0));
    }

    #[test]
    fn empty_filter_is_identity() {
        let samples = (0..5).map(|t| sample("pc1", 0, t as f64)).collect();
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let filtered = c.filter_scenario(&ScenarioFilter::default());
        assert_eq!(filtered.n_samples(), c.n_samples());
        assert_eq!(filtered.groups, c.groups);
    }

    #[test]
    fn measurement_id_filter_counts_groups() {
        let mut samples = Vec::new();
        for m in 0..5u32 {
            for t in 0..3 {
                samples.push(sample("pc1", m, t as f64));
            }
        }
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let filter = ScenarioFilter {
            measurement_ids: Some([0, 1, 2].into_iter().collect()),
            ..ScenarioFilter::default()
        };
        let filtered = c.filter_scenario(&filter);
        // Oracle: brute-force count of groups whose id is in the set.
        let expected = c
            .group_keys()
            .filter(|(m, _)| [0, 1, 2].contains(m))
            .count();
        assert_eq!(filtered.n_groups(), expected);
        assert_eq!(filtered.n_groups(), 3);
    }

    #[test]
    fn filter_output_is_exact_subset() {
        let mut samples = Vec::new();
        for op in 1..=2u32 {
            for t in 0..10 {
                let mut s = sample("pc1", 0, t as f64);
                s.operator_id = op;
                s.device_id = format!("pc{op}");
                samples.push(s);
            }
        }
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let filter = ScenarioFilter {
            operator_id: Some(2),
            ..ScenarioFilter::default()
        };
        let filtered = c.filter_scenario(&filter);
        assert!(filtered.iter_samples().all(|s| filter.matches(s)));
        let expected = c.iter_samples().filter(|s| filter.matches(s)).count();
        assert_eq!(filtered.n_samples(), expected);
    }

    #[test]
    fn split_assigns_roles_from_map() {
        let mut samples: Vec<TraceSample> = (0..5).map(|t| sample("pc1", 0, t as f64)).collect();
        samples.extend((0..7).map(|t| sample("pc4", 0, t as f64)));
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let mut roles = RoleMap::new();
        roles.insert(
            0,
            RoleEntry {
                lead: "pc1".to_string(),
                ego: None,
            },
        );
        let split = c.split_ego_lead(0, &roles).unwrap();
        assert_eq!(split.lead_device, "pc1");
        assert_eq!(split.ego_device, "pc4");
        assert_eq!(split.ego.len(), 7);
        assert_eq!(split.lead.len(), 5);
        // Partition property.
        assert_eq!(split.ego.len() + split.lead.len(), c.n_samples());
    }

    #[test]
    fn split_single_device_group_is_ambiguous() {
        let samples = (0..5).map(|t| sample("pc1", 0, t as f64)).collect();
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let mut roles = RoleMap::new();
        roles.insert(
            0,
            RoleEntry {
                lead: "pc1".to_string(),
                ego: None,
            },
        );
        let err = c.split_ego_lead(0, &roles).unwrap_err();
        assert!(matches!(err, TraceError::AmbiguousRoles { .. }));
    }

    #[test]
    fn split_without_role_entry_is_ambiguous() {
        let mut samples: Vec<TraceSample> = (0..5).map(|t| sample("pc1", 0, t as f64)).collect();
        samples.extend((0..5).map(|t| sample("pc4", 0, t as f64)));
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let err = c.split_ego_lead(0, &RoleMap::new()).unwrap_err();
        assert!(matches!(err, TraceError::AmbiguousRoles { .. }));
    }

    #[test]
    fn split_unknown_measurement() {
        let c = TraceCollection::from_samples(
            vec![sample("pc1", 0, 0.0)],
            Provenance::default(),
        );
        let err = c.split_ego_lead(9, &RoleMap::new()).unwrap_err();
        assert!(matches!(
            err,
            TraceError::UnknownMeasurement { measurement_id: 9 }
        ));
    }

    #[test]
    fn groups_are_sorted_and_deduplicated() {
        let samples = vec![
            sample("pc1", 0, 3.0),
            sample("pc1", 0, 1.0),
            sample("pc1", 0, 3.0),
            sample("pc1", 0, 2.0),
        ];
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let series = c.group(0, "pc1").unwrap();
        let ts: Vec<f64> = series.iter().map(|s| s.timestamp).collect();
        assert_eq!(ts, vec![1.0, 2.0, 3.0]);
        assert_eq!(c.rejected_rows, 1);
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let mut samples = Vec::new();
        for t in 0..20 {
            let mut s = sample("pc1", 0, t as f64 + 0.125);
            s.latitude += t as f64 * 1.7e-5;
            s.datarate = 1.0e7 + (t as f64) * 1013.77;
            s.kpis.pcell_rsrp_max = if t % 3 == 0 { None } else { Some(-95.5 + t as f64) };
            s.kpis.pcell_downlink_tb_size = Some(20_000.0 + t as f64 * 0.001);
            samples.push(s);
        }
        let c = TraceCollection::from_samples(samples, Provenance::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round_trip.csv");
        c.write_csv(&path).unwrap();
        let loaded = load_traces(&path, TraceFormat::Csv, &IngestConfig::default()).unwrap();
        assert_eq!(loaded.n_samples(), c.n_samples());
        for (a, b) in loaded.iter_samples().zip(c.iter_samples()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn preset_round_trips_through_json() {
        let cfg = IngestConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: IngestConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.scenario_presets["A3D"], ScenarioFilter::a3d());
    }
}
