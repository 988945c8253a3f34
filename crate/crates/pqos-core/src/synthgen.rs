//! Convoy trace generator with a shared, spatially correlated radio
//! environment.
//!
//! A lead vehicle traverses a route; an ego vehicle replays the identical
//! trajectory `headway` seconds later. Both devices experience the same
//! slow shadow-fading field along the route (exponentially correlated in arc
//! length), plus a deterministic path-loss ripple. Each device additionally
//! sees its own per-sample channel noise that pollutes every KPI it reports,
//! and the two devices compete for cell capacity: the ego's achieved datarate
//! drops when the lead's observed channel is good. Lead measurements are
//! therefore informative about the ego's datarate through two routes the ego
//! cannot see on its own — an independent second observation of the shared
//! field at (nearly) the same position, and the current state of the
//! competing link.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::trace_store::{
    Direction, KpiValues, Provenance, RoleEntry, RoleMap, TraceCollection, TraceSample,
};

/// Meters of meridian arc per degree of latitude.
const METERS_PER_DEG_LAT: f64 = 111_195.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Route geometry: an analytic circular loop or an explicit polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RouteSpec {
    Loop {
        center_lat: f64,
        center_lon: f64,
        radius_m: f64,
    },
    Waypoints { points: Vec<(f64, f64)> },
}

impl Default for RouteSpec {
    fn default() -> Self {
        RouteSpec::Loop {
            center_lat: 52.52,
            center_lon: 13.405,
            radius_m: 500.0,
        }
    }
}

/// Shadow-fading field parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    /// Exponential correlation length in meters: corr(d) = exp(-d / L).
    pub correlation_length_m: f64,
    /// Marginal standard deviation in dB.
    pub std_db: f64,
    /// Grid step for the stored field, meters.
    pub step_m: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            correlation_length_m: 80.0,
            std_db: 6.0,
            step_m: 1.0,
        }
    }
}

/// Base level, gain per dB of observed channel, and measurement noise std for
/// one reported KPI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiCoef {
    pub base: f64,
    pub gain: f64,
    pub noise_std: f64,
}

/// KPI link-model coefficients: observed channel → reported KPIs → datarate.
///
/// The achieved datarate of device `d` competing with device `o` in the same
/// cell is
///
/// ```text
/// y_d = base + gain * q_d - competition * x_o
///       + share * sigmoid((x_d - x_o) / tau) + noise
/// ```
///
/// where `q_d` is the true position channel (path loss + shared fading) and
/// `x_d = q_d + m_d + c(t)` is the channel the device observes and reports:
/// `m` is per-sample device noise and `c(t)` a cell-wide interference level
/// common to both devices at one instant. The sigmoid models
/// proportional-fair capacity sharing — the scheduler favors whichever device
/// reports the better channel — and the cell term cancels out of the
/// comparison, so relative (difference) features recover it noise-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    /// Datarate at neutral channel with no capacity share, bit/s.
    pub datarate_base: f64,
    /// Datarate slope per dB of the device's true position channel, bit/s.
    pub datarate_gain: f64,
    /// Datarate lost per dB of the competing device's observed channel,
    /// bit/s: the competitor's demand eats into the cell budget.
    pub competition_gain: f64,
    /// Capacity swing between losing and winning the scheduler share, bit/s.
    pub share_gain: f64,
    /// Softness of the share competition, dB.
    pub share_tau_db: f64,
    /// Intrinsic datarate noise std, bit/s.
    pub datarate_noise_std: f64,
    /// Per-sample device channel noise std in dB (fast fading and
    /// measurement error common to all of the device's KPIs at one instant).
    pub device_noise_std_db: f64,
    /// Std of the cell-wide interference level, dB.
    pub cell_noise_std_db: f64,
    /// Correlation time of the cell-wide interference, seconds.
    pub cell_corr_time_s: f64,
    /// Amplitude of the deterministic path-loss ripple along the route, dB.
    pub pathloss_amp_db: f64,
    pub snr_1: KpiCoef,
    pub snr_2: KpiCoef,
    pub rsrp_max: KpiCoef,
    pub rsrq_max: KpiCoef,
    pub rssi_max: KpiCoef,
    /// Transport block size per TTI tracks the link's throughput potential.
    pub tb_size: KpiCoef,
    pub num_rbs: KpiCoef,
    pub average_mcs: KpiCoef,
    pub tx_power: KpiCoef,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            datarate_base: 2.6e7,
            datarate_gain: 1.2e6,
            competition_gain: 8.0e4,
            share_gain: 3.0e6,
            share_tau_db: 1.5,
            datarate_noise_std: 5.0e5,
            device_noise_std_db: 2.5,
            cell_noise_std_db: 2.0,
            cell_corr_time_s: 10.0,
            pathloss_amp_db: 2.0,
            snr_1: KpiCoef { base: 14.0, gain: 0.9, noise_std: 1.2 },
            snr_2: KpiCoef { base: 12.5, gain: 0.85, noise_std: 1.2 },
            rsrp_max: KpiCoef { base: -95.0, gain: 1.0, noise_std: 0.3 },
            rsrq_max: KpiCoef { base: -11.0, gain: 0.35, noise_std: 0.8 },
            rssi_max: KpiCoef { base: -65.0, gain: 0.95, noise_std: 0.6 },
            tb_size: KpiCoef { base: 2.6e4, gain: 1.2e3, noise_std: 2.6e2 },
            num_rbs: KpiCoef { base: 180.0, gain: 4.0, noise_std: 6.0 },
            average_mcs: KpiCoef { base: 15.0, gain: 0.8, noise_std: 0.8 },
            tx_power: KpiCoef { base: -10.0, gain: 0.2, noise_std: 0.5 },
        }
    }
}

/// Speed profile: slow sinusoidal variation around a mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedConfig {
    pub mean_mps: f64,
    /// Relative amplitude of the variation.
    pub variation: f64,
    pub period_s: f64,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig {
            mean_mps: 10.0,
            variation: 0.15,
            period_s: 300.0,
        }
    }
}

/// Full generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub route: RouteSpec,
    /// Lead logging window is `[0, duration_s)`; the ego logs from
    /// `headway_s` onward.
    pub duration_s: f64,
    pub sample_period_s: f64,
    /// Seconds by which the lead precedes the ego on the route.
    pub headway_s: f64,
    /// GPS jitter std applied to the ego's reported position, meters.
    pub lateral_jitter_m: f64,
    pub field: FieldConfig,
    pub link: LinkConfig,
    pub speed: SpeedConfig,
    pub operator_id: u32,
    pub measurement_id: u32,
    pub direction: Direction,
    pub target_datarate_kbps: f64,
    pub lead_device: String,
    pub ego_device: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            route: RouteSpec::default(),
            duration_s: 8700.0,
            sample_period_s: 1.0,
            headway_s: 60.0,
            lateral_jitter_m: 3.0,
            field: FieldConfig::default(),
            link: LinkConfig::default(),
            speed: SpeedConfig::default(),
            operator_id: 1,
            measurement_id: 0,
            direction: Direction::Downlink,
            target_datarate_kbps: 350_000.0,
            lead_device: "pc1".to_string(),
            ego_device: "pc4".to_string(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sample_period_s <= 0.0 {
            return Err(SynthError::InvalidConfig("sample period must be > 0".into()));
        }
        if self.duration_s <= self.headway_s + 120.0 {
            return Err(SynthError::InvalidConfig(
                "duration must exceed headway + 120 s".into(),
            ));
        }
        if self.field.correlation_length_m <= 0.0 || self.field.step_m <= 0.0 {
            return Err(SynthError::InvalidConfig(
                "field correlation length and step must be > 0".into(),
            ));
        }
        if self.field.std_db < 0.0 || self.lateral_jitter_m < 0.0 {
            return Err(SynthError::InvalidConfig("stds must be >= 0".into()));
        }
        Ok(())
    }
}

/// One-dimensional Gauss–Markov shadow-fading process indexed by arc length.
/// Queries interpolate linearly between grid points, so two devices at the
/// same position always read the same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingField {
    pub step_m: f64,
    pub length_m: f64,
    pub values: Vec<f64>,
}

impl FadingField {
    /// Generate a field of `length_m` meters with corr(d) = exp(-d/L) and the
    /// given marginal std.
    pub fn generate(
        length_m: f64,
        step_m: f64,
        correlation_length_m: f64,
        std_db: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let n = (length_m / step_m).ceil().max(1.0) as usize;
        let rho = (-step_m / correlation_length_m).exp();
        let innovation = std_db * (1.0 - rho * rho).sqrt();
        let mut values = Vec::with_capacity(n);
        let mut current = std_db * rng.sample::<f64, _>(StandardNormal);
        values.push(current);
        for _ in 1..n {
            current = rho * current + innovation * rng.sample::<f64, _>(StandardNormal);
            values.push(current);
        }
        FadingField {
            step_m,
            length_m,
            values,
        }
    }

    /// Field value at an arc position; positions wrap around the route.
    pub fn value_at(&self, arc_m: f64) -> f64 {
        if self.values.len() == 1 {
            return self.values[0];
        }
        let arc = arc_m.rem_euclid(self.length_m.max(self.step_m));
        let x = arc / self.step_m;
        let k = (x.floor() as usize).min(self.values.len() - 1);
        let next = (k + 1).min(self.values.len() - 1);
        let frac = x - k as f64;
        self.values[k] * (1.0 - frac) + self.values[next] * frac
    }
}

/// Route geometry resolved to an arc-length parameterization.
#[derive(Debug, Clone)]
pub struct Route {
    spec: RouteSpec,
    /// Cumulative chord lengths for the waypoints variant.
    cumulative_m: Vec<f64>,
    pub circumference_m: f64,
}

impl Route {
    pub fn new(spec: &RouteSpec) -> Result<Self, SynthError> {
        match spec {
            RouteSpec::Loop { radius_m, .. } => {
                if *radius_m <= 0.0 {
                    return Err(SynthError::InvalidConfig("loop radius must be > 0".into()));
                }
                Ok(Route {
                    spec: spec.clone(),
                    cumulative_m: Vec::new(),
                    circumference_m: 2.0 * std::f64::consts::PI * radius_m,
                })
            }
            RouteSpec::Waypoints { points } => {
                if points.len() < 2 {
                    return Err(SynthError::InvalidConfig(
                        "waypoint route needs at least 2 points".into(),
                    ));
                }
                let mut cumulative = vec![0.0];
                let mut total = 0.0;
                // Closed polyline: the last segment returns to the start.
                for i in 0..points.len() {
                    let a = points[i];
                    let b = points[(i + 1) % points.len()];
                    total += crate::align::geodesic_distance(a, b)
                        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
                    cumulative.push(total);
                }
                if total <= 0.0 {
                    return Err(SynthError::InvalidConfig("route has zero length".into()));
                }
                Ok(Route {
                    spec: spec.clone(),
                    cumulative_m: cumulative,
                    circumference_m: total,
                })
            }
        }
    }

    /// Position (lat, lon) at an arc length; wraps around the loop.
    pub fn position_at(&self, arc_m: f64) -> (f64, f64) {
        let arc = arc_m.rem_euclid(self.circumference_m);
        match &self.spec {
            RouteSpec::Loop {
                center_lat,
                center_lon,
                radius_m,
            } => {
                let theta = arc / radius_m;
                let north = radius_m * theta.cos();
                let east = radius_m * theta.sin();
                let lat = center_lat + north / METERS_PER_DEG_LAT;
                let lon =
                    center_lon + east / (METERS_PER_DEG_LAT * center_lat.to_radians().cos());
                (lat, lon)
            }
            RouteSpec::Waypoints { points } => {
                let seg = match self
                    .cumulative_m
                    .windows(2)
                    .position(|w| arc >= w[0] && arc < w[1])
                {
                    Some(i) => i,
                    None => points.len() - 1,
                };
                let a = points[seg];
                let b = points[(seg + 1) % points.len()];
                let seg_len = self.cumulative_m[seg + 1] - self.cumulative_m[seg];
                let frac = if seg_len > 0.0 {
                    (arc - self.cumulative_m[seg]) / seg_len
                } else {
                    0.0
                };
                (
                    a.0 + (b.0 - a.0) * frac,
                    a.1 + (b.1 - a.1) * frac,
                )
            }
        }
    }
}

/// Everything needed to audit or replay a generated scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub role_map: RoleMap,
    pub field: FadingField,
    pub route_circumference_m: f64,
}

/// Generate the shared fading field for a config's route.
pub fn generate_field(cfg: &SynthConfig) -> Result<FadingField, SynthError> {
    cfg.validate()?;
    let route = Route::new(&cfg.route)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(FadingField::generate(
        route.circumference_m,
        cfg.field.step_m,
        cfg.field.correlation_length_m,
        cfg.field.std_db,
        &mut rng,
    ))
}

/// Generate a two-device convoy collection plus its ground truth.
pub fn generate_traces(cfg: &SynthConfig) -> Result<(TraceCollection, GroundTruth), SynthError> {
    cfg.validate()?;
    let route = Route::new(&cfg.route)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let field = FadingField::generate(
        route.circumference_m,
        cfg.field.step_m,
        cfg.field.correlation_length_m,
        cfg.field.std_db,
        &mut rng,
    );

    let speed_at = |t: f64| -> f64 {
        cfg.speed.mean_mps
            * (1.0
                + cfg.speed.variation
                    * (2.0 * std::f64::consts::PI * t / cfg.speed.period_s).sin())
    };
    // Arc position of the lead: closed-form integral of the speed profile.
    let arc_at = |t: f64| -> f64 {
        let w = 2.0 * std::f64::consts::PI / cfg.speed.period_s;
        cfg.speed.mean_mps * (t + cfg.speed.variation / w * (1.0 - (w * t).cos()))
    };
    let pathloss_at = |arc: f64| -> f64 {
        cfg.link.pathloss_amp_db
            * (2.0 * std::f64::consts::PI * arc.rem_euclid(route.circumference_m)
                / route.circumference_m)
                .sin()
    };

    let n_steps = (cfg.duration_s / cfg.sample_period_s).floor() as usize;
    let jitter_deg_lat = cfg.lateral_jitter_m / METERS_PER_DEG_LAT;

    // Cell-wide interference: OU in time, shared by both devices.
    let cell_rho = (-cfg.sample_period_s / cfg.link.cell_corr_time_s.max(1e-9)).exp();
    let cell_innovation = cfg.link.cell_noise_std_db * (1.0 - cell_rho * cell_rho).sqrt();
    let mut cell: f64 = cfg.link.cell_noise_std_db * rng.sample::<f64, _>(StandardNormal);

    let mut samples = Vec::new();
    for step in 0..n_steps {
        let t = step as f64 * cfg.sample_period_s;
        let ego_active = t >= cfg.headway_s;

        // Channel states. Noise draws happen in a fixed order per step so the
        // output is bit-reproducible under a fixed seed.
        if step > 0 {
            cell = cell_rho * cell + cell_innovation * rng.sample::<f64, _>(StandardNormal);
        }
        let lead_arc = arc_at(t);
        let lead_q = pathloss_at(lead_arc) + field.value_at(lead_arc);
        let lead_m: f64 =
            cfg.link.device_noise_std_db * rng.sample::<f64, _>(StandardNormal);
        let lead_x = lead_q + lead_m + cell;

        let ego_arc = arc_at(t - cfg.headway_s);
        let ego_q = pathloss_at(ego_arc) + field.value_at(ego_arc);
        let ego_m: f64 = cfg.link.device_noise_std_db * rng.sample::<f64, _>(StandardNormal);
        let ego_x = ego_q + ego_m + cell;

        // Lead sample.
        {
            let (lat, lon) = route.position_at(lead_arc);
            let competitor = ego_active.then_some(ego_x);
            let sample = build_sample(
                cfg,
                &cfg.lead_device,
                t,
                lat,
                lon,
                speed_at(t),
                lead_q,
                lead_x,
                competitor,
                &mut rng,
            );
            samples.push(sample);
        }
        // Ego sample, with GPS jitter on the reported position only.
        if ego_active {
            let (lat, lon) = route.position_at(ego_arc);
            let jit_lat: f64 = jitter_deg_lat * rng.sample::<f64, _>(StandardNormal);
            let jit_lon: f64 = jitter_deg_lat * rng.sample::<f64, _>(StandardNormal)
                / (52.52f64).to_radians().cos();
            let sample = build_sample(
                cfg,
                &cfg.ego_device,
                t,
                lat + jit_lat,
                lon + jit_lon,
                speed_at(t - cfg.headway_s),
                ego_q,
                ego_x,
                Some(lead_x),
                &mut rng,
            );
            samples.push(sample);
        }
    }

    let mut role_map = RoleMap::new();
    role_map.insert(
        cfg.measurement_id,
        RoleEntry {
            lead: cfg.lead_device.clone(),
            ego: Some(cfg.ego_device.clone()),
        },
    );
    let collection = TraceCollection::from_samples(
        samples,
        Provenance {
            source: format!("synthgen(seed={})", cfg.seed),
            filter: None,
        },
    );
    let truth = GroundTruth {
        config: cfg.clone(),
        role_map,
        route_circumference_m: route.circumference_m,
        field,
    };
    Ok((collection, truth))
}

#[allow(clippy::too_many_arguments)]
fn build_sample(
    cfg: &SynthConfig,
    device: &str,
    t: f64,
    lat: f64,
    lon: f64,
    speed: f64,
    q: f64,
    x: f64,
    competitor_x: Option<f64>,
    rng: &mut impl Rng,
) -> TraceSample {
    let link = &cfg.link;
    let mut noise = |std: f64| -> f64 { std * rng.sample::<f64, _>(StandardNormal) };
    let kpi = |c: &KpiCoef, n: f64| -> f64 { c.base + c.gain * x + n };

    let snr_1 = kpi(&link.snr_1, noise(link.snr_1.noise_std));
    let snr_2 = kpi(&link.snr_2, noise(link.snr_2.noise_std));
    let rsrp = kpi(&link.rsrp_max, noise(link.rsrp_max.noise_std));
    let rsrq = kpi(&link.rsrq_max, noise(link.rsrq_max.noise_std));
    let rssi = kpi(&link.rssi_max, noise(link.rssi_max.noise_std));
    let tb = kpi(&link.tb_size, noise(link.tb_size.noise_std)).max(0.0);
    let rbs = kpi(&link.num_rbs, noise(link.num_rbs.noise_std))
        .round()
        .clamp(1.0, 273.0);
    let mcs = kpi(&link.average_mcs, noise(link.average_mcs.noise_std))
        .round()
        .clamp(0.0, 28.0);
    let tx_power = kpi(&link.tx_power, noise(link.tx_power.noise_std));

    // Capacity share: a device alone in the cell gets the full share and
    // faces no competing demand.
    let (share, competing) = match competitor_x {
        Some(other) => (1.0 / (1.0 + (-(x - other) / link.share_tau_db).exp()), other),
        None => (1.0, 0.0),
    };
    let datarate = (link.datarate_base
        + link.datarate_gain * q
        - link.competition_gain * competing
        + link.share_gain * share
        + noise(link.datarate_noise_std))
    .clamp(0.0, cfg.target_datarate_kbps * 1000.0);

    TraceSample {
        timestamp: t,
        device_id: device.to_string(),
        measurement_id: cfg.measurement_id,
        operator_id: cfg.operator_id,
        direction: cfg.direction,
        target_datarate: cfg.target_datarate_kbps,
        latitude: lat,
        longitude: lon,
        speed,
        datarate,
        kpis: KpiValues {
            pcell_snr_1: Some(snr_1),
            pcell_snr_2: Some(snr_2),
            pcell_rsrp_max: Some(rsrp),
            pcell_rsrq_max: Some(rsrq),
            pcell_rssi_max: Some(rssi),
            pcell_downlink_tb_size: Some(tb),
            pcell_downlink_num_rbs: Some(rbs),
            pcell_downlink_average_mcs: Some(mcs),
            pcell_downlink_tx_power: Some(tx_power),
        },
    }
}
