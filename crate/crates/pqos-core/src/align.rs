//! Temporal and spatial joins between ego and lead series.
//!
//! Temporal alignment pairs samples taken at (nearly) the same wall-clock
//! time. Spatial alignment pairs an ego sample with the lead sample recorded
//! *earlier* at (nearly) the same geographic position, binned by how far back
//! in time the lead's visit lies. Every pair carries the deltas in time,
//! geodesic distance and speed between the two samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace_store::TraceSample;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("offset bins must be non-overlapping and ascending")]
    InvalidBins,
    #[error("distance threshold must satisfy 0 <= lower <= upper")]
    InvalidThreshold,
}

/// An ego sample joined to a lead sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub ego: TraceSample,
    pub lead: TraceSample,
    /// Magnitude of the temporal gap between the two samples, seconds.
    pub delta_t: f64,
    /// Geodesic distance between the two positions, meters.
    pub delta_s: f64,
    /// Ego speed minus lead speed, m/s.
    pub delta_v: f64,
}

impl AlignedPair {
    fn new(ego: &TraceSample, lead: &TraceSample) -> Self {
        let delta_s = geodesic_distance(
            (ego.latitude, ego.longitude),
            (lead.latitude, lead.longitude),
        )
        .unwrap_or(f64::INFINITY);
        AlignedPair {
            delta_t: (ego.timestamp - lead.timestamp).abs(),
            delta_s,
            delta_v: ego.speed - lead.speed,
            ego: ego.clone(),
            lead: lead.clone(),
        }
    }
}

/// One `[start, end)` time-offset window, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetBin {
    pub start_minutes: f64,
    pub end_minutes: f64,
}

impl OffsetBin {
    pub fn new(start_minutes: f64, end_minutes: f64) -> Self {
        OffsetBin {
            start_minutes,
            end_minutes,
        }
    }

    /// Whether a temporal gap in seconds falls inside this bin.
    pub fn contains_gap(&self, gap_seconds: f64) -> bool {
        gap_seconds >= self.start_minutes * 60.0 && gap_seconds < self.end_minutes * 60.0
    }

    pub fn label(&self) -> String {
        format!("{}-{}min", self.start_minutes, self.end_minutes)
    }
}

/// Spatial alignment parameters: the accepted distance interval between the
/// two positions and the time-offset bins to search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialAlignSpec {
    /// Inclusive `[lower, upper]` distance window in meters.
    pub distance_m: (f64, f64),
    pub bins: Vec<OffsetBin>,
}

impl Default for SpatialAlignSpec {
    fn default() -> Self {
        SpatialAlignSpec {
            distance_m: (0.0, 20.0),
            bins: vec![OffsetBin::new(0.0, 1.0), OffsetBin::new(1.0, 2.0)],
        }
    }
}

impl SpatialAlignSpec {
    pub fn validate(&self) -> Result<(), AlignError> {
        let (lo, hi) = self.distance_m;
        if !(0.0..=f64::INFINITY).contains(&lo) || hi < lo {
            return Err(AlignError::InvalidThreshold);
        }
        for w in self.bins.windows(2) {
            if w[0].end_minutes > w[1].start_minutes {
                return Err(AlignError::InvalidBins);
            }
        }
        if self.bins.iter().any(|b| b.end_minutes <= b.start_minutes) {
            return Err(AlignError::InvalidBins);
        }
        Ok(())
    }
}

/// Great-circle (haversine) distance in meters on a sphere of mean Earth
/// radius. At convoy scales (tens of meters) the spherical error against an
/// ellipsoidal geodesic is below 0.5%, far under GPS noise.
pub fn geodesic_distance(p1: (f64, f64), p2: (f64, f64)) -> Result<f64, AlignError> {
    for &(lat, lon) in &[p1, p2] {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(AlignError::InvalidCoordinate { lat, lon });
        }
    }
    let (lat1, lon1) = (p1.0.to_radians(), p1.1.to_radians());
    let (lat2, lon2) = (p2.0.to_radians(), p2.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let c = 2.0 * a.sqrt().atan2((1.0 - a).sqrt());
    Ok(EARTH_RADIUS_M * c)
}

/// Result of [`temporal_align`].
#[derive(Debug, Clone)]
pub struct TemporalAlignment {
    pub pairs: Vec<AlignedPair>,
    /// Ego samples with no lead sample inside the tolerance.
    pub unmatched_ego: usize,
}

/// Match each ego sample to the lead sample with the smallest timestamp
/// difference within `tolerance` seconds. Both series must be sorted; the
/// matching is a monotone two-pointer sweep, so each lead sample is used at
/// most once.
pub fn temporal_align(
    ego: &[TraceSample],
    lead: &[TraceSample],
    tolerance: f64,
) -> TemporalAlignment {
    let mut pairs = Vec::new();
    let mut unmatched = 0usize;
    let mut j = 0usize;
    for e in ego {
        if j >= lead.len() {
            unmatched += 1;
            continue;
        }
        while j + 1 < lead.len()
            && (lead[j + 1].timestamp - e.timestamp).abs() < (lead[j].timestamp - e.timestamp).abs()
        {
            j += 1;
        }
        if (lead[j].timestamp - e.timestamp).abs() <= tolerance {
            pairs.push(AlignedPair::new(e, &lead[j]));
            j += 1;
        } else {
            unmatched += 1;
        }
    }
    TemporalAlignment {
        pairs,
        unmatched_ego: unmatched,
    }
}

/// Pairs for one offset bin.
#[derive(Debug, Clone)]
pub struct BinAlignment {
    pub bin: OffsetBin,
    pub pairs: Vec<AlignedPair>,
}

/// Result of [`spatial_align`], one entry per configured bin in spec order.
/// An empty bin stays present so callers can report the lack of data.
#[derive(Debug, Clone)]
pub struct SpatialAlignment {
    pub bins: Vec<BinAlignment>,
}

impl SpatialAlignment {
    pub fn pair_counts(&self) -> Vec<(String, usize)> {
        self.bins
            .iter()
            .map(|b| (b.bin.label(), b.pairs.len()))
            .collect()
    }
}

/// For each offset bin and each ego sample, select the geodesically closest
/// lead sample recorded `gap` seconds earlier with `gap` inside the bin and
/// the distance inside the threshold window. Ties break on smaller temporal
/// gap, then earlier lead timestamp. At most one pair per ego sample per bin;
/// a lead sample may serve several ego samples.
pub fn spatial_align(
    ego: &[TraceSample],
    lead: &[TraceSample],
    spec: &SpatialAlignSpec,
) -> Result<SpatialAlignment, AlignError> {
    spec.validate()?;
    let (dist_lo, dist_hi) = spec.distance_m;
    let mut bins = Vec::with_capacity(spec.bins.len());
    for &bin in &spec.bins {
        let gap_lo = bin.start_minutes * 60.0;
        let gap_hi = bin.end_minutes * 60.0;
        let mut pairs = Vec::new();
        // Candidate window [lo, hi) over the sorted lead series: samples with
        // e.ts - l.ts in [gap_lo, gap_hi), i.e. l.ts in (e.ts - gap_hi, e.ts - gap_lo].
        let mut lo = 0usize;
        let mut hi = 0usize;
        for e in ego {
            while lo < lead.len() && lead[lo].timestamp <= e.timestamp - gap_hi {
                lo += 1;
            }
            if hi < lo {
                hi = lo;
            }
            while hi < lead.len() && lead[hi].timestamp <= e.timestamp - gap_lo {
                hi += 1;
            }
            let mut best: Option<AlignedPair> = None;
            for l in &lead[lo..hi] {
                let gap = e.timestamp - l.timestamp;
                if !(gap >= gap_lo && gap < gap_hi) {
                    continue;
                }
                let d = geodesic_distance((e.latitude, e.longitude), (l.latitude, l.longitude))?;
                if d < dist_lo || d > dist_hi {
                    continue;
                }
                let candidate = AlignedPair::new(e, l);
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (candidate.delta_s, candidate.delta_t, l.timestamp)
                            .partial_cmp(&(b.delta_s, b.delta_t, b.lead.timestamp))
                            == Some(std::cmp::Ordering::Less)
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
            if let Some(pair) = best {
                pairs.push(pair);
            }
        }
        bins.push(BinAlignment { bin, pairs });
    }
    Ok(SpatialAlignment { bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_store::{Direction, KpiValues};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn at(ts: f64, lat: f64, lon: f64, speed: f64) -> TraceSample {
        TraceSample {
            timestamp: ts,
            device_id: "pc1".into(),
            measurement_id: 0,
            operator_id: 1,
            direction: Direction::Downlink,
            target_datarate: 350_000.0,
            latitude: lat,
            longitude: lon,
            speed,
            datarate: 1e7,
            kpis: KpiValues::default(),
        }
    }

    #[test]
    fn distance_identical_points_is_zero() {
        assert_eq!(
            geodesic_distance((52.52, 13.405), (52.52, 13.405)).unwrap(),
            0.0
        );
    }

    #[test]
    fn distance_small_meridian_arc() {
        // Oracle: 1e-4 degrees of latitude ≈ 11.1195 m of meridian arc.
        let d = geodesic_distance((52.5200, 13.4050), (52.5201, 13.4050)).unwrap();
        let oracle = 1.0e-4 * 111_195.0;
        assert!((d - oracle).abs() / oracle < 0.01, "d = {d}");
    }

    #[test]
    fn distance_equatorial_degree() {
        // Oracle: one equatorial degree = pi * R / 180.
        let d = geodesic_distance((0.0, 0.0), (0.0, 1.0)).unwrap();
        let oracle = std::f64::consts::PI * EARTH_RADIUS_M / 180.0;
        assert!((d - oracle).abs() / oracle < 0.005, "d = {d}");
        assert!((d - 111_195.0).abs() / 111_195.0 < 0.005);
    }

    #[test]
    fn distance_rejects_bad_coordinates() {
        assert!(matches!(
            geodesic_distance((91.0, 0.0), (0.0, 0.0)),
            Err(AlignError::InvalidCoordinate { .. })
        ));
        assert!(matches!(
            geodesic_distance((0.0, 0.0), (0.0, 190.0)),
            Err(AlignError::InvalidCoordinate { .. })
        ));
    }

    #[test]
    fn distance_symmetry_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let p: Vec<(f64, f64)> = (0..3)
                .map(|_| (rng.gen_range(-89.0..89.0), rng.gen_range(-179.0..179.0)))
                .collect();
            let ab = geodesic_distance(p[0], p[1]).unwrap();
            let ba = geodesic_distance(p[1], p[0]).unwrap();
            let bc = geodesic_distance(p[1], p[2]).unwrap();
            let ac = geodesic_distance(p[0], p[2]).unwrap();
            assert!((ab - ba).abs() <= 1e-6 * ab.max(1.0));
            assert!(ac <= ab + bc + 1e-6 * (ab + bc).max(1.0));
        }
    }

    #[test]
    fn temporal_identical_grids_pair_everything() {
        let ego: Vec<TraceSample> = (0..50).map(|t| at(t as f64, 52.52, 13.4, 10.0)).collect();
        let lead: Vec<TraceSample> = (0..50).map(|t| at(t as f64, 52.521, 13.4, 12.0)).collect();
        let out = temporal_align(&ego, &lead, 0.5);
        assert_eq!(out.pairs.len(), 50);
        assert_eq!(out.unmatched_ego, 0);
        assert!(out.pairs.iter().all(|p| p.delta_t == 0.0));
        assert!(out.pairs.iter().all(|p| (p.delta_v - (-2.0)).abs() < 1e-12));
    }

    /// Exhaustive pairing oracle: for each ego sample pick the globally
    /// nearest-in-time lead sample, consuming leads in order.
    fn temporal_oracle(ego: &[TraceSample], lead: &[TraceSample], tol: f64) -> Vec<(f64, f64)> {
        let mut used = vec![false; lead.len()];
        let mut out = Vec::new();
        for e in ego {
            let mut best: Option<(usize, f64)> = None;
            for (j, l) in lead.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let d = (l.timestamp - e.timestamp).abs();
                if d <= tol && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            if let Some((j, _)) = best {
                used[j] = true;
                out.push((e.timestamp, lead[j].timestamp));
            }
        }
        out
    }

    #[test]
    fn temporal_shifted_grid_within_tolerance() {
        let ego: Vec<TraceSample> = (0..40).map(|t| at(t as f64, 52.52, 13.4, 10.0)).collect();
        let lead: Vec<TraceSample> = (0..40)
            .map(|t| at(t as f64 + 0.4, 52.52, 13.4, 10.0))
            .collect();
        let out = temporal_align(&ego, &lead, 0.5);
        assert_eq!(out.pairs.len(), 40);
        assert!(out.pairs.iter().all(|p| (p.delta_t - 0.4).abs() < 1e-12));
        let oracle = temporal_oracle(&ego, &lead, 0.5);
        let got: Vec<(f64, f64)> = out
            .pairs
            .iter()
            .map(|p| (p.ego.timestamp, p.lead.timestamp))
            .collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn temporal_shift_beyond_tolerance_matches_nothing() {
        let ego: Vec<TraceSample> = (0..30).map(|t| at(t as f64 * 4.0, 52.52, 13.4, 10.0)).collect();
        let lead: Vec<TraceSample> = (0..30)
            .map(|t| at(t as f64 * 4.0 + 2.0, 52.52, 13.4, 10.0))
            .collect();
        let out = temporal_align(&ego, &lead, 0.5);
        assert!(out.pairs.is_empty());
        assert_eq!(out.unmatched_ego, 30);
    }

    /// Move `meters` north from a latitude, in degrees.
    fn north_deg(meters: f64) -> f64 {
        meters / 111_195.0
    }

    #[test]
    fn spatial_retrace_lands_in_second_bin() {
        // Lead drives a line; ego retraces the identical coordinates 90 s later.
        let lead: Vec<TraceSample> = (0..200)
            .map(|t| at(t as f64, 52.50 + north_deg(10.0 * t as f64), 13.4, 10.0))
            .collect();
        let ego: Vec<TraceSample> = (0..200)
            .map(|t| {
                at(
                    t as f64 + 90.0,
                    52.50 + north_deg(10.0 * t as f64),
                    13.4,
                    10.0,
                )
            })
            .collect();
        let out = spatial_align(&ego, &lead, &SpatialAlignSpec::default()).unwrap();
        assert_eq!(out.bins[0].bin.label(), "0-1min");
        assert!(out.bins[0].pairs.is_empty(), "0-1 min bin must be empty");
        assert_eq!(out.bins[1].pairs.len(), 200);
        assert!(out.bins[1].pairs.iter().all(|p| p.delta_s == 0.0));
        assert!(out.bins[1]
            .pairs
            .iter()
            .all(|p| (p.delta_t - 90.0).abs() < 1e-9));
    }

    #[test]
    fn spatial_lateral_offset_beyond_threshold_is_empty() {
        let lead: Vec<TraceSample> = (0..100)
            .map(|t| at(t as f64, 52.50 + north_deg(10.0 * t as f64), 13.4, 10.0))
            .collect();
        // Ego runs a parallel track 25 m east.
        let east = 25.0 / (111_195.0 * (52.5f64).to_radians().cos());
        let ego: Vec<TraceSample> = (0..100)
            .map(|t| {
                at(
                    t as f64 + 90.0,
                    52.50 + north_deg(10.0 * t as f64),
                    13.4 + east,
                    10.0,
                )
            })
            .collect();
        let out = spatial_align(&ego, &lead, &SpatialAlignSpec::default()).unwrap();
        assert!(out.bins.iter().all(|b| b.pairs.is_empty()));
    }

    /// O(n*m) all-pairs oracle with the same tie-breaking.
    fn spatial_oracle(
        ego: &[TraceSample],
        lead: &[TraceSample],
        spec: &SpatialAlignSpec,
    ) -> Vec<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        for bin in &spec.bins {
            let mut pairs = Vec::new();
            for e in ego {
                let mut best: Option<(f64, f64, f64)> = None;
                for l in lead {
                    let gap = e.timestamp - l.timestamp;
                    if !bin.contains_gap(gap) {
                        continue;
                    }
                    let d =
                        geodesic_distance((e.latitude, e.longitude), (l.latitude, l.longitude))
                            .unwrap();
                    if d < spec.distance_m.0 || d > spec.distance_m.1 {
                        continue;
                    }
                    let key = (d, gap, l.timestamp);
                    if best.is_none_or(|b| key < b) {
                        best = Some(key);
                    }
                }
                if let Some((_, _, lead_ts)) = best {
                    pairs.push((e.timestamp, lead_ts));
                }
            }
            out.push(pairs);
        }
        out
    }

    #[test]
    fn spatial_matches_brute_force_on_random_convoys() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for scenario in 0..8 {
            let n = 300 + scenario * 50;
            let speed = rng.gen_range(5.0..15.0);
            let headway = rng.gen_range(20.0..100.0);
            let lead: Vec<TraceSample> = (0..n)
                .map(|t| {
                    let jitter = north_deg(rng.gen_range(-4.0..4.0));
                    at(
                        t as f64,
                        52.50 + north_deg(speed * t as f64) + jitter,
                        13.4,
                        speed,
                    )
                })
                .collect();
            let ego: Vec<TraceSample> = (0..n)
                .map(|t| {
                    let jitter = north_deg(rng.gen_range(-4.0..4.0));
                    at(
                        t as f64 + headway,
                        52.50 + north_deg(speed * t as f64) + jitter,
                        13.4,
                        speed,
                    )
                })
                .collect();
            let spec = SpatialAlignSpec::default();
            let fast = spatial_align(&ego, &lead, &spec).unwrap();
            let slow = spatial_oracle(&ego, &lead, &spec);
            for (b, oracle_pairs) in fast.bins.iter().zip(&slow) {
                let got: Vec<(f64, f64)> = b
                    .pairs
                    .iter()
                    .map(|p| (p.ego.timestamp, p.lead.timestamp))
                    .collect();
                assert_eq!(&got, oracle_pairs, "scenario {scenario}");
            }
        }
    }

    #[test]
    fn spatial_convoy_recall_in_first_bin() {
        // 30 s headway, ~5 m jitter: nearly every ego sample must find a pair
        // in the 0-1 min bin.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 500;
        let lead: Vec<TraceSample> = (0..n)
            .map(|t| at(t as f64, 52.50 + north_deg(10.0 * t as f64), 13.4, 10.0))
            .collect();
        let ego: Vec<TraceSample> = (0..n)
            .map(|t| {
                let jitter = north_deg(rng.gen_range(-5.0..5.0));
                at(
                    t as f64 + 30.0,
                    52.50 + north_deg(10.0 * t as f64) + jitter,
                    13.4,
                    10.0,
                )
            })
            .collect();
        let out = spatial_align(&ego, &lead, &SpatialAlignSpec::default()).unwrap();
        assert!(out.bins[0].pairs.len() * 100 >= 95 * n);
    }

    #[test]
    fn emitted_pairs_satisfy_bin_and_threshold_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 400;
        let lead: Vec<TraceSample> = (0..n)
            .map(|t| {
                at(
                    t as f64,
                    52.50 + north_deg(8.0 * t as f64 + rng.gen_range(-6.0..6.0)),
                    13.4,
                    8.0,
                )
            })
            .collect();
        let ego: Vec<TraceSample> = (0..n)
            .map(|t| {
                at(
                    t as f64 + 70.0,
                    52.50 + north_deg(8.0 * t as f64 + rng.gen_range(-6.0..6.0)),
                    13.4,
                    8.0,
                )
            })
            .collect();
        let spec = SpatialAlignSpec::default();
        let out = spatial_align(&ego, &lead, &spec).unwrap();
        for b in &out.bins {
            for p in &b.pairs {
                assert!(p.delta_s >= spec.distance_m.0 && p.delta_s <= spec.distance_m.1);
                assert!(b.bin.contains_gap(p.delta_t));
            }
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SpatialAlignSpec {
            distance_m: (5.0, 1.0),
            ..SpatialAlignSpec::default()
        };
        assert_eq!(spec.validate(), Err(AlignError::InvalidThreshold));
        let spec = SpatialAlignSpec {
            distance_m: (0.0, 20.0),
            bins: vec![OffsetBin::new(0.0, 2.0), OffsetBin::new(1.0, 3.0)],
        };
        assert_eq!(spec.validate(), Err(AlignError::InvalidBins));
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn haversine_is_symmetric_and_nonnegative(
            lat1 in -90.0f64..90.0, lon1 in -180.0f64..180.0,
            lat2 in -90.0f64..90.0, lon2 in -180.0f64..180.0
        ) {
            let ab = geodesic_distance((lat1, lon1), (lat2, lon2)).unwrap();
            let ba = geodesic_distance((lat2, lon2), (lat1, lon1)).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-6 * ab.max(1.0));
            // Never beyond half the circumference.
            prop_assert!(ab <= std::f64::consts::PI * EARTH_RADIUS_M * (1.0 + 1e-12));
        }
    }
}
