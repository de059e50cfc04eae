//! Demand series: windowing, min-max normalisation, chronological splits,
//! source noise injection and a synthetic city-pair generator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::urban_graphs::{poi_graph, proximity_graph, road_graph, GridSpec, MultiViewGraph, RoadSegment};

/// Whole hours since 1970-01-01T00:00 UTC.
pub type HourStamp = i64;

/// History length of every window.
pub const HISTORY: usize = 6;
/// Width of the temporal context vector: 7 weekday slots then 24 hour slots.
pub const TEMPORAL_DIM: usize = 7 + 24;
pub const HOURS_PER_DAY: usize = 24;
/// Calendar month used by split lengths and the generator.
pub const DAYS_PER_MONTH: u32 = 30;

/// Day of week with Monday = 0.
pub fn day_of_week(t: HourStamp) -> usize {
    // 1970-01-01 was a Thursday.
    (t.div_euclid(24) + 3).rem_euclid(7) as usize
}

pub fn hour_of_day(t: HourStamp) -> usize {
    t.rem_euclid(24) as usize
}

/// One-hot weekday ⊕ one-hot hour as a `1×31` row.
pub fn temporal_vector(t: HourStamp) -> Mat {
    let mut v = Mat::zeros(1, TEMPORAL_DIM);
    v[(0, day_of_week(t))] = 1.0;
    v[(0, 7 + hour_of_day(t))] = 1.0;
    v
}

/// Hourly demand for `N` cells and `F` features, stored time-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    num_nodes: usize,
    num_features: usize,
    timestamps: Vec<HourStamp>,
    values: Vec<f64>,
}

impl DemandSeries {
    /// `values` is laid out `[t][node][feature]`.
    pub fn new(num_nodes: usize, num_features: usize, timestamps: Vec<HourStamp>, values: Vec<f64>) -> Result<Self> {
        if num_nodes == 0 || num_features == 0 {
            return Err(Error::invalid("demand series needs at least one node and one feature"));
        }
        if values.len() != timestamps.len() * num_nodes * num_features {
            return Err(Error::invalid(format!(
                "{} values do not fill {} steps x {num_nodes} nodes x {num_features} features",
                values.len(),
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::invalid("timestamps must be strictly increasing with hourly spacing"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("demand must be finite and nonnegative, found {v}")));
        }
        Ok(DemandSeries { num_nodes, num_features, timestamps, values })
    }

    /// All-zero series starting at `start`.
    pub fn zeros(num_nodes: usize, num_features: usize, start: HourStamp, steps: usize) -> Self {
        DemandSeries {
            num_nodes,
            num_features,
            timestamps: (0..steps as i64).map(|k| start + k).collect(),
            values: vec![0.0; steps * num_nodes * num_features],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn timestamps(&self) -> &[HourStamp] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn offset(&self, t: usize, node: usize, feature: usize) -> usize {
        (t * self.num_nodes + node) * self.num_features + feature
    }

    #[inline]
    pub fn get(&self, t: usize, node: usize, feature: usize) -> f64 {
        self.values[self.offset(t, node, feature)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, node: usize, feature: usize, v: f64) {
        let o = self.offset(t, node, feature);
        self.values[o] = v;
    }

    /// Step `t` as an `N×F` matrix.
    pub fn step(&self, t: usize) -> Mat {
        let w = self.num_nodes * self.num_features;
        Mat::from_vec(self.num_nodes, self.num_features, self.values[t * w..(t + 1) * w].to_vec())
    }

    pub fn slice(&self, range: Range<usize>) -> DemandSeries {
        let w = self.num_nodes * self.num_features;
        DemandSeries {
            num_nodes: self.num_nodes,
            num_features: self.num_features,
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values[range.start * w..range.end * w].to_vec(),
        }
    }

    /// Series of one node and feature across time.
    pub fn trace(&self, node: usize, feature: usize) -> Vec<f64> {
        (0..self.num_steps()).map(|t| self.get(t, node, feature)).collect()
    }
}

/// Per-feature min-max scaling to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Features whose fit range was constant; they map to 0.
    pub degenerate: Vec<bool>,
    /// Steps the statistics were computed from.
    pub fit_range: Range<usize>,
}

impl Normalizer {
    pub fn apply(&self, feature: usize, v: f64) -> f64 {
        if self.degenerate[feature] {
            0.0
        } else {
            (v - self.min[feature]) / (self.max[feature] - self.min[feature])
        }
    }

    pub fn invert(&self, feature: usize, v: f64) -> f64 {
        if self.degenerate[feature] {
            self.min[feature]
        } else {
            v * (self.max[feature] - self.min[feature]) + self.min[feature]
        }
    }

    /// Inverts an `N×F` block in place.
    pub fn invert_block(&self, m: &Mat) -> Mat {
        Mat::from_fn(m.rows(), m.cols(), |i, f| self.invert(f, m[(i, f)]))
    }
}

pub fn fit_normalizer(series: &DemandSeries, fit_range: Range<usize>) -> Result<Normalizer> {
    if fit_range.is_empty() || fit_range.end > series.num_steps() {
        return Err(Error::invalid(format!(
            "fit range {fit_range:?} is empty or outside a series of {} steps",
            series.num_steps()
        )));
    }
    let f = series.num_features();
    let mut min = vec![f64::INFINITY; f];
    let mut max = vec![f64::NEG_INFINITY; f];
    for t in fit_range.clone() {
        for n in 0..series.num_nodes() {
            for k in 0..f {
                let v = series.get(t, n, k);
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
    }
    let degenerate = min.iter().zip(&max).map(|(a, b)| a == b).collect();
    Ok(Normalizer { min, max, degenerate, fit_range })
}

/// One training example: six normalised history steps, the temporal context
/// of the label hour and the next-step label.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub x: Vec<Mat>,
    pub temporal: Mat,
    /// Normalised label, `N×F`.
    pub y: Mat,
    /// Label in demand units.
    pub y_raw: Mat,
    /// Series index of the label step.
    pub label_step: usize,
    pub label_time: HourStamp,
}

fn build_window(series: &DemandSeries, norm: &Normalizer, label: usize) -> Window {
    let normalized = |t: usize| {
        let raw = series.step(t);
        Mat::from_fn(raw.rows(), raw.cols(), |i, f| norm.apply(f, raw[(i, f)]))
    };
    let x = (label - HISTORY..label).map(normalized).collect();
    let y_raw = series.step(label);
    let y = Mat::from_fn(y_raw.rows(), y_raw.cols(), |i, f| norm.apply(f, y_raw[(i, f)]));
    let label_time = series.timestamps()[label];
    Window { x, temporal: temporal_vector(label_time), y, y_raw, label_step: label, label_time }
}

/// Every stride-1 window of the series; `T_total − 6` of them.
pub fn make_windows(series: &DemandSeries, norm: &Normalizer) -> Result<Vec<Window>> {
    if series.num_steps() < HISTORY + 1 {
        return Err(Error::invalid(format!(
            "series of {} steps is shorter than {} (history + label)",
            series.num_steps(),
            HISTORY + 1
        )));
    }
    Ok((HISTORY..series.num_steps()).map(|label| build_window(series, norm, label)).collect())
}

/// Windows whose label lies in `labels`. History may reach back before the
/// span, so the first label must be at least 6 steps into the series.
pub fn windows_for_labels(series: &DemandSeries, norm: &Normalizer, labels: Range<usize>) -> Result<Vec<Window>> {
    if labels.start < HISTORY || labels.end > series.num_steps() || labels.is_empty() {
        return Err(Error::invalid(format!(
            "label span {labels:?} cannot be windowed in a series of {} steps",
            series.num_steps()
        )));
    }
    Ok(labels.map(|label| build_window(series, norm, label)).collect())
}

/// Lengths of the chronological target splits, in days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub target_train_days: u32,
    pub val_days: u32,
    pub test_days: u32,
}

impl SplitSpec {
    /// Two months of validation and two of testing.
    pub fn paper(target_train_days: u32) -> Self {
        SplitSpec { target_train_days, val_days: 2 * DAYS_PER_MONTH, test_days: 2 * DAYS_PER_MONTH }
    }

    pub fn required_steps(&self) -> usize {
        (self.target_train_days + self.val_days + self.test_days) as usize * HOURS_PER_DAY
    }
}

/// Step index spans of the three splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpans {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Test is the final block, validation the block before it and training
/// the `target_train_days` immediately before validation.
pub fn split(num_steps: usize, spec: &SplitSpec) -> Result<SplitSpans> {
    if spec.target_train_days == 0 || spec.val_days == 0 || spec.test_days == 0 {
        return Err(Error::invalid("every split must cover at least one day"));
    }
    if num_steps < spec.required_steps() {
        return Err(Error::invalid(format!(
            "series of {num_steps} steps cannot host {} training, {} validation and {} test days",
            spec.target_train_days, spec.val_days, spec.test_days
        )));
    }
    let test_len = spec.test_days as usize * HOURS_PER_DAY;
    let val_len = spec.val_days as usize * HOURS_PER_DAY;
    let train_len = spec.target_train_days as usize * HOURS_PER_DAY;
    let test = num_steps - test_len..num_steps;
    let val = test.start - val_len..test.start;
    let train = val.start - train_len..val.start;
    Ok(SplitSpans { train, val, test })
}

/// Adds `N(0, sd²)` noise to every entry, clipping at zero.
pub fn add_gaussian_noise(series: &DemandSeries, sd: f64, seed: u64) -> Result<DemandSeries> {
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(Error::invalid(format!("noise standard deviation must be finite and >= 0, got {sd}")));
    }
    let mut out = series.clone();
    if sd == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = (*v + sd * z).max(0.0);
    }
    Ok(out)
}

/// Configuration of the synthetic city-pair generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Grid side of the source city (`N_src = side²`).
    pub source_side: usize,
    /// Grid side of the target city.
    pub target_side: usize,
    pub source_days: u32,
    pub target_days: u32,
    /// Amplitude of the land-use driven pattern shared by both cities.
    pub shared_amp: f64,
    /// Amplitude of each city's own pattern.
    pub private_amp: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// First hour of both series.
    pub start: HourStamp,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            source_side: 6,
            target_side: 6,
            source_days: 2 * DAYS_PER_MONTH,
            target_days: 21,
            shared_amp: 10.0,
            private_amp: 1.0,
            noise_sd: 0.5,
            seed: 0,
            // 2016-01-04T00:00Z, a Monday.
            start: 403_296,
        }
    }
}

/// Number of latent land-use types.
pub const LAND_USES: usize = 3;
/// POI categories produced by the generator.
pub const POI_CATEGORIES: usize = 6;

/// One synthetic city.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCity {
    pub demand: DemandSeries,
    pub graph: MultiViewGraph,
    /// Per-node land-use intensities (`N×3`).
    pub latent: Mat,
    pub poi_counts: Mat,
    pub road_segments: Vec<RoadSegment<u32>>,
}

/// Phase (hour) and weight of the daily harmonics per land use and feature.
/// Residential: morning pickups, evening drop-offs; office: the reverse;
/// leisure: late peaks, busier at weekends.
const PEAK_HOUR: [[f64; 2]; LAND_USES] = [[8.0, 18.0], [18.0, 9.0], [21.0, 20.0]];
const WEEKEND_FACTOR: [f64; LAND_USES] = [0.8, 0.45, 1.5];
/// POI category loadings on the land-use types.
const POI_LOADINGS: [[f64; LAND_USES]; POI_CATEGORIES] = [
    [1.0, 0.1, 0.1],
    [0.7, 0.0, 0.4],
    [0.1, 1.0, 0.1],
    [0.0, 0.8, 0.3],
    [0.2, 0.1, 1.0],
    [0.3, 0.3, 0.7],
];

/// Shared daily/weekly profile of a land use, always within `[0.1, 2.7]`.
fn land_use_profile(kind: usize, feature: usize, t: HourStamp) -> f64 {
    let h = hour_of_day(t) as f64;
    let peak = PEAK_HOUR[kind][feature];
    let daily = 1.0 + 0.6 * libm::cos(2.0 * PI * (h - peak) / 24.0) + 0.25 * libm::cos(4.0 * PI * (h - peak) / 24.0);
    let weekend = if day_of_week(t) >= 5 { WEEKEND_FACTOR[kind] } else { 1.0 };
    daily * weekend
}

fn smooth_field<R: Rng>(side: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..side * side).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let (mut acc, mut cnt) = (0.0, 0.0);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr >= 0 && nc >= 0 && (nr as usize) < side && (nc as usize) < side {
                        let w = if dr == 0 && dc == 0 { 2.0 } else { 1.0 };
                        acc += w * raw[nr as usize * side + nc as usize];
                        cnt += w;
                    }
                }
            }
            out[r * side + c] = acc / cnt;
        }
    }
    out
}

fn generate_city<R: Rng>(cfg: &SynthConfig, side: usize, days: u32, rng: &mut R) -> Result<SyntheticCity> {
    let grid = GridSpec::synthetic(side, side);
    let n = grid.num_cells();
    let steps = days as usize * HOURS_PER_DAY;

    // Spatially smooth land-use intensities, sharpened so cells specialise.
    let fields: Vec<Vec<f64>> = (0..LAND_USES).map(|_| smooth_field(side, rng)).collect();
    let latent = Mat::from_fn(n, LAND_USES, |i, k| {
        let v = fields[k][i];
        0.15 + 1.6 * v * v
    });

    // City-specific pattern: its own peak hours and per-node amplitude.
    let private_peak = [rng.random_range(0.0..24.0), rng.random_range(0.0..24.0)];
    let private_weight: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();

    let poi_counts = Mat::from_fn(n, POI_CATEGORIES, |i, c| {
        let mean: f64 = (0..LAND_USES).map(|k| POI_LOADINGS[c][k] * latent[(i, k)]).sum();
        libm::round(20.0 * mean * rng.random_range(0.8..1.2))
    });

    let mut segments = Vec::new();
    let highways = (side / 3).max(1);
    for h in 0..highways {
        let row = rng.random_range(0..side);
        let col = rng.random_range(0..side);
        for c in 0..side - 1 {
            segments.push(RoadSegment { cell_i: grid.index(row, c), cell_j: grid.index(row, c + 1), highway: 2 * h as u32 });
        }
        for r in 0..side - 1 {
            segments.push(RoadSegment { cell_i: grid.index(r, col), cell_j: grid.index(r + 1, col), highway: 2 * h as u32 + 1 });
        }
    }

    let mut demand = DemandSeries::zeros(n, 2, cfg.start, steps);
    for t in 0..steps {
        let ts = cfg.start + t as i64;
        let h = hour_of_day(ts) as f64;
        for i in 0..n {
            for f in 0..2 {
                let shared: f64 = (0..LAND_USES).map(|k| latent[(i, k)] * land_use_profile(k, f, ts)).sum();
                let private = private_weight[i] * (1.0 + libm::cos(2.0 * PI * (h - private_peak[f]) / 24.0));
                let z: f64 = StandardNormal.sample(rng);
                let v = cfg.shared_amp * shared + cfg.private_amp * private + cfg.noise_sd * z;
                demand.set(t, i, f, v.max(0.0));
            }
        }
    }

    let views = vec![proximity_graph(&grid), road_graph(&segments, &grid)?, poi_graph(&poi_counts)?];
    Ok(SyntheticCity { demand, graph: MultiViewGraph::new(grid, views)?, latent, poi_counts, road_segments: segments })
}

/// Generates `(source, target)`. Both cities draw land-use intensities from
/// the same process and share the land-use profiles; each adds its own pattern.
pub fn synth_city_pair(cfg: &SynthConfig) -> Result<(SyntheticCity, SyntheticCity)> {
    if cfg.source_side < 3 || cfg.target_side < 3 {
        return Err(Error::invalid("synthetic cities need at least 9 cells (grid side >= 3)"));
    }
    if cfg.source_days == 0 || cfg.target_days == 0 {
        return Err(Error::invalid("synthetic series need at least one day"));
    }
    if cfg.shared_amp < 0.0 || cfg.private_amp < 0.0 || cfg.noise_sd < 0.0 {
        return Err(Error::invalid("amplitudes and noise must be nonnegative"));
    }
    let mut src_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let source = generate_city(cfg, cfg.source_side, cfg.source_days, &mut src_rng)?;
    let target = generate_city(cfg, cfg.target_side, cfg.target_days, &mut tgt_rng)?;
    Ok((source, target))
}

/// Noise-free shared component of one node with the given land-use row.
pub fn shared_demand(latent_row: &[f64], feature: usize, t: HourStamp, shared_amp: f64) -> f64 {
    shared_amp * (0..LAND_USES).map(|k| latent_row[k] * land_use_profile(k, feature, t)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_from(values: &[f64]) -> DemandSeries {
        DemandSeries::new(1, 1, (0..values.len() as i64).collect(), values.to_vec()).unwrap()
    }

    #[test]
    fn normalizer_examples() {
        let s = series_from(&[2.0, 4.0, 10.0]);
        let n = fit_normalizer(&s, 0..3).unwrap();
        assert_eq!((n.min[0], n.max[0]), (2.0, 10.0));
        assert_eq!(n.apply(0, 6.0), 0.5);
        for v in [2.0, 4.0, 10.0] {
            assert!((n.invert(0, n.apply(0, v)) - v).abs() < 1e-12);
        }
        let z = series_from(&[0.0, 0.0, 0.0]);
        let nz = fit_normalizer(&z, 0..3).unwrap();
        assert!(nz.degenerate[0]);
        assert_eq!(nz.apply(0, 0.0), 0.0);
        assert_eq!(nz.apply(0, 7.0), 0.0);
        assert!(fit_normalizer(&s, 1..1).is_err());
    }

    #[test]
    fn window_counts() {
        let s7 = series_from(&[1.0; 7]);
        let n = fit_normalizer(&s7, 0..7).unwrap();
        assert_eq!(make_windows(&s7, &n).unwrap().len(), 1);
        let s24 = series_from(&[1.0; 24]);
        assert_eq!(make_windows(&s24, &n).unwrap().len(), 18);
        let s6 = series_from(&[1.0; 6]);
        assert!(matches!(make_windows(&s6, &n), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn window_label_alignment() {
        let vals: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let s = series_from(&vals);
        let n = fit_normalizer(&s, 0..20).unwrap();
        for w in make_windows(&s, &n).unwrap() {
            assert_eq!(w.y_raw[(0, 0)], s.get(w.label_step, 0, 0));
            assert_eq!(w.label_time, s.timestamps()[w.label_step]);
            let last_x = n.invert(0, w.x[HISTORY - 1][(0, 0)]);
            assert!((last_x - s.get(w.label_step - 1, 0, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_encoding_monday_eight() {
        // 2016-01-04 was a Monday; 403_296 h since the epoch is its midnight.
        let t = 403_296 + 8;
        let v = temporal_vector(t);
        assert_eq!(v[(0, 0)], 1.0);
        assert_eq!(v[(0, 7 + 8)], 1.0);
        assert_eq!(v.sum(), 2.0);
        assert_eq!(day_of_week(0), 3);
    }

    #[test]
    fn split_lengths_and_order() {
        let year = 12 * DAYS_PER_MONTH as usize * 24;
        let s1 = split(year, &SplitSpec::paper(1)).unwrap();
        assert_eq!(s1.train.len(), 24);
        let s7 = split(year, &SplitSpec::paper(7)).unwrap();
        assert_eq!(s7.train.len(), 168);
        assert_eq!(s7.val.end, s7.test.start);
        assert_eq!(s7.train.end, s7.val.start);
        assert_eq!(s7.test.end, year);
        assert!(split(100, &SplitSpec::paper(1)).is_err());
    }

    #[test]
    fn zero_noise_is_identity_and_seeded_noise_reproducible() {
        let s = series_from(&[3.0; 50]);
        assert_eq!(add_gaussian_noise(&s, 0.0, 1).unwrap(), s);
        let a = add_gaussian_noise(&s, 5.0, 11).unwrap();
        let b = add_gaussian_noise(&s, 5.0, 11).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|v| *v >= 0.0));
        assert!(add_gaussian_noise(&s, -1.0, 1).is_err());
    }

    #[test]
    fn private_free_generator_matches_shared_curve() {
        let cfg = SynthConfig { private_amp: 0.0, noise_sd: 0.0, source_days: 2, target_days: 2, ..SynthConfig::default() };
        let (src, tgt) = synth_city_pair(&cfg).unwrap();
        for t in 0..48 {
            let ts = cfg.start + t as i64;
            for i in 0..2 {
                for f in 0..2 {
                    let s = shared_demand(src.latent.row(i), f, ts, cfg.shared_amp);
                    assert!((src.demand.get(t, i, f) - s).abs() < 1e-9);
                    let s = shared_demand(tgt.latent.row(i), f, ts, cfg.shared_amp);
                    assert!((tgt.demand.get(t, i, f) - s).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn generator_rejects_tiny_cities() {
        let cfg = SynthConfig { source_side: 2, ..SynthConfig::default() };
        assert!(synth_city_pair(&cfg).is_err());
    }
}
