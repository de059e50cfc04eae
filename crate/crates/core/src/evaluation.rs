//! Metrics, the historical-average and GRU baselines, and the summary
//! statistics used by the ablation and source-quality tables.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::datasets::{day_of_week, hour_of_day, DemandSeries, HourStamp, Normalizer, Window, HOURS_PER_DAY};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::optim::Adam;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Mat;

/// RMSE, MAE and R² over one pooled residual set, in demand units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the reference values are constant.
    pub r2: Option<f64>,
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!("{} targets but {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.len() < 2 {
        return Err(Error::invalid("metrics need at least two values"));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let r = t - p;
        sse += r * r;
        sae += r.abs();
        sst += (t - mean) * (t - mean);
    }
    let r2 = (sst > 0.0).then(|| 1.0 - sse / sst);
    Ok(MetricReport { rmse: libm::sqrt(sse / n), mae: sae / n, r2 })
}

/// Accumulates de-normalised predictions over many windows.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    pub y_true: Vec<f64>,
    pub y_pred: Vec<f64>,
}

impl MetricAccumulator {
    pub fn push(&mut self, y_raw: &Mat, y_pred_raw: &Mat) {
        self.y_true.extend_from_slice(y_raw.as_slice());
        self.y_pred.extend_from_slice(y_pred_raw.as_slice());
    }

    /// Inverts a normalised prediction before recording it.
    pub fn push_normalized(&mut self, norm: &Normalizer, window: &Window, prediction: &Mat) {
        let raw = norm.invert_block(prediction);
        self.push(&window.y_raw, &raw);
    }

    pub fn report(&self) -> Result<MetricReport> {
        metrics(&self.y_true, &self.y_pred)
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Kendall's τ-b between two paired samples.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tie_x += 1.0;
            } else if dy == 0.0 {
                tie_y += 1.0;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    let denom = libm::sqrt((concordant + discordant + tie_x) * (concordant + discordant + tie_y));
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) / denom
    }
}

/// Mean demand per `(node, day-of-week, hour)` bucket with back-off to
/// `(node, hour)` and then to the node mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAverage {
    pub num_nodes: usize,
    pub num_features: usize,
    /// `[node][dow][hour][feature]` sums and counts.
    weekly: Vec<(f64, u32)>,
    hourly: Vec<(f64, u32)>,
    node: Vec<(f64, u32)>,
}

/// Which bucket answered a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HaLevel {
    Weekly,
    Hourly,
    Node,
}

impl HistoricalAverage {
    pub fn fit(train: &DemandSeries) -> Self {
        let (n, f) = (train.num_nodes(), train.num_features());
        let mut ha = HistoricalAverage {
            num_nodes: n,
            num_features: f,
            weekly: vec![(0.0, 0); n * 7 * HOURS_PER_DAY * f],
            hourly: vec![(0.0, 0); n * HOURS_PER_DAY * f],
            node: vec![(0.0, 0); n * f],
        };
        for (t, &stamp) in train.timestamps().iter().enumerate() {
            let (d, h) = (day_of_week(stamp), hour_of_day(stamp));
            for i in 0..n {
                for k in 0..f {
                    let v = train.get(t, i, k);
                    for slot in [
                        &mut ha.weekly[((i * 7 + d) * HOURS_PER_DAY + h) * f + k],
                        &mut ha.hourly[(i * HOURS_PER_DAY + h) * f + k],
                        &mut ha.node[i * f + k],
                    ] {
                        slot.0 += v;
                        slot.1 += 1;
                    }
                }
            }
        }
        ha
    }

    pub fn predict_value(&self, node: usize, feature: usize, t: HourStamp) -> (f64, HaLevel) {
        let f = self.num_features;
        let (d, h) = (day_of_week(t), hour_of_day(t));
        let mean = |(s, c): (f64, u32)| (c > 0).then(|| s / c as f64);
        if let Some(v) = mean(self.weekly[((node * 7 + d) * HOURS_PER_DAY + h) * f + feature]) {
            return (v, HaLevel::Weekly);
        }
        if let Some(v) = mean(self.hourly[(node * HOURS_PER_DAY + h) * f + feature]) {
            return (v, HaLevel::Hourly);
        }
        (mean(self.node[node * f + feature]).unwrap_or(0.0), HaLevel::Node)
    }

    /// Prediction for every node at hour `t`, in demand units.
    pub fn predict(&self, t: HourStamp) -> Mat {
        Mat::from_fn(self.num_nodes, self.num_features, |i, k| self.predict_value(i, k, t).0)
    }

    pub fn evaluate(&self, windows: &[Window]) -> Result<MetricReport> {
        let mut acc = MetricAccumulator::default();
        for w in windows {
            acc.push(&w.y_raw, &self.predict(w.label_time));
        }
        acc.report()
    }
}

/// Training budget shared by the target-only learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitBudget {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

/// A GRU shared by every node, without graph structure, reading the six
/// history steps and predicting the next one through a linear head.
#[derive(Clone, Debug)]
pub struct GruBaseline {
    pub store: ParamStore,
    pub hidden: usize,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub cand_w: ParamId,
    pub cand_b: ParamId,
    pub head: Linear,
}

impl GruBaseline {
    pub fn new(features: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let width = features + hidden;
        let gate_w = store.add_glorot("gru.gate.weight", ParamKind::Trainable, width, 2 * hidden, &mut rng);
        let gate_b = store.add_zeros("gru.gate.bias", 1, 2 * hidden);
        let cand_w = store.add_glorot("gru.cand.weight", ParamKind::Trainable, width, hidden, &mut rng);
        let cand_b = store.add_zeros("gru.cand.bias", 1, hidden);
        let head = Linear::new(&mut store, "gru.head", hidden, features, true, &mut rng);
        GruBaseline { store, hidden, gate_w, gate_b, cand_w, cand_b, head }
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn forward(&self, tape: &mut Tape, window: &Window) -> Var {
        let n = window.y.rows();
        let d = self.hidden;
        let s = &self.store;
        let mut h = tape.constant(Mat::zeros(n, d));
        for x in &window.x {
            let x = tape.constant(x.clone());
            let xh = tape.concat_cols(&[x, h]);
            let gw = tape.param(s, self.gate_w);
            let gb = tape.param(s, self.gate_b);
            let g = tape.matmul(xh, gw);
            let g = tape.add_row(g, gb);
            let g = tape.sigmoid(g);
            let r = tape.slice_cols(g, 0, d);
            let u = tape.slice_cols(g, d, d);
            let rh = tape.mul(r, h);
            let xrh = tape.concat_cols(&[x, rh]);
            let cw = tape.param(s, self.cand_w);
            let cb = tape.param(s, self.cand_b);
            let c = tape.matmul(xrh, cw);
            let c = tape.add_row(c, cb);
            let c = tape.tanh(c);
            let hc = tape.sub(h, c);
            let uhc = tape.mul(u, hc);
            h = tape.add(c, uhc);
        }
        self.head.forward(tape, s, h)
    }

    pub fn predict(&self, window: &Window) -> Mat {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, window);
        tape.value(y).clone()
    }

    pub fn evaluate(&self, windows: &[Window], norm: &Normalizer) -> Result<MetricReport> {
        let mut acc = MetricAccumulator::default();
        for w in windows {
            acc.push_normalized(norm, w, &self.predict(w));
        }
        acc.report()
    }

    /// Adam on the MSE of normalised labels, early-stopped on validation MAE;
    /// the best parameters are kept.
    pub fn fit(&mut self, train: &[Window], val: &[Window], norm: &Normalizer, budget: &FitBudget) -> Result<MetricReport> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::invalid("GRU baseline needs training and validation windows"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        let mut adam = Adam::new(&self.store, budget.lr, |_| true);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best = (self.evaluate(val, norm)?, self.store.clone());
        let mut stale = 0;
        for epoch in 0..budget.max_epochs {
            order.shuffle(&mut rng);
            for (it, batch) in order.chunks(budget.batch_size.max(1)).enumerate() {
                let mut tape = Tape::new();
                let mut total: Option<Var> = None;
                for &i in batch {
                    let y = self.forward(&mut tape, &train[i]);
                    let target = tape.constant(train[i].y.clone());
                    let l = crate::memory::prediction_loss(&mut tape, y, target);
                    total = Some(match total {
                        Some(t) => tape.add(t, l),
                        None => l,
                    });
                }
                let loss = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Diverged { stage: "gru", epoch, iteration: it });
                }
                let grads = tape.backward(loss);
                let grads = dense_grads(&tape, &grads, self.store.len());
                adam.step(&mut self.store, &grads);
            }
            let report = self.evaluate(val, norm)?;
            if report.mae < best.0.mae {
                best = (report, self.store.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= budget.patience {
                    break;
                }
            }
        }
        self.store = best.1;
        Ok(best.0)
    }
}

/// Parameter gradients laid out by id, `None` where a parameter was unused.
pub(crate) fn dense_grads(tape: &Tape, grads: &crate::autograd::Grads, len: usize) -> Vec<Option<Mat>> {
    let mut out = vec![None; len];
    for (id, g) in tape.param_grads(grads) {
        out[id.0] = Some(g);
    }
    out
}

/// Ablated variants of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// No view reconstruction (`λ₁ = 0`).
    NoRl,
    /// No hierarchical clustering (a single level).
    NoHnc,
    /// No adversarial training (`β₂ = 0`).
    NoAt,
    /// No private memory (`M_p = 0`).
    NoPmt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoRl, Variant::NoHnc, Variant::NoAt, Variant::NoPmt];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRl => "no_rl",
            Variant::NoHnc => "no_hnc",
            Variant::NoAt => "no_at",
            Variant::NoPmt => "no_pmt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation variant '{s}'")))
    }

    /// Applies this variant's single knob.
    pub fn apply(self, model: &mut crate::model::ModelConfig, train: &mut crate::training::TrainConfig) {
        match self {
            Variant::Full => {}
            Variant::NoRl => train.lambda1 = 0.0,
            Variant::NoHnc => model.cluster_sizes.clear(),
            Variant::NoAt => train.beta2 = 0.0,
            Variant::NoPmt => model.private_slots = 0,
        }
    }
}

/// One row of a summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub per_seed_mae: Vec<f64>,
    pub per_seed_rmse: Vec<f64>,
    pub per_seed_r2: Vec<Option<f64>>,
    pub median_mae: f64,
    pub median_rmse: f64,
    pub median_r2: Option<f64>,
}

impl SummaryRow {
    pub fn from_reports(label: impl Into<String>, reports: &[MetricReport]) -> Self {
        let mae: Vec<f64> = reports.iter().map(|r| r.mae).collect();
        let rmse: Vec<f64> = reports.iter().map(|r| r.rmse).collect();
        let r2: Vec<Option<f64>> = reports.iter().map(|r| r.r2).collect();
        let defined: Vec<f64> = r2.iter().flatten().copied().collect();
        SummaryRow {
            label: label.into(),
            median_mae: median(&mae),
            median_rmse: median(&rmse),
            median_r2: (defined.len() == r2.len()).then(|| median(&defined)),
            per_seed_mae: mae,
            per_seed_rmse: rmse,
            per_seed_r2: r2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{fit_normalizer, make_windows};

    #[test]
    fn metric_examples() {
        let r = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.rmse, r.mae, r.r2), (0.0, 0.0, Some(1.0)));
        let r = metrics(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.rmse, r.mae, r.r2), (1.0, 1.0, Some(0.0)));
        let r = metrics(&[3.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.r2, None);
        assert!(metrics(&[1.0], &[1.0]).is_err());
        assert!(metrics(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn median_and_tau() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
    }

    fn series(days: usize, f: impl Fn(usize, usize) -> f64) -> DemandSeries {
        let steps = days * 24;
        let start = 403_296;
        let stamps = (0..steps as i64).map(|t| start + t).collect();
        let mut values = Vec::new();
        for t in 0..steps {
            for node in 0..2 {
                values.push(f(t, node));
                values.push(f(t, node) + 1.0);
            }
        }
        DemandSeries::new(2, 2, stamps, values).unwrap()
    }

    #[test]
    fn ha_constant_and_periodic() {
        let constant = series(3, |_, _| 4.0);
        let ha = HistoricalAverage::fit(&constant);
        assert_eq!(ha.predict(403_296 + 1000).as_slice(), &[4.0, 5.0, 4.0, 5.0]);

        let weekly = |t: usize, node: usize| ((t % 168) * (node + 1)) as f64;
        let full = series(21, weekly);
        let ha = HistoricalAverage::fit(&full.slice(0..14 * 24));
        let norm = fit_normalizer(&full, 0..336).unwrap();
        let windows = make_windows(&full.slice(336..504), &norm).unwrap();
        let r = ha.evaluate(&windows).unwrap();
        assert_eq!(r.mae, 0.0);
    }

    #[test]
    fn ha_one_day_backs_off_to_hour() {
        let one = series(1, |t, _| t as f64);
        let ha = HistoricalAverage::fit(&one);
        // Monday was seen; Tuesday 05:00 falls back to the 05:00 mean.
        assert_eq!(ha.predict_value(0, 0, 403_296 + 5).1, HaLevel::Weekly);
        let (v, level) = ha.predict_value(0, 0, 403_296 + 24 + 5);
        assert_eq!((v, level), (5.0, HaLevel::Hourly));
    }

    #[test]
    fn gru_parameter_count_and_determinism() {
        let g = GruBaseline::new(2, 32, 0);
        let count = g.parameter_count();
        assert!(count as f64 >= 2500.0 / 3.0 && count as f64 <= 2500.0 * 3.0, "{count}");
        let data = series(2, |t, n| ((t + n) % 24) as f64);
        let norm = fit_normalizer(&data, 0..48).unwrap();
        let w = make_windows(&data, &norm).unwrap();
        let budget = FitBudget { lr: 1e-3, batch_size: 8, max_epochs: 2, patience: 5, seed: 3 };
        let mut a = GruBaseline::new(2, 8, 1);
        let mut b = GruBaseline::new(2, 8, 1);
        let ra = a.fit(&w[..20], &w[20..], &norm, &budget).unwrap();
        let rb = b.fit(&w[..20], &w[20..], &norm, &budget).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn variant_parse() {
        assert_eq!(Variant::parse("no_hnc").unwrap(), Variant::NoHnc);
        assert!(Variant::parse("no_memory").is_err());
    }
}
