//! Experiment orchestration: data preparation from files or the generator,
//! seeded fan-out across worker threads, the ablation and source-quality
//! grids, and the target-only baselines.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sfmgtl_core::datasets::{add_gaussian_noise, split, synth_city_pair, DemandSeries};
use sfmgtl_core::evaluation::{FitBudget, GruBaseline, HistoricalAverage, MetricReport, SummaryRow, Variant};
use sfmgtl_core::experiment::{run_scratch, run_transfer, source_data, target_data, variant_config, ExperimentConfig};
use sfmgtl_core::training::{CityData, TrainConfig};
use sfmgtl_core::urban_graphs::MultiViewGraph;

use crate::error::{Error, Result};
use crate::formats::{load_city, source_dir, target_dir};

pub const THREADS_ENV: &str = "SFMGTL_THREADS";

/// Worker cap from `SFMGTL_THREADS`, else the available parallelism.
pub fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::invalid(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Maps `f` over `items` on up to `threads` scoped workers; results keep
/// the input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every item ran")).collect()
}

/// Raw series and graphs of both cities.
pub struct RawPair {
    pub source: (DemandSeries, MultiViewGraph),
    pub target: (DemandSeries, MultiViewGraph),
}

/// Cities from a dataset directory, or generated from `cfg.synth`.
pub fn raw_pair(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<RawPair> {
    match data {
        Some(dir) => Ok(RawPair { source: load_city(&source_dir(dir))?, target: load_city(&target_dir(dir))? }),
        None => {
            let (s, t) = synth_city_pair(&cfg.synth)?;
            Ok(RawPair { source: (s.demand, s.graph), target: (t.demand, t.graph) })
        }
    }
}

/// Windows and normalisers of both cities, with the configured source noise.
pub fn prepare(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<(CityData, CityData)> {
    let raw = raw_pair(cfg, data)?;
    let noisy = add_gaussian_noise(&raw.source.0, cfg.source_noise_sd, cfg.synth.seed ^ 0x5eed)?;
    Ok((source_data(&noisy, &raw.source.1)?, target_data(&raw.target.0, &raw.target.1, &cfg.split)?))
}

/// Standard deviation of the clean source demand, the unit of the noise grid.
pub fn demand_scale(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<f64> {
    let raw = raw_pair(cfg, data)?;
    let v = raw.source.0.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    Ok((v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    /// Pre-train then fine-tune.
    Transfer,
    /// Target-only training with the fine-tune budget.
    Scratch,
}

/// Test metrics of finished runs, keyed by kind and full configuration, so
/// overlapping grids share runs.
#[derive(Default)]
pub struct RunCache {
    entries: Vec<(RunKind, ExperimentConfig, MetricReport)>,
}

impl RunCache {
    pub fn get(&self, kind: RunKind, cfg: &ExperimentConfig) -> Option<MetricReport> {
        self.entries.iter().find(|(k, c, _)| *k == kind && c == cfg).map(|e| e.2)
    }

    /// Test metrics for every configuration, running the missing ones in parallel.
    pub fn reports(&mut self, kind: RunKind, cfgs: &[ExperimentConfig], data: Option<&Path>, threads: usize) -> Result<Vec<MetricReport>> {
        let mut missing: Vec<ExperimentConfig> = Vec::new();
        for c in cfgs {
            if self.get(kind, c).is_none() && !missing.contains(c) {
                missing.push(c.clone());
            }
        }
        let results = parallel_map(&missing, threads, |cfg| run_one(kind, cfg, data));
        for (cfg, r) in missing.into_iter().zip(results) {
            self.entries.push((kind, cfg, r?));
        }
        Ok(cfgs.iter().map(|c| self.get(kind, c).expect("just ran")).collect())
    }
}

pub fn run_one(kind: RunKind, cfg: &ExperimentConfig, data: Option<&Path>) -> Result<MetricReport> {
    let (source, target) = prepare(cfg, data)?;
    Ok(match kind {
        RunKind::Transfer => run_transfer(cfg, &source, &target)?.test,
        RunKind::Scratch => run_scratch(cfg, &target)?.1,
    })
}

/// Per-variant median test metrics over `seeds`.
pub fn ablation(
    cache: &mut RunCache,
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    data: Option<&Path>,
    threads: usize,
) -> Result<Vec<SummaryRow>> {
    let cfgs: Vec<ExperimentConfig> =
        variants.iter().flat_map(|&v| seeds.iter().map(move |&s| variant_config(&base.with_seed(s), v))).collect();
    let reports = cache.reports(RunKind::Transfer, &cfgs, data, threads)?;
    Ok(variants.iter().zip(reports.chunks(seeds.len())).map(|(v, r)| SummaryRow::from_reports(v.name(), r)).collect())
}

/// Transfer and scratch medians over `seeds`.
pub fn transfer_vs_scratch(
    cache: &mut RunCache,
    base: &ExperimentConfig,
    seeds: &[u64],
    data: Option<&Path>,
    threads: usize,
) -> Result<(SummaryRow, SummaryRow)> {
    let cfgs: Vec<ExperimentConfig> = seeds.iter().map(|&s| base.with_seed(s)).collect();
    let transfer = cache.reports(RunKind::Transfer, &cfgs, data, threads)?;
    let scratch = cache.reports(RunKind::Scratch, &cfgs, data, threads)?;
    Ok((SummaryRow::from_reports("transfer", &transfer), SummaryRow::from_reports("scratch", &scratch)))
}

/// One cell of the source-quality grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityCell {
    pub source_days: u32,
    /// Noise SD in units of the clean source demand's standard deviation.
    pub noise_multiple: f64,
    /// Noise SD in demand units.
    pub noise_sd: f64,
    pub row: SummaryRow,
}

/// Target test metrics for every (source duration, noise level) pair. The
/// noise unit is the clean source SD under the first seed.
pub fn quality_study(
    cache: &mut RunCache,
    base: &ExperimentConfig,
    noise_multiples: &[f64],
    durations: &[u32],
    seeds: &[u64],
    data: Option<&Path>,
    threads: usize,
) -> Result<Vec<QualityCell>> {
    if seeds.is_empty() || noise_multiples.is_empty() || durations.is_empty() {
        return Err(Error::invalid("quality study needs seeds, noise levels and durations"));
    }
    if data.is_some() && durations.iter().any(|&d| d != base.synth.source_days) {
        return Err(Error::invalid("source durations can only vary on generated data"));
    }
    let scale = demand_scale(&base.with_seed(seeds[0]), data)?;
    let mut cells = Vec::new();
    let mut cfgs = Vec::new();
    for &days in durations {
        for &m in noise_multiples {
            let sd = m * scale;
            cells.push((days, m, sd));
            for &s in seeds {
                let mut c = base.with_seed(s);
                c.synth.source_days = days;
                c.source_noise_sd = sd;
                cfgs.push(c);
            }
        }
    }
    let reports = cache.reports(RunKind::Transfer, &cfgs, data, threads)?;
    Ok(cells
        .into_iter()
        .zip(reports.chunks(seeds.len()))
        .map(|((days, m, sd), r)| QualityCell {
            source_days: days,
            noise_multiple: m,
            noise_sd: sd,
            row: SummaryRow::from_reports(format!("{days}d x{m}"), r),
        })
        .collect())
}

/// Kendall τ between source duration and benefit (negated median MAE) over
/// the noise-free cells.
pub fn duration_trend(cells: &[QualityCell]) -> f64 {
    let clean: Vec<&QualityCell> = cells.iter().filter(|c| c.noise_sd == 0.0).collect();
    let days: Vec<f64> = clean.iter().map(|c| c.source_days as f64).collect();
    let benefit: Vec<f64> = clean.iter().map(|c| -c.row.median_mae).collect();
    sfmgtl_core::evaluation::kendall_tau(&days, &benefit)
}

/// GRU budget: fine-tune learning rate, batch size and seed, default epoch
/// cap and patience.
pub fn gru_budget(cfg: &ExperimentConfig) -> FitBudget {
    let d = TrainConfig::default();
    FitBudget { lr: cfg.finetune.lr, batch_size: cfg.finetune.batch_size, max_epochs: d.max_epochs, patience: d.patience, seed: cfg.finetune.seed }
}

pub const GRU_HIDDEN: usize = 32;

/// Test metrics of the historical average and the GRU on the target city.
pub fn baselines(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Vec<(String, MetricReport)>> {
    let raw = raw_pair(cfg, data)?;
    let (series, graph) = &raw.target;
    let target = target_data(series, graph, &cfg.split)?;
    let spans = split(series.num_steps(), &cfg.split)?;
    let ha = HistoricalAverage::fit(&series.slice(spans.train));
    let mut gru = GruBaseline::new(series.num_features(), GRU_HIDDEN, cfg.finetune.seed);
    gru.fit(&target.train, &target.val, &target.normalizer, &gru_budget(cfg))?;
    Ok(vec![
        ("ha".into(), ha.evaluate(&target.test)?),
        ("gru".into(), gru.evaluate(&target.test, &target.normalizer)?),
    ])
}
