//! End-to-end runs on synthetic city pairs: preparation, pre-train plus
//! fine-tune, target-only training from scratch, ablations and the
//! source-quality grid.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::{
    add_gaussian_noise, fit_normalizer, make_windows, split, synth_city_pair, windows_for_labels, DemandSeries, SplitSpec, SynthConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{kendall_tau, median, MetricReport, SummaryRow, Variant};
use crate::memory::CityRole;
use crate::model::{CityGraphs, Model, ModelConfig};
use crate::training::{evaluate, pretrain, train_target, CityData, Checkpoint, Stage, StageOutcome, TrainConfig};
use crate::urban_graphs::MultiViewGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Gaussian noise added to the source demand before normalisation.
    #[serde(default)]
    pub source_noise_sd: f64,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 6×6 cities, 1-day target training, one week
    /// each of validation and test.
    pub fn desk() -> Self {
        let synth = SynthConfig::default();
        let n = synth.target_side * synth.target_side;
        ExperimentConfig {
            synth,
            split: SplitSpec { target_train_days: 1, val_days: 7, test_days: 7 },
            model: ModelConfig::desk(n),
            pretrain: TrainConfig { max_epochs: 20, patience: 8, iterations_per_epoch: Some(12), ..TrainConfig::default() },
            finetune: TrainConfig { max_epochs: 20, patience: 8, iterations_per_epoch: Some(5), ..TrainConfig::default() },
            source_noise_sd: 0.0,
        }
    }

    /// Same configuration with every seed replaced by `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synth.seed = seed;
        c.pretrain.seed = seed;
        c.finetune.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if !(self.source_noise_sd >= 0.0) {
            return Err(Error::invalid("source noise must be >= 0"));
        }
        Ok(())
    }
}

/// Source data: every window of the full series, normalised on itself.
pub fn source_data(series: &DemandSeries, graph: &MultiViewGraph) -> Result<CityData> {
    let normalizer = fit_normalizer(series, 0..series.num_steps())?;
    let train = make_windows(series, &normalizer)?;
    Ok(CityData { graphs: CityGraphs::new(graph)?, normalizer, train, val: Vec::new(), test: Vec::new() })
}

/// Target data: windows inside the short training span only, validation and
/// test windows whose history may reach back across the split boundary.
pub fn target_data(series: &DemandSeries, graph: &MultiViewGraph, spec: &SplitSpec) -> Result<CityData> {
    let spans = split(series.num_steps(), spec)?;
    let normalizer = fit_normalizer(series, spans.train.clone())?;
    let train = make_windows(&series.slice(spans.train.clone()), &normalizer)?;
    let val = windows_for_labels(series, &normalizer, spans.val)?;
    let test = windows_for_labels(series, &normalizer, spans.test)?;
    Ok(CityData { graphs: CityGraphs::new(graph)?, normalizer, train, val, test })
}

/// Generates the synthetic pair and prepares both cities.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(CityData, CityData)> {
    let (src, tgt) = synth_city_pair(&cfg.synth)?;
    let noisy = add_gaussian_noise(&src.demand, cfg.source_noise_sd, cfg.synth.seed ^ 0x5eed)?;
    Ok((source_data(&noisy, &src.graph)?, target_data(&tgt.demand, &tgt.graph, &cfg.split)?))
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub pretrain: StageOutcome,
    pub finetune: StageOutcome,
    pub pretrain_checkpoint: Checkpoint,
    pub test: MetricReport,
    /// Test metrics of the pre-trained model before fine-tuning.
    pub pretrain_test: MetricReport,
}

/// Pre-train on both cities, then fine-tune on the target.
pub fn run_transfer(cfg: &ExperimentConfig, source: &CityData, target: &CityData) -> Result<TransferOutcome> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone(), cfg.pretrain.seed)?;
    let pre = pretrain(model, source, target, &cfg.pretrain)?;
    let checkpoint = Checkpoint::from_model(&pre.model);
    let pretrain_test = evaluate(&pre.model, target, &target.test, CityRole::Target)?;
    let ft = crate::training::finetune(&checkpoint, target, &cfg.finetune)?;
    let test = evaluate(&ft.model, target, &target.test, CityRole::Target)?;
    Ok(TransferOutcome { pretrain: pre, finetune: ft, pretrain_checkpoint: checkpoint, test, pretrain_test })
}

/// Same architecture trained on the target alone with the fine-tune budget.
pub fn run_scratch(cfg: &ExperimentConfig, target: &CityData) -> Result<(StageOutcome, MetricReport)> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone(), cfg.finetune.seed)?;
    let out = train_target(model, target, &cfg.finetune, Stage::Scratch, false)?;
    let test = evaluate(&out.model, target, &target.test, CityRole::Target)?;
    Ok((out, test))
}

/// Configuration of one ablation variant.
pub fn variant_config(base: &ExperimentConfig, variant: Variant) -> ExperimentConfig {
    let mut c = base.clone();
    variant.apply(&mut c.model, &mut c.pretrain);
    variant.apply(&mut c.model.clone(), &mut c.finetune);
    c
}

/// Median test metrics of each variant over `seeds`, in the given order.
pub fn run_ablation(base: &ExperimentConfig, variants: &[Variant], seeds: &[u64]) -> Result<Vec<SummaryRow>> {
    variants
        .iter()
        .map(|&v| {
            let reports = seeds
                .iter()
                .map(|&s| {
                    let cfg = variant_config(&base.with_seed(s), v);
                    let (source, target) = prepare(&cfg)?;
                    Ok(run_transfer(&cfg, &source, &target)?.test)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SummaryRow::from_reports(v.name(), &reports))
        })
        .collect()
}

/// One cell of the source-quality grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityCell {
    pub source_days: u32,
    pub noise_sd: f64,
    pub row: SummaryRow,
}

/// Source-quality study: target test metrics for every combination of
/// source duration and source noise.
pub fn source_quality_study(base: &ExperimentConfig, noise_sds: &[f64], durations: &[u32], seeds: &[u64]) -> Result<Vec<QualityCell>> {
    let mut cells = Vec::new();
    for &days in durations {
        for &sd in noise_sds {
            let reports = seeds
                .iter()
                .map(|&s| {
                    let mut cfg = base.with_seed(s);
                    cfg.synth.source_days = days;
                    cfg.source_noise_sd = sd;
                    let (source, target) = prepare(&cfg)?;
                    Ok(run_transfer(&cfg, &source, &target)?.test)
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(QualityCell {
                source_days: days,
                noise_sd: sd,
                row: SummaryRow::from_reports(format!("{days}d sd={sd}"), &reports),
            });
        }
    }
    Ok(cells)
}

/// Kendall τ between source duration and benefit (negated median MAE) over
/// the noise-free cells of a quality grid.
pub fn duration_trend(cells: &[QualityCell]) -> f64 {
    let clean: Vec<&QualityCell> = cells.iter().filter(|c| c.noise_sd == 0.0).collect();
    let days: Vec<f64> = clean.iter().map(|c| c.source_days as f64).collect();
    let benefit: Vec<f64> = clean.iter().map(|c| -c.row.median_mae).collect();
    kendall_tau(&days, &benefit)
}

/// Median over seeds of a per-seed value.
pub fn median_over<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    let v: Vec<f64> = items.iter().map(f).collect();
    median(&v)
}
