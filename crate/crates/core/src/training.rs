//! Loss composition, joint pre-training on both cities, fine-tuning on the
//! target with frozen common memory, checkpoints and parameter counting.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::datasets::{Normalizer, Window};
use crate::error::{Error, Result};
use crate::evaluation::{dense_grads, MetricAccumulator, MetricReport};
use crate::memory::CityRole;
use crate::model::{CityForward, CityGraphs, ForwardOptions, Model, ModelConfig};
use crate::optim::Adam;
use crate::params::{ParamKind, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Optimiser steps per epoch, cycling the data; `None` runs the longer
    /// stream once.
    #[serde(default)]
    pub iterations_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            beta1: 0.5,
            beta2: 1.0,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            iterations_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda1, self.lambda2, self.beta1, self.beta2];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(Error::invalid("iterations per epoch must be positive"));
        }
        Ok(())
    }
}

/// One city's prepared inputs.
#[derive(Clone, Debug)]
pub struct CityData {
    pub graphs: CityGraphs,
    pub normalizer: Normalizer,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

/// A weighted city loss and its parts (already multiplied by their weights).
#[derive(Clone, Copy, Debug)]
pub struct CityLoss {
    pub total: Var,
    pub prediction: f64,
    pub reconstruction: f64,
    pub aux: f64,
}

/// `Σ_l L_pred^(l) + λ₁·L_rec + λ₂·Σ_l L_aux^(l)` for one forward pass. The
/// reconstruction and auxiliary terms are skipped when their weight is 0.
pub fn city_loss(tape: &mut Tape, forward: &CityForward, lambda1: f64, lambda2: f64) -> CityLoss {
    let pred = forward.prediction_loss(tape);
    let mut out = CityLoss { total: pred, prediction: tape.scalar(pred), reconstruction: 0.0, aux: 0.0 };
    if lambda1 != 0.0 {
        if let Some(rec) = forward.reconstruction {
            let w = tape.scale(rec, lambda1);
            out.reconstruction = tape.scalar(w);
            out.total = tape.add(out.total, w);
        }
    }
    if lambda2 != 0.0 {
        if let Some(aux) = forward.aux_loss(tape) {
            let w = tape.scale(aux, lambda2);
            out.aux = tape.scalar(w);
            out.total = tape.add(out.total, w);
        }
    }
    out
}

fn options(cfg: &TrainConfig) -> ForwardOptions {
    ForwardOptions { reconstruction: cfg.lambda1 != 0.0, auxiliary: cfg.lambda2 != 0.0 }
}

/// Batch of one city on a tape: mean city loss and per-level stacked queries.
struct BatchPass {
    loss: Var,
    reconstruction: f64,
    aux: f64,
    queries: Vec<Var>,
}

fn batch_pass(
    tape: &mut Tape,
    model: &Model,
    city: &CityData,
    windows: &[&Window],
    role: CityRole,
    cfg: &TrainConfig,
    keep_queries: bool,
) -> Result<BatchPass> {
    let a_hat: Vec<Var> = city.graphs.a_hat.iter().map(|m| tape.constant(m.clone())).collect();
    let views: Vec<Var> = city.graphs.views.iter().map(|m| tape.constant(m.clone())).collect();
    let fwd = model.forward(tape, &a_hat, &views, windows, role, options(cfg))?;
    let l = city_loss(tape, &fwd, cfg.lambda1, cfg.lambda2);
    let queries = if keep_queries { fwd.queries } else { Vec::new() };
    Ok(BatchPass { loss: l.total, reconstruction: l.reconstruction, aux: l.aux, queries })
}

const EVAL_BATCH: usize = 32;

/// Level-0 metrics of `windows` in demand units.
pub fn evaluate(model: &Model, city: &CityData, windows: &[Window], role: CityRole) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::default();
    for chunk in windows.chunks(EVAL_BATCH) {
        let refs: Vec<&Window> = chunk.iter().collect();
        for (w, pred) in chunk.iter().zip(model.predict_batch(&city.graphs, &refs, role)?) {
            acc.push_normalized(&city.normalizer, w, &pred);
        }
    }
    acc.report()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
    Scratch,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Scratch => "scratch",
        }
    }
}

/// Mean training losses of one epoch and the validation metrics after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    #[serde(rename = "L_S")]
    pub l_s: f64,
    #[serde(rename = "L_T")]
    pub l_t: f64,
    #[serde(rename = "L_dom")]
    pub l_dom: f64,
    #[serde(rename = "L_rec")]
    pub l_rec: f64,
    #[serde(rename = "L_aux")]
    pub l_aux: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
}

/// Named parameter tensors plus the list of names frozen at fine-tune time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub frozen: Vec<String>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            model: model.config.clone(),
            params: model.store.clone(),
            frozen: model.frozen_names().into_iter().map(String::from).collect(),
        }
    }

    /// Rebuilds the model, checking names, shapes, kinds and the frozen list.
    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::new(self.model.clone(), 0)?;
        let expected: Vec<String> = model.frozen_names().into_iter().map(String::from).collect();
        if expected != self.frozen {
            return Err(Error::CheckpointMismatch(format!(
                "frozen set {:?} does not match the model's {:?}",
                self.frozen, expected
            )));
        }
        if self.params.len() != model.store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint has {} tensors, model {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (id, p) in self.params.iter() {
            let slot = model
                .store
                .find(&p.name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("unknown tensor '{}'", p.name)))?;
            let current = model.store.get(slot);
            if current.kind != p.kind || current.value.shape() != p.value.shape() {
                return Err(Error::CheckpointMismatch(format!("tensor '{}' differs in kind or shape", p.name)));
            }
            if slot != id {
                return Err(Error::CheckpointMismatch(format!("tensor '{}' is out of order", p.name)));
            }
            if !p.value.is_finite() {
                return Err(Error::CheckpointMismatch(format!("tensor '{}' holds non-finite values", p.name)));
            }
            *model.store.value_mut(slot) = p.value.clone();
        }
        Ok(model)
    }
}

/// Result of a training stage: the best model and the per-epoch log.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub model: Model,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: MetricReport,
}

fn check_finite(value: f64, stage: &'static str, epoch: usize, iteration: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { stage, epoch, iteration })
    }
}

/// Keeps the lowest-validation-MAE snapshot and counts stale epochs.
struct EarlyStop {
    best: Option<(MetricReport, ParamStore, usize)>,
    stale: usize,
    patience: usize,
}

impl EarlyStop {
    /// Returns true when training should stop.
    fn observe(&mut self, report: MetricReport, store: &ParamStore, epoch: usize) -> bool {
        match &self.best {
            Some((b, _, _)) if report.mae >= b.mae => {
                self.stale += 1;
                self.stale >= self.patience
            }
            _ => {
                self.best = Some((report, store.clone(), epoch));
                self.stale = 0;
                false
            }
        }
    }
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ (stage as u64 + 1)
}

/// Called after every epoch with the log line and the current (not the best)
/// model.
pub type Observer<'a> = &'a mut dyn FnMut(&EpochLog, &Model);

/// Joint training on both cities: `L_S + β₁·L_T + β₂·Σ_l L_dom^(l)` with one
/// Adam step per paired batch. The shorter window stream cycles.
pub fn pretrain(model: Model, source: &CityData, target: &CityData, cfg: &TrainConfig) -> Result<StageOutcome> {
    pretrain_observed(model, source, target, cfg, &mut |_, _| {})
}

/// [`pretrain`] reporting each epoch to `observer`.
pub fn pretrain_observed(
    mut model: Model,
    source: &CityData,
    target: &CityData,
    cfg: &TrainConfig,
    observer: Observer,
) -> Result<StageOutcome> {
    cfg.validate()?;
    model.check_city(&source.graphs)?;
    model.check_city(&target.graphs)?;
    if source.train.is_empty() || target.train.is_empty() || target.val.is_empty() {
        return Err(Error::invalid("pre-training needs source and target training windows and target validation windows"));
    }
    let stage = Stage::Pretrain;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, stage));
    let mut adam = Adam::new(&model.store, cfg.lr, |_| true);
    let mut src_order: Vec<usize> = (0..source.train.len()).collect();
    let mut tgt_order: Vec<usize> = (0..target.train.len()).collect();
    let src_batches = source.train.len().div_ceil(cfg.batch_size);
    let tgt_batches = target.train.len().div_ceil(cfg.batch_size);
    let per_epoch = cfg.iterations_per_epoch.unwrap_or(src_batches.max(tgt_batches));
    let (mut src_cursor, mut tgt_cursor) = (src_batches, tgt_batches);
    let adversarial = cfg.beta2 != 0.0;

    let mut stop = EarlyStop { best: None, stale: 0, patience: cfg.patience };
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut sums = [0.0f64; 5];
        for it in 0..per_epoch {
            if src_cursor == src_batches {
                src_order.shuffle(&mut rng);
                src_cursor = 0;
            }
            if tgt_cursor == tgt_batches {
                tgt_order.shuffle(&mut rng);
                tgt_cursor = 0;
            }
            let src_batch: Vec<&Window> = batch_slice(&src_order, src_cursor, cfg.batch_size).map(|i| &source.train[i]).collect();
            let tgt_batch: Vec<&Window> = batch_slice(&tgt_order, tgt_cursor, cfg.batch_size).map(|i| &target.train[i]).collect();
            src_cursor += 1;
            tgt_cursor += 1;

            let mut tape = Tape::new();
            let s = batch_pass(&mut tape, &model, source, &src_batch, CityRole::Source, cfg, adversarial)?;
            let t = batch_pass(&mut tape, &model, target, &tgt_batch, CityRole::Target, cfg, adversarial)?;
            let weighted_t = tape.scale(t.loss, cfg.beta1);
            let mut loss = tape.add(s.loss, weighted_t);
            let mut l_dom = 0.0;
            if adversarial {
                let dom = model.domain_loss(&mut tape, &s.queries, &t.queries)?;
                let weighted = tape.scale(dom, cfg.beta2);
                l_dom = tape.scalar(weighted);
                loss = tape.add(loss, weighted);
            }
            check_finite(tape.scalar(loss), stage.name(), epoch, it)?;
            let grads = tape.backward(loss);
            let grads = dense_grads(&tape, &grads, model.store.len());
            adam.step(&mut model.store, &grads);

            sums[0] += tape.scalar(s.loss);
            sums[1] += tape.scalar(t.loss);
            sums[2] += l_dom;
            sums[3] += s.reconstruction + t.reconstruction;
            sums[4] += s.aux + t.aux;
        }
        let val = evaluate(&model, target, &target.val, CityRole::Target)?;
        check_finite(val.mae, stage.name(), epoch, per_epoch)?;
        let n = per_epoch as f64;
        history.push(EpochLog {
            epoch,
            stage,
            l_s: sums[0] / n,
            l_t: sums[1] / n,
            l_dom: sums[2] / n,
            l_rec: sums[3] / n,
            l_aux: sums[4] / n,
            val_mae: val.mae,
            val_rmse: val.rmse,
        });
        observer(history.last().unwrap(), &model);
        if stop.observe(val, &model.store, epoch) {
            break;
        }
    }
    finish(model, history, stop)
}

fn batch_slice(order: &[usize], batch: usize, size: usize) -> impl Iterator<Item = usize> + '_ {
    let start = batch * size;
    order[start..(start + size).min(order.len())].iter().copied()
}

fn finish(mut model: Model, history: Vec<EpochLog>, stop: EarlyStop) -> Result<StageOutcome> {
    let (best_val, store, best_epoch) = stop.best.ok_or_else(|| Error::invalid("training ran for zero epochs"))?;
    model.store = store;
    Ok(StageOutcome { model, history, best_epoch, best_val })
}

/// Target-only training on `L_T`. With `freeze_common` the common memory is
/// left out of the optimiser and checked bitwise afterwards.
pub fn train_target(model: Model, target: &CityData, cfg: &TrainConfig, stage: Stage, freeze_common: bool) -> Result<StageOutcome> {
    train_target_observed(model, target, cfg, stage, freeze_common, &mut |_, _| {})
}

/// [`train_target`] reporting each epoch to `observer`.
pub fn train_target_observed(
    mut model: Model,
    target: &CityData,
    cfg: &TrainConfig,
    stage: Stage,
    freeze_common: bool,
    observer: Observer,
) -> Result<StageOutcome> {
    cfg.validate()?;
    model.check_city(&target.graphs)?;
    if target.train.is_empty() || target.val.is_empty() {
        return Err(Error::invalid("target training needs training and validation windows"));
    }
    let frozen: Vec<(crate::params::ParamId, crate::tensor::Mat)> = model
        .store
        .iter()
        .filter(|(_, p)| freeze_common && p.kind == ParamKind::CommonMemory)
        .map(|(id, p)| (id, p.value.clone()))
        .collect();
    let kinds: Vec<ParamKind> = model.store.iter().map(|(_, p)| p.kind).collect();
    let mut adam = Adam::new(&model.store, cfg.lr, |id| !(freeze_common && kinds[id.0] == ParamKind::CommonMemory));
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, stage));
    let mut order: Vec<usize> = (0..target.train.len()).collect();
    let batches = target.train.len().div_ceil(cfg.batch_size);
    let per_epoch = cfg.iterations_per_epoch.unwrap_or(batches);
    let mut cursor = batches;

    let mut stop = EarlyStop { best: None, stale: 0, patience: cfg.patience };
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut sums = [0.0f64; 3];
        for it in 0..per_epoch {
            if cursor == batches {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let batch: Vec<&Window> = batch_slice(&order, cursor, cfg.batch_size).map(|i| &target.train[i]).collect();
            cursor += 1;
            let mut tape = Tape::new();
            let t = batch_pass(&mut tape, &model, target, &batch, CityRole::Target, cfg, false)?;
            check_finite(tape.scalar(t.loss), stage.name(), epoch, it)?;
            let grads = tape.backward(t.loss);
            let grads = dense_grads(&tape, &grads, model.store.len());
            adam.step(&mut model.store, &grads);
            sums[0] += tape.scalar(t.loss);
            sums[1] += t.reconstruction;
            sums[2] += t.aux;
        }
        let val = evaluate(&model, target, &target.val, CityRole::Target)?;
        check_finite(val.mae, stage.name(), epoch, per_epoch)?;
        let n = per_epoch as f64;
        history.push(EpochLog {
            epoch,
            stage,
            l_s: 0.0,
            l_t: sums[0] / n,
            l_dom: 0.0,
            l_rec: sums[1] / n,
            l_aux: sums[2] / n,
            val_mae: val.mae,
            val_rmse: val.rmse,
        });
        observer(history.last().unwrap(), &model);
        if stop.observe(val, &model.store, epoch) {
            break;
        }
    }
    let out = finish(model, history, stop)?;
    for (id, before) in &frozen {
        if out.model.store.value(*id).as_slice().iter().zip(before.as_slice()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::CheckpointMismatch(format!("frozen tensor '{}' changed", out.model.store.get(*id).name)));
        }
    }
    Ok(out)
}

/// Fine-tuning from a pre-training checkpoint, common memory frozen.
pub fn finetune(checkpoint: &Checkpoint, target: &CityData, cfg: &TrainConfig) -> Result<StageOutcome> {
    let model = checkpoint.restore()?;
    train_target(model, target, cfg, Stage::Finetune, true)
}

/// Trainable scalar count and its per-module split.
pub fn count_parameters(model: &Model) -> (usize, Vec<(&'static str, usize)>) {
    (model.parameter_count(), model.parameter_breakdown())
}

/// Stable identifier of a stage for log lines.
pub fn describe(log: &EpochLog) -> String {
    format!(
        "{} epoch {}: L_S {:.5} L_T {:.5} L_dom {:.5} val MAE {:.4}",
        log.stage.name(),
        log.epoch,
        log.l_s,
        log.l_t,
        log.l_dom,
        log.val_mae
    )
}
