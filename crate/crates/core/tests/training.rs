use sfmgtl_core::datasets::{add_gaussian_noise, synth_city_pair, SplitSpec, SynthConfig};
use sfmgtl_core::evaluation::Variant;
use sfmgtl_core::experiment::{prepare, run_scratch, run_transfer, variant_config, ExperimentConfig};
use sfmgtl_core::model::{Model, ModelConfig};
use sfmgtl_core::params::ParamKind;
use sfmgtl_core::training::{finetune, pretrain, train_target, Checkpoint, Stage, TrainConfig};

fn tiny() -> ExperimentConfig {
    let train = TrainConfig { batch_size: 8, max_epochs: 3, patience: 3, iterations_per_epoch: Some(3), ..TrainConfig::default() };
    ExperimentConfig {
        synth: SynthConfig { source_side: 4, target_side: 4, source_days: 2, target_days: 3, ..SynthConfig::default() },
        split: SplitSpec { target_train_days: 1, val_days: 1, test_days: 1 },
        model: ModelConfig { hidden_dim: 6, mlp_hidden: 10, cluster_sizes: vec![4, 2], ..ModelConfig::paper() },
        pretrain: train.clone(),
        finetune: TrainConfig { lr: 1e-2, ..train },
        source_noise_sd: 0.0,
    }
}

fn values_of(store: &sfmgtl_core::params::ParamStore, kind: ParamKind) -> Vec<(String, Vec<u64>)> {
    store
        .iter()
        .filter(|(_, p)| p.kind == kind)
        .map(|(_, p)| (p.name.clone(), p.value.as_slice().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

#[test]
fn finetune_freezes_common_memory_and_moves_private_memory() {
    let cfg = tiny();
    let (source, target) = prepare(&cfg).unwrap();
    let pre = pretrain(Model::new(cfg.model.clone(), 0).unwrap(), &source, &target, &cfg.pretrain).unwrap();
    let ckpt = Checkpoint::from_model(&pre.model);
    let ft = finetune(&ckpt, &target, &cfg.finetune).unwrap();
    let common = values_of(&ckpt.params, ParamKind::CommonMemory);
    assert_eq!(common.len(), 3);
    assert_eq!(common, values_of(&ft.model.store, ParamKind::CommonMemory));
    assert_ne!(values_of(&ckpt.params, ParamKind::PrivateMemory), values_of(&ft.model.store, ParamKind::PrivateMemory));
}

#[test]
fn unfrozen_target_training_moves_common_memory() {
    let cfg = tiny();
    let (_, target) = prepare(&cfg).unwrap();
    let model = Model::new(cfg.model.clone(), 0).unwrap();
    let before = values_of(&model.store, ParamKind::CommonMemory);
    let out = train_target(model, &target, &cfg.finetune, Stage::Scratch, false).unwrap();
    assert_ne!(before, values_of(&out.model.store, ParamKind::CommonMemory));
}

#[test]
fn zero_target_weights_leave_private_memory_untouched() {
    let mut cfg = tiny();
    cfg.pretrain.beta1 = 0.0;
    cfg.pretrain.beta2 = 0.0;
    let (source, target) = prepare(&cfg).unwrap();
    let model = Model::new(cfg.model.clone(), 0).unwrap();
    let private = values_of(&model.store, ParamKind::PrivateMemory);
    let common = values_of(&model.store, ParamKind::CommonMemory);
    let out = pretrain(model, &source, &target, &cfg.pretrain).unwrap();
    assert_eq!(private, values_of(&out.model.store, ParamKind::PrivateMemory));
    assert_ne!(common, values_of(&out.model.store, ParamKind::CommonMemory));
}

#[test]
fn identical_configs_reproduce_bitwise() {
    let cfg = tiny();
    let run = || {
        let (source, target) = prepare(&cfg).unwrap();
        let t = run_transfer(&cfg, &source, &target).unwrap();
        let s = run_scratch(&cfg, &target).unwrap();
        (t.test, t.pretrain.history, t.finetune.model.store, s.1)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.mae.to_bits(), b.0.mae.to_bits());
    assert_eq!(a.0.rmse.to_bits(), b.0.rmse.to_bits());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.3, b.3);
    let other = cfg.with_seed(1);
    let (source, target) = prepare(&other).unwrap();
    assert_ne!(run_transfer(&other, &source, &target).unwrap().test, a.0);
}

#[test]
fn each_variant_changes_only_its_knob() {
    let base = ExperimentConfig::desk();
    assert_eq!(variant_config(&base, Variant::Full), base);

    let mut expect = base.clone();
    expect.pretrain.lambda1 = 0.0;
    expect.finetune.lambda1 = 0.0;
    assert_eq!(variant_config(&base, Variant::NoRl), expect);

    let mut expect = base.clone();
    expect.model.cluster_sizes.clear();
    assert_eq!(variant_config(&base, Variant::NoHnc), expect);

    let mut expect = base.clone();
    expect.pretrain.beta2 = 0.0;
    expect.finetune.beta2 = 0.0;
    assert_eq!(variant_config(&base, Variant::NoAt), expect);

    let mut expect = base.clone();
    expect.model.private_slots = 0;
    assert_eq!(variant_config(&base, Variant::NoPmt), expect);
}

#[test]
fn zero_noise_leaves_source_bitwise_unchanged() {
    let cfg = tiny();
    let (src, _) = synth_city_pair(&cfg.synth).unwrap();
    let same = add_gaussian_noise(&src.demand, 0.0, 99).unwrap();
    assert!(same.values().iter().zip(src.demand.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let noisy = add_gaussian_noise(&src.demand, 1.0, 99).unwrap();
    assert_ne!(noisy.values(), src.demand.values());
    assert_eq!(noisy, add_gaussian_noise(&src.demand, 1.0, 99).unwrap());
}

#[test]
fn variant_models_train() {
    let base = tiny();
    let (source, target) = prepare(&base).unwrap();
    for v in Variant::ALL {
        let cfg = variant_config(&base, v);
        let out = run_transfer(&cfg, &source, &target).unwrap();
        assert!(out.test.mae.is_finite(), "{}", v.name());
        let frozen = out.finetune.model.frozen_names().len();
        assert_eq!(frozen, cfg.model.levels(), "{}", v.name());
    }
}
