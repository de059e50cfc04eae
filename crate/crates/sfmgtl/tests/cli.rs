use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sfmgtl::config::to_toml;
use sfmgtl::rundir::{read_manifest, read_snapshot, FileDigest, METRICS_KEYS};
use sfmgtl::tables::MetricsDoc;
use sfmgtl_core::datasets::{SplitSpec, SynthConfig};
use sfmgtl_core::experiment::ExperimentConfig;
use sfmgtl_core::model::ModelConfig;
use sfmgtl_core::training::TrainConfig;

fn tiny() -> ExperimentConfig {
    let train = TrainConfig { batch_size: 8, max_epochs: 2, patience: 2, iterations_per_epoch: Some(2), ..TrainConfig::default() };
    ExperimentConfig {
        synth: SynthConfig { source_side: 4, target_side: 4, source_days: 2, target_days: 3, ..SynthConfig::default() },
        split: SplitSpec { target_train_days: 1, val_days: 1, test_days: 1 },
        model: ModelConfig { hidden_dim: 6, mlp_hidden: 10, cluster_sizes: vec![4, 2], ..ModelConfig::paper() },
        pretrain: train.clone(),
        finetune: train,
        source_noise_sd: 0.0,
    }
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sfmgtl(dir: &Path, args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_sfmgtl")).args(args).current_dir(dir).env("SFMGTL_THREADS", "1").output().unwrap();
    Out {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Out {
    let o = sfmgtl(dir, args);
    assert_eq!(o.code, 0, "{args:?} failed:\n{}", o.stderr);
    o
}

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, to_toml(&tiny()).unwrap()).unwrap();
    (tmp, cfg)
}

/// Path to contents of every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn exit_codes() {
    let (tmp, cfg) = workspace();
    let dir = tmp.path();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(sfmgtl(dir, &["--help"]).code, 0);
    assert_eq!(sfmgtl(dir, &["--version"]).code, 0);

    let unknown = sfmgtl(dir, &["params", "--bogus"]);
    assert_eq!(unknown.code, 1);
    assert!(unknown.stderr.contains("Usage"), "{}", unknown.stderr);
    assert_eq!(sfmgtl(dir, &["frobnicate"]).code, 1);
    assert_eq!(sfmgtl(dir, &["finetune", "--config", cfg]).code, 1);

    assert_eq!(sfmgtl(dir, &["params", "--config", cfg, "--set", "model.no_such_key=1"]).code, 1);
    assert_eq!(sfmgtl(dir, &["params", "--config", cfg, "--set", "model.hidden_dim=0"]).code, 1);
    assert_eq!(sfmgtl(dir, &["params", "--config", "no_such_preset"]).code, 1);
    assert_eq!(sfmgtl(dir, &["ablate", "--config", cfg, "--variants", "full,no_such"]).code, 1);

    fs::write(dir.join("broken.json"), "{}").unwrap();
    assert_eq!(sfmgtl(dir, &["evaluate", "--config", cfg, "--checkpoint", "broken.json"]).code, 1);
    assert_eq!(sfmgtl(dir, &["evaluate", "--config", cfg, "--checkpoint", "missing.json"]).code, 2);

    let p = ok(dir, &["params", "--config", cfg, "--out", "p"]);
    assert!(p.stdout.contains("total"));
    assert!(dir.join("p/config.snapshot").exists());
    assert!(dir.join("p/manifest.json").exists());
}

#[test]
fn file_pipeline_runs_end_to_end_without_touching_inputs() {
    let (tmp, cfg) = workspace();
    let dir = tmp.path();
    let cfg = cfg.to_str().unwrap();
    ok(dir, &["synth", "--config", cfg, "--seed", "3", "--out", "gen"]);
    let data = dir.join("gen/data");
    assert!(data.join("source/demand.csv").exists());
    assert!(data.join("target/poi.csv").exists());

    let before = tree(dir);
    ok(dir, &["build-graphs", "--config", cfg, "--data", "gen/data", "--out", "graphs"]);
    assert_eq!(tree(&dir.join("gen")), before.iter().filter_map(|(p, b)| Some((p.strip_prefix("gen").ok()?.to_path_buf(), b.clone()))).collect());
    assert!(dir.join("graphs/data/target/graphs.json").exists());

    let data = "graphs/data";
    let snapshot = tree(&dir.join(data));
    ok(dir, &["pretrain", "--config", cfg, "--seed", "3", "--data", data, "--out", "pre"]);
    ok(dir, &["finetune", "--config", cfg, "--seed", "3", "--data", data, "--checkpoint", "pre/checkpoints/pretrain.json", "--out", "ft"]);
    ok(dir, &["finetune", "--config", cfg, "--seed", "3", "--data", data, "--from-scratch", "--out", "scratch"]);
    let eval = ok(
        dir,
        &[
            "evaluate",
            "--config",
            cfg,
            "--seed",
            "3",
            "--data",
            data,
            "--checkpoint",
            "ft/checkpoints/finetune.json",
            "--compare",
            "scratch/checkpoints/scratch.json",
            "--baselines",
            "--out",
            "eval",
        ],
    );
    assert!(eval.stdout.contains("gru"));
    assert_eq!(tree(&dir.join(data)), snapshot, "a command modified its dataset");

    for run in ["pre", "ft", "scratch"] {
        let root = dir.join(run);
        let lines = fs::read_to_string(root.join("metrics.jsonl")).unwrap();
        assert!(!lines.is_empty());
        for line in lines.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
            let mut expect = METRICS_KEYS.to_vec();
            expect.sort();
            let mut keys = keys;
            keys.sort();
            assert_eq!(keys, expect);
        }
        for f in ["config.snapshot", "tables/metrics.csv", "tables/metrics.json", "plots/loss_curves.svg"] {
            assert!(root.join(f).exists(), "{run}/{f}");
        }
        let doc: MetricsDoc = serde_json::from_str(&fs::read_to_string(root.join("tables/metrics.json")).unwrap()).unwrap();
        assert!(doc.test.mae.is_finite());
        assert_eq!(doc.seed, 3);
        assert_eq!(read_snapshot(&root).unwrap(), tiny().with_seed(3));
    }
    let doc: MetricsDoc = serde_json::from_str(&fs::read_to_string(dir.join("eval/tables/metrics.json")).unwrap()).unwrap();
    let names: Vec<&str> = doc.baselines.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["compare_scratch", "ha", "gru"]);
    for f in ["weekly_series.csv", "weekly_series_pickup.svg", "region_map.csv", "region_map_dropoff.svg"] {
        assert!(dir.join("eval/plots").join(f).exists(), "{f}");
    }

    // Manifest digests describe the files on disk.
    let manifest = read_manifest(&dir.join("ft")).unwrap();
    assert!(manifest.inputs.iter().any(|d| d.path == "checkpoint:checkpoints/input.json"));
    assert!(manifest.inputs.iter().any(|d| d.path == "data:target/demand.csv"));
    for d in &manifest.outputs {
        assert_eq!(&FileDigest::of(&dir.join("ft").join(&d.path), d.path.clone()).unwrap(), d);
    }

    let redraw = ok(dir, &["plot", "--run", "pre", "--out", "redraw"]);
    assert!(redraw.stdout.contains("redraw"));
    assert!(dir.join("redraw/plots/val_mae.svg").exists());
}

#[test]
fn resumed_runs_reproduce_metrics_bitwise() {
    let (tmp, cfg) = workspace();
    let dir = tmp.path();
    let cfg = cfg.to_str().unwrap();
    ok(dir, &["pretrain", "--config", cfg, "--set", "pretrain.lr=0.002", "--seed", "5", "--out", "pre"]);
    ok(dir, &["finetune", "--config", cfg, "--seed", "5", "--checkpoint", "pre/checkpoints/pretrain.json", "--out", "ft"]);
    ok(dir, &["pretrain", "--resume-from", "pre", "--out", "pre2"]);
    ok(dir, &["finetune", "--resume-from", "ft"]);
    for (a, b) in [("pre", "pre2"), ("ft", "ft-resumed")] {
        for f in ["tables/metrics.json", "metrics.jsonl", "config.snapshot"] {
            assert_eq!(fs::read(dir.join(a).join(f)).unwrap(), fs::read(dir.join(b).join(f)).unwrap(), "{b}/{f}");
        }
    }
    assert_eq!(read_snapshot(&dir.join("pre2")).unwrap().pretrain.lr, 0.002);

    // Same seed and config from scratch: same bytes.
    ok(dir, &["pretrain", "--config", cfg, "--set", "pretrain.lr=0.002", "--seed", "5", "--out", "pre3"]);
    assert_eq!(fs::read(dir.join("pre/tables/metrics.json")).unwrap(), fs::read(dir.join("pre3/tables/metrics.json")).unwrap());

    assert_eq!(sfmgtl(dir, &["pretrain", "--resume-from", "pre", "--out", "pre"]).code, 1);
    assert_eq!(sfmgtl(dir, &["finetune", "--resume-from", "pre", "--out", "x"]).code, 1);
}

#[test]
fn resume_refuses_a_changed_dataset() {
    let (tmp, cfg) = workspace();
    let dir = tmp.path();
    let cfg = cfg.to_str().unwrap();
    ok(dir, &["synth", "--config", cfg, "--out", "gen"]);
    ok(dir, &["pretrain", "--config", cfg, "--data", "gen/data", "--out", "pre"]);
    let demand = dir.join("gen/data/target/demand.csv");
    let text = fs::read_to_string(&demand).unwrap();
    fs::write(&demand, text.replacen(",0,", ",1,", 1)).unwrap();
    let o = sfmgtl(dir, &["pretrain", "--resume-from", "pre", "--out", "again"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("changed"), "{}", o.stderr);
}

#[test]
fn out_dir_may_not_sit_inside_the_dataset() {
    let (tmp, cfg) = workspace();
    let dir = tmp.path();
    let cfg = cfg.to_str().unwrap();
    ok(dir, &["synth", "--config", cfg, "--out", "gen"]);
    assert_eq!(sfmgtl(dir, &["build-graphs", "--config", cfg, "--data", "gen/data", "--out", "gen/data/x"]).code, 1);
}
