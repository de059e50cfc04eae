use std::fs;

use sfmgtl::checkpoint::{self, Archive};
use sfmgtl::formats::{read_demand, read_json, read_poi, read_roads, source_dir, target_dir, write_city, write_json, DEMAND_FILE};
use sfmgtl::runner;
use sfmgtl::Error;
use sfmgtl_core::datasets::{synth_city_pair, SplitSpec, SynthConfig};
use sfmgtl_core::experiment::{self, ExperimentConfig};
use sfmgtl_core::model::{Model, ModelConfig};
use sfmgtl_core::params::ParamKind;
use sfmgtl_core::training::{Checkpoint, Stage};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        synth: SynthConfig { source_side: 4, target_side: 5, source_days: 2, target_days: 3, ..SynthConfig::default() },
        split: SplitSpec { target_train_days: 1, val_days: 1, test_days: 1 },
        model: ModelConfig { hidden_dim: 6, mlp_hidden: 10, cluster_sizes: vec![4, 2], ..ModelConfig::paper() },
        source_noise_sd: 0.7,
        ..ExperimentConfig::desk()
    }
}

#[test]
fn written_cities_read_back_exactly() {
    let cfg = small();
    let tmp = tempfile::tempdir().unwrap();
    let (s, t) = synth_city_pair(&cfg.synth).unwrap();
    write_city(&source_dir(tmp.path()), &s).unwrap();
    write_city(&target_dir(tmp.path()), &t).unwrap();

    let dir = target_dir(tmp.path());
    assert_eq!(read_demand(&dir.join(DEMAND_FILE), 25).unwrap(), t.demand);
    assert_eq!(read_poi(&dir.join("poi.csv"), 25).unwrap(), t.poi_counts);
    let roads = read_roads(&dir.join("roads.csv")).unwrap();
    assert_eq!(roads.len(), t.road_segments.len());
    for (a, b) in roads.iter().zip(&t.road_segments) {
        assert_eq!((a.cell_i, a.cell_j, a.highway.clone()), (b.cell_i, b.cell_j, b.highway.to_string()));
    }

    // Data prepared from the files is the data prepared from the generator.
    let (fs_src, fs_tgt) = runner::prepare(&cfg, Some(tmp.path())).unwrap();
    let (gen_src, gen_tgt) = experiment::prepare(&cfg).unwrap();
    for (a, b) in [(&fs_src, &gen_src), (&fs_tgt, &gen_tgt)] {
        assert_eq!(a.graphs.views, b.graphs.views);
        assert_eq!(a.graphs.a_hat, b.graphs.a_hat);
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
    }
}

#[test]
fn malformed_demand_files_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join(DEMAND_FILE);
    let cases = [
        ("timestamp,cell,pickup,dropoff\n2016-01-04T00:00,0,1,1\n", "header"),
        ("timestamp,cell_id,pickup,dropoff\n2016-01-04T00:00,4,1,1\n", "outside"),
        ("timestamp,cell_id,pickup,dropoff\n2016-01-04T00:00,0,1,1\n2016-01-04T00:00,0,2,2\n", "duplicate"),
        ("timestamp,cell_id,pickup,dropoff\n2016-01-04T00:30,0,1,1\n", "row 1"),
        ("timestamp,cell_id,pickup,dropoff\n2016-01-04T00:00,0,-1,1\n", ""),
        ("timestamp,cell_id,pickup,dropoff\n", "no demand"),
    ];
    for (text, needle) in cases {
        fs::write(&path, text).unwrap();
        match read_demand(&path, 4) {
            Err(Error::Invalid(msg)) => assert!(msg.contains(needle), "{msg}"),
            other => panic!("{text:?} gave {other:?}"),
        }
    }
    // Gaps inside the span are zero-filled.
    fs::write(&path, "timestamp,cell_id,pickup,dropoff\n2016-01-04T00:00,0,1,2\n2016-01-04T02:00,3,5,6\n").unwrap();
    let s = read_demand(&path, 4).unwrap();
    assert_eq!(s.num_steps(), 3);
    assert_eq!((s.get(0, 0, 1), s.get(1, 2, 0), s.get(2, 3, 1)), (2.0, 0.0, 6.0));
}

#[test]
fn checkpoint_archive_round_trips_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ck.json");
    let model = Model::new(small().model, 9).unwrap();
    let ck = Checkpoint::from_model(&model);
    checkpoint::save(&path, &ck, Stage::Pretrain).unwrap();
    let (back, stage) = checkpoint::load(&path).unwrap();
    assert_eq!(stage, Stage::Pretrain);
    assert_eq!(back, ck);
    assert_eq!(back.restore().unwrap().store, model.store);

    let archive: Archive = read_json(&path).unwrap();
    let frozen: Vec<&str> =
        archive.manifest.tensors.iter().filter(|t| t.kind == ParamKind::CommonMemory).map(|t| t.name.as_str()).collect();
    assert_eq!(frozen, archive.manifest.frozen_common);

    let tamper = |f: &dyn Fn(&mut Archive)| {
        let mut a = archive.clone();
        f(&mut a);
        write_json(&path, &a).unwrap();
        checkpoint::load(&path)
    };
    assert!(tamper(&|a| a.manifest.tensors[0].shape = [1, 1]).is_err());
    assert!(tamper(&|a| a.manifest.tensors[2].name.push('x')).is_err());
    assert!(tamper(&|a| a.manifest.frozen_common.clear()).is_err());
    assert!(tamper(&|a| a.format = "other".into()).is_err());
    assert!(tamper(&|a| a.model.private_slots = 2).is_err());
    assert!(tamper(&|_| {}).is_ok());

    let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    value["extra"] = serde_json::json!(1);
    fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(Error::Invalid(_))));
}

#[test]
fn demand_scale_is_population_sd() {
    let cfg = small();
    let (s, _) = synth_city_pair(&cfg.synth).unwrap();
    let v = s.demand.values();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    assert!((runner::demand_scale(&cfg, None).unwrap() - var.sqrt()).abs() < 1e-9);
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<u64> = (0..37).collect();
    for threads in [1, 3, 8, 64] {
        assert_eq!(runner::parallel_map(&items, threads, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
    }
}
