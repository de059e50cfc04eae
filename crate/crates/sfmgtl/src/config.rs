//! Experiment configuration documents: named presets, TOML files and
//! `key=value` overrides.

use std::fs;
use std::path::Path;

use sfmgtl_core::datasets::{SplitSpec, SynthConfig, DAYS_PER_MONTH};
use sfmgtl_core::experiment::ExperimentConfig;
use sfmgtl_core::model::ModelConfig;
use sfmgtl_core::training::TrainConfig;

use crate::error::{Error, IoContext, Result};

pub const PRESETS: [&str; 2] = ["desk", "paper_scale"];

/// Built-in configurations. `desk` is the small synthetic setting used by
/// the tests; `paper_scale` has the published model widths and cluster
/// counts on 20×20 cities with a year of source data.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    match name {
        "desk" => Some(ExperimentConfig::desk()),
        "paper_scale" => {
            let split = SplitSpec::paper(3);
            Some(ExperimentConfig {
                synth: SynthConfig {
                    source_side: 20,
                    target_side: 20,
                    source_days: 12 * DAYS_PER_MONTH,
                    target_days: split.target_train_days + split.val_days + split.test_days,
                    ..SynthConfig::default()
                },
                split,
                model: ModelConfig::paper(),
                pretrain: TrainConfig::default(),
                finetune: TrainConfig::default(),
                source_noise_sd: 0.0,
            })
        }
        _ => None,
    }
}

pub fn parse_toml(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::invalid(format!("config cannot be written as TOML: {e}")))
}

/// A preset name or a path to a TOML document; `None` means `desk`.
pub fn load(spec: Option<&str>) -> Result<ExperimentConfig> {
    let spec = spec.unwrap_or("desk");
    if let Some(cfg) = preset(spec) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::invalid(format!("config '{spec}' is neither a preset ({}) nor a file", PRESETS.join(", "))));
    }
    parse_toml(&fs::read_to_string(path).at(path)?)
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.field=value` overrides in order; later ones win.
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let mut doc = toml::Table::try_from(cfg).map_err(|e| Error::invalid(format!("config: {e}")))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override '{item}' is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::invalid(format!("override key '{key}' is malformed")));
        }
        let (leaf, parents) = path.split_last().expect("non-empty path");
        let mut table = &mut doc;
        for p in parents {
            table = match table.get_mut(*p) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(Error::invalid(format!("override '{key}': no section '{p}'"))),
            };
        }
        table.insert(leaf.to_string(), parse_value(raw.trim()));
    }
    let cfg: ExperimentConfig = doc.try_into().map_err(|e| Error::invalid(format!("override: {e}")))?;
    Ok(cfg)
}

/// Loads, overrides, reseeds and validates.
pub fn resolve(spec: Option<&str>, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = apply_overrides(&load(spec)?, overrides)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            assert_eq!(parse_toml(&to_toml(&cfg).unwrap()).unwrap(), cfg);
        }
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let base = ExperimentConfig::desk();
        let cfg = apply_overrides(
            &base,
            &["pretrain.lr=0.01".into(), "model.cluster_sizes=[4, 2]".into(), "pretrain.lr=0.02".into()],
        )
        .unwrap();
        assert_eq!(cfg.pretrain.lr, 0.02);
        assert_eq!(cfg.model.cluster_sizes, [4, 2]);
        assert_eq!(cfg.finetune, base.finetune);
        assert!(apply_overrides(&base, &["pretrain.learning_rate=1".into()]).is_err());
        assert!(apply_overrides(&base, &["nosuch.lr=1".into()]).is_err());
        assert!(apply_overrides(&base, &["pretrain.lr".into()]).is_err());
        assert!(apply_overrides(&base, &["pretrain.lr=fast".into()]).is_err());
    }

    #[test]
    fn resolve_validates() {
        assert!(resolve(None, &["pretrain.lr=-1.0".into()], None).is_err());
        let cfg = resolve(Some("desk"), &[], Some(9)).unwrap();
        assert_eq!((cfg.synth.seed, cfg.pretrain.seed, cfg.finetune.seed), (9, 9, 9));
        assert!(load(Some("/nonexistent/cfg.toml")).is_err());
    }
}
