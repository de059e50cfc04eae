//! Run directories: `config.snapshot`, `metrics.jsonl`, `checkpoints/`,
//! `tables/`, `plots/` and `manifest.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sfmgtl_core::experiment::ExperimentConfig;
use sfmgtl_core::training::EpochLog;

use crate::config::{parse_toml, to_toml};
use crate::error::{Error, IoContext, Result};
use crate::formats::{read_json, write_json};

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUBDIRS: [&str; 3] = ["checkpoints", "tables", "plots"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, label: String) -> Result<Self> {
        let data = fs::read(path).at(path)?;
        let hash = Sha256::digest(&data);
        Ok(FileDigest { path: label, sha256: hash.iter().map(|b| format!("{b:02x}")).collect(), bytes: data.len() as u64 })
    }
}

/// What a run did and what it read and wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// The parsed command, replayable with `--resume-from`.
    pub command: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in SUBDIRS {
            let p = root.join(sub);
            fs::create_dir_all(&p).at(&p)?;
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_snapshot(&self, cfg: &ExperimentConfig) -> Result<()> {
        let p = self.path(SNAPSHOT_FILE);
        fs::write(&p, to_toml(cfg)?).at(&p)
    }

    pub fn metrics_log(&self) -> Result<MetricsLog> {
        let p = self.path(METRICS_FILE);
        let file = fs::File::create(&p).at(&p)?;
        Ok(MetricsLog { path: p, out: BufWriter::new(file) })
    }

    /// Writes the manifest listing every file under the run directory.
    pub fn finish(&self, command: serde_json::Value, inputs: Vec<FileDigest>) -> Result<RunManifest> {
        let mut outputs = Vec::new();
        collect_files(&self.root, &self.root, &mut outputs)?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            inputs,
            outputs,
        };
        write_json(&self.path(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileDigest>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).at(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>().at(dir)?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p != root.join(MANIFEST_FILE) {
            let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            out.push(FileDigest::of(&p, rel)?);
        }
    }
    Ok(())
}

pub fn read_snapshot(run: &Path) -> Result<ExperimentConfig> {
    let p = run.join(SNAPSHOT_FILE);
    parse_toml(&fs::read_to_string(&p).at(&p)?)
}

pub fn read_manifest(run: &Path) -> Result<RunManifest> {
    read_json(&run.join(MANIFEST_FILE))
}

/// One JSON object per epoch.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl MetricsLog {
    pub fn write(&mut self, log: &EpochLog) -> Result<()> {
        let line = serde_json::to_string(log).map_err(|e| Error::Runtime(e.to_string()))?;
        writeln!(self.out, "{line}").at(&self.path)?;
        self.out.flush().at(&self.path)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochLog>> {
    let file = fs::File::open(path).at(path)?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.at(path)?;
            serde_json::from_str(&line).map_err(|e| Error::invalid(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Keys every metrics line carries.
pub const METRICS_KEYS: [&str; 9] = ["epoch", "stage", "L_S", "L_T", "L_dom", "L_rec", "L_aux", "val_mae", "val_rmse"];
