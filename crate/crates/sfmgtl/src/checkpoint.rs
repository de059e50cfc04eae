//! Checkpoint archive: one JSON document holding a manifest (tensor names,
//! kinds, shapes and the frozen common-memory set), the model configuration
//! and every named tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sfmgtl_core::model::ModelConfig;
use sfmgtl_core::params::{ParamKind, ParamStore};
use sfmgtl_core::training::{Checkpoint, Stage};

use crate::error::{Error, Result};
use crate::formats::{read_json, write_json};

pub const FORMAT: &str = "sfmgtl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub tensors: Vec<TensorEntry>,
    /// Names frozen during fine-tuning.
    pub frozen_common: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archive {
    pub format: String,
    pub version: u32,
    pub manifest: Manifest,
    pub model: ModelConfig,
    pub params: ParamStore,
}

impl Archive {
    pub fn new(checkpoint: &Checkpoint, stage: Stage) -> Self {
        let tensors = checkpoint
            .params
            .iter()
            .map(|(_, p)| TensorEntry { name: p.name.clone(), kind: p.kind, shape: [p.value.rows(), p.value.cols()] })
            .collect();
        Archive {
            format: FORMAT.into(),
            version: VERSION,
            manifest: Manifest { stage, tensors, frozen_common: checkpoint.frozen.clone() },
            model: checkpoint.model.clone(),
            params: checkpoint.params.clone(),
        }
    }

    /// Checks the manifest against the tensors it describes.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("checkpoint: {msg}")));
        if self.format != FORMAT || self.version != VERSION {
            return bad(format!("unsupported format {} v{}", self.format, self.version));
        }
        if self.manifest.tensors.len() != self.params.len() {
            return bad(format!("manifest lists {} tensors, archive holds {}", self.manifest.tensors.len(), self.params.len()));
        }
        for (entry, (_, p)) in self.manifest.tensors.iter().zip(self.params.iter()) {
            let (r, c) = p.value.shape();
            if entry.name != p.name || entry.kind != p.kind || entry.shape != [r, c] {
                return bad(format!("manifest entry '{}' does not describe tensor '{}'", entry.name, p.name));
            }
            if p.value.len() != r * c {
                return bad(format!("tensor '{}' holds {} values for shape {r}x{c}", p.name, p.value.len()));
            }
        }
        let common: Vec<&str> = self
            .params
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::CommonMemory)
            .map(|(_, p)| p.name.as_str())
            .collect();
        if common.iter().copied().ne(self.manifest.frozen_common.iter().map(String::as_str)) {
            return bad(format!("frozen set {:?} differs from the common-memory tensors {common:?}", self.manifest.frozen_common));
        }
        Ok(())
    }

    /// The checkpoint, once its tensors are known to fit the stored model
    /// configuration.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.validate()?;
        let ck = Checkpoint { model: self.model.clone(), params: self.params.clone(), frozen: self.manifest.frozen_common.clone() };
        ck.restore()?;
        Ok(ck)
    }
}

pub fn save(path: &Path, checkpoint: &Checkpoint, stage: Stage) -> Result<()> {
    write_json(path, &Archive::new(checkpoint, stage))
}

pub fn load(path: &Path) -> Result<(Checkpoint, Stage)> {
    let archive: Archive = read_json(path)?;
    Ok((archive.checkpoint()?, archive.manifest.stage))
}
