//! Checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in header order. Tensor
//! names carry a group prefix: `model/`, `embedding/` or `optimizer/`.
//! Export files hold only `model/` tensors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpochRecord, StepRecord, TrainConfig, TrainState};
use crate::embedding::{EmbeddingConfig, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Parameterized, Sgd, SgdConfig};
use crate::seed;

const MAGIC: &[u8; 8] = b"MORELCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Train,
    Export,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: FileKind,
    pub architecture: Vec<LayerSpec>,
    pub input_shape: (usize, usize, usize),
    pub embedding: Option<EmbeddingConfig>,
    pub optimizer: Option<SgdConfig>,
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub config: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub header: CheckpointHeader,
    pub data: Vec<f64>,
}

impl CheckpointFile {
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.offset..t.offset + t.len])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.header.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn has_group(&self, group: &str) -> bool {
        let prefix = format!("{group}/");
        self.names().any(|n| n.starts_with(&prefix))
    }

    fn push(&mut self, name: String, shape: Vec<usize>, values: &[f64]) {
        self.header.tensors.push(TensorEntry {
            name,
            shape,
            offset: self.data.len(),
            len: values.len(),
        });
        self.data.extend_from_slice(values);
    }

    fn push_params(&mut self, group: &str, p: &dyn Parameterized) {
        for ((name, shape), values) in p.param_names().into_iter().zip(p.param_shapes()).zip(p.param_slices()) {
            self.push(format!("{group}/{name}"), shape, values);
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::checkpoint(path, message);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20usize.saturating_add(header_len))
            .ok_or_else(|| bad("corrupt file: truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(format!("corrupt header: {e}")))?;
        let raw = &bytes[20 + header_len..];
        let expected: usize = header.tensors.iter().map(|t| t.len).sum();
        if raw.len() != expected * 8 {
            return Err(bad(format!(
                "corrupt file: {} data bytes, header describes {}",
                raw.len(),
                expected * 8
            )));
        }
        for t in &header.tensors {
            if t.offset + t.len > expected || t.shape.iter().product::<usize>() != t.len {
                return Err(bad(format!("corrupt tensor entry `{}`", t.name)));
            }
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { header, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    fn load_group(&self, group: &str, p: &mut dyn Parameterized, path: &Path) -> Result<()> {
        p.load_params(&|name| self.tensor(&format!("{group}/{name}")).map(<[f64]>::to_vec))
            .map_err(|e| Error::checkpoint(path, e.to_string()))
    }

    /// Rebuilds the classifier (`model/` tensors).
    pub fn model(&self, path: &Path) -> Result<Network> {
        let h = &self.header;
        let mut net = Network::from_spec(&h.architecture, h.input_shape, &mut seed::rng(0, "checkpoint", 0, 0))
            .map_err(|e| Error::checkpoint(path, e.to_string()))?;
        self.load_group("model", &mut net, path)?;
        Ok(net)
    }
}

fn header_for(state: &TrainState, kind: FileKind, config: Option<&TrainConfig>) -> CheckpointHeader {
    let train = kind == FileKind::Train;
    CheckpointHeader {
        kind,
        architecture: state.model.spec(),
        input_shape: state.model.input_shape(),
        embedding: if train { state.embedding.as_ref().map(EmbeddingSpace::config) } else { None },
        optimizer: train.then_some(state.optimizer.config),
        epoch: state.epoch,
        best_metric: state.best_metric,
        best_epoch: state.best_epoch,
        best_checkpoint: if train { state.best_checkpoint.clone() } else { None },
        history: state.history.clone(),
        steps: if train { state.steps.clone() } else { Vec::new() },
        config: config.cloned(),
        tensors: Vec::new(),
    }
}

/// Writes model, embedding and optimizer state plus run metadata.
pub fn save_checkpoint(state: &TrainState, config: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let mut file = CheckpointFile {
        header: header_for(state, FileKind::Train, config),
        data: Vec::new(),
    };
    file.push_params("model", &state.model);
    let mut names: Vec<String> = state.model.param_names().iter().map(|n| format!("model/{n}")).collect();
    if let Some(e) = &state.embedding {
        file.push_params("embedding", e);
        names.extend(e.param_names().iter().map(|n| format!("embedding/{n}")));
    }
    for (name, buf) in names.iter().zip(state.optimizer.buffers()) {
        file.push(format!("optimizer/{name}"), vec![buf.len()], buf);
    }
    file.write(path)
}

/// Restores a training checkpoint and the config it was written with.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, Option<TrainConfig>)> {
    let file = CheckpointFile::read(path)?;
    let h = &file.header;
    if h.kind != FileKind::Train {
        return Err(Error::checkpoint(path, "export files hold no training state"));
    }
    let model = file.model(path)?;
    let mut names: Vec<String> = model.param_names().iter().map(|n| format!("model/{n}")).collect();
    let embedding = match h.embedding {
        Some(cfg) => {
            let mut e = EmbeddingSpace::new(cfg, &mut seed::rng(0, "checkpoint", 0, 0))?;
            file.load_group("embedding", &mut e, path)?;
            names.extend(e.param_names().iter().map(|n| format!("embedding/{n}")));
            Some(e)
        }
        None => None,
    };
    let sgd_config = h
        .optimizer
        .ok_or_else(|| Error::checkpoint(path, "missing optimizer settings"))?;
    let mut optimizer = Sgd::new(sgd_config);
    if file.has_group("optimizer") {
        let buffers = names
            .iter()
            .map(|n| {
                file.tensor(&format!("optimizer/{n}"))
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::checkpoint(path, format!("missing optimizer buffer for `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        optimizer.set_buffers(buffers);
    }
    let state = TrainState {
        epoch: h.epoch,
        model,
        embedding,
        optimizer,
        best_metric: h.best_metric,
        best_epoch: h.best_epoch,
        best_checkpoint: h.best_checkpoint.clone(),
        history: h.history.clone(),
        steps: h.steps.clone(),
    };
    Ok((state, file.header.config))
}

/// Writes an inference-only file: classifier parameters and metadata, no
/// embedding space, no optimizer state.
pub fn export_model(state: &TrainState, config: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let mut file = CheckpointFile {
        header: header_for(state, FileKind::Export, config),
        data: Vec::new(),
    };
    file.push_params("model", &state.model);
    file.write(path)
}

/// Loads the classifier from a training or export file.
pub fn load_model(path: &Path) -> Result<Network> {
    CheckpointFile::read(path)?.model(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, SyntheticSpec};
    use crate::nn::Architecture;
    use crate::training::{fit, Objective};

    fn trained(objective: Objective) -> (TrainState, TrainConfig) {
        let spec = SyntheticSpec {
            classes: 3,
            per_class: 4,
            test_per_class: 2,
            height: 8,
            width: 8,
            ..Default::default()
        };
        let config = TrainConfig {
            objective,
            epochs: 1,
            lr_milestones: vec![],
            embed_dim: 4,
            heads: 2,
            augment: false,
            train_attack: crate::attacks::AttackSpec::pgd(0.03, 0.01, 1, true),
            eval_attack: crate::attacks::AttackSpec::pgd(0.03, 0.01, 2, false),
            ..Default::default()
        };
        let model = Architecture::ToyCnn { width: 2 }
            .build((3, 8, 8), 3, &mut seed::rng(1, "init", 0, 0))
            .unwrap();
        let state = TrainState::new(model, &config).unwrap();
        let state = fit(
            state,
            &config,
            &spec.generate(Split::Train),
            &spec.generate(Split::Test),
            None,
        )
        .unwrap();
        (state, config)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (state, config) = trained(Objective::Morel);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        save_checkpoint(&state, Some(&config), &path).unwrap();
        let (back, cfg) = load_checkpoint(&path).unwrap();
        assert_eq!(back, state);
        assert_eq!(cfg, Some(config));
    }

    #[test]
    fn export_drops_embedding_and_optimizer() {
        let (state, config) = trained(Objective::Morel);
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.ckpt");
        let export = dir.path().join("model.ckpt");
        save_checkpoint(&state, Some(&config), &full).unwrap();
        export_model(&state, Some(&config), &export).unwrap();
        let file = CheckpointFile::read(&export).unwrap();
        assert!(!file.has_group("embedding") && !file.has_group("optimizer"));
        assert!(fs::metadata(&export).unwrap().len() < fs::metadata(&full).unwrap().len());
        let net = load_model(&export).unwrap();
        let x = SyntheticSpec {
            height: 8,
            width: 8,
            ..Default::default()
        }
        .generate(Split::Test)
        .images()
        .clone();
        assert_eq!(net.forward(&x), state.model.forward(&x));
        assert!(load_checkpoint(&export).is_err());
    }

    #[test]
    fn rejects_corruption_and_version_mismatch() {
        let (state, _) = trained(Objective::Natural);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        save_checkpoint(&state, None, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        fs::write(&path, &truncated).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("corrupt"));

        bytes[8] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("version 9"));

        fs::write(&path, b"hello").unwrap();
        assert!(load_model(&path).is_err());
    }
}
