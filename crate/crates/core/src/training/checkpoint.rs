//! Versioned binary checkpoints.
//!
//! Layout (little-endian): `"MSEM"`, u32 version, u32-length-prefixed
//! config JSON, u32 tensor count, then per tensor a u32-length-prefixed
//! name, u8 rank, u64 dims, f32 data.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optimizer::{Optimizer, OptimizerState};
use super::TrainConfig;
use crate::data::Vocab;
use crate::format::{write_atomic, PersistError, Reader, Writer};
use crate::model::{Model, ModelConfig, ModelError};
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MSEM";
pub const CHECKPOINT_VERSION: u32 = 1;

const OPTIM_PREFIX: &str = "optim/";

/// Everything in a checkpoint other than tensors; stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub chars: Vec<String>,
    /// Parameters the optimizers leave alone.
    pub frozen: Vec<String>,
    pub step: u64,
    pub epoch: usize,
    pub optimizer: String,
    pub optimizer_step: u64,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: CheckpointConfig,
    /// Model parameters followed by optimizer tensors (prefixed `optim/`).
    pub tensors: Vec<(String, Tensor)>,
}

fn to_f32_precision(t: &Tensor) -> Tensor {
    t.map(|x| x as f32 as f64)
}

impl Checkpoint {
    /// Snapshots a model and optimizer. Values are rounded to f32 so the
    /// snapshot equals what a later load returns.
    pub fn capture(model: &Model, optimizer: Option<&dyn Optimizer>, step: u64, epoch: usize, train: Option<&TrainConfig>) -> Self {
        let mut tensors: Vec<(String, Tensor)> = model
            .params
            .iter()
            .map(|(_, name, t)| (name.to_string(), to_f32_precision(t)))
            .collect();
        let frozen = model
            .params
            .iter()
            .filter(|(id, _, _)| !model.params.is_trainable(*id))
            .map(|(_, name, _)| name.to_string())
            .collect();
        let (opt_name, opt_state) = match optimizer {
            Some(o) => (o.name().to_string(), o.export_state(&model.params)),
            None => (String::new(), OptimizerState::default()),
        };
        tensors.extend(
            opt_state
                .tensors
                .iter()
                .map(|(n, t)| (format!("{OPTIM_PREFIX}{n}"), to_f32_precision(t))),
        );
        Self {
            version: CHECKPOINT_VERSION,
            config: CheckpointConfig {
                model: model.config.clone(),
                vocab: model.encoder.vocab().corpus_tokens().to_vec(),
                chars: model.encoder.chars().corpus_tokens().to_vec(),
                frozen,
                step,
                epoch,
                optimizer: opt_name,
                optimizer_step: opt_state.step,
                train: train.cloned(),
            },
            tensors,
        }
    }

    pub fn model_tensors(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.tensors.iter().filter(|(n, _)| !n.starts_with(OPTIM_PREFIX))
    }

    pub fn optimizer_state(&self) -> OptimizerState {
        OptimizerState {
            step: self.config.optimizer_step,
            tensors: self
                .tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(OPTIM_PREFIX).map(|n| (n.to_string(), t.clone())))
                .collect(),
        }
    }

    /// Rebuilds the model this checkpoint was captured from.
    pub fn to_model(&self) -> Result<Model, ModelError> {
        let mut params = ParamSet::new();
        for (name, t) in self.model_tensors() {
            let res = if self.config.frozen.contains(name) {
                params.insert_frozen(name.clone(), t.clone())
            } else {
                params.insert(name.clone(), t.clone())
            };
            res.map_err(|e| ModelError::Encoder(e.into()))?;
        }
        Model::from_params(
            self.config.model.clone(),
            Vocab::from_tokens(self.config.vocab.iter().cloned()),
            Vocab::from_tokens(self.config.chars.iter().cloned()),
            params,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Vec::new());
        let json = serde_json::to_string(&self.config).expect("config serializes");
        let write = |w: &mut Writer<Vec<u8>>| -> std::io::Result<()> {
            w.header(CHECKPOINT_MAGIC, self.version)?;
            w.string(&json)?;
            w.u32(self.tensors.len() as u32)?;
            for (name, t) in &self.tensors {
                w.string(name)?;
                w.u8(t.shape().len() as u8)?;
                for &d in t.shape() {
                    w.u64(d as u64)?;
                }
                let data: Vec<f32> = t.data().iter().map(|&x| x as f32).collect();
                w.f32s(&data)?;
            }
            Ok(())
        };
        write(&mut w).expect("writing to memory cannot fail");
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PersistError> {
        let mut r = Reader::new(Cursor::new(bytes));
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let json = r.string()?;
        let config: CheckpointConfig =
            serde_json::from_str(&json).map_err(|e| PersistError::Malformed(format!("checkpoint config: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= bytes.len() / 4)
                .ok_or(PersistError::Truncated)?;
            let data = r.f32s(n)?.into_iter().map(f64::from).collect();
            let t = Tensor::new(shape, data).map_err(|e| PersistError::Malformed(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        r.finish()?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PersistError> {
        Ok(write_atomic(path.as_ref(), &self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        Self::from_bytes(&std::fs::read(path.as_ref())?)
    }
}

pub fn checkpoint_save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), PersistError> {
    ckpt.save(path)
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint, PersistError> {
    Checkpoint::load(path)
}
