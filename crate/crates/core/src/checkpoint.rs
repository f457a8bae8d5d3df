//! Checkpoint files: a single JSON document holding the architecture, all
//! parameter and running-stat tensors by stable name, the generator state,
//! and optionally the optimizer state and training progress for resume.
//! Floats round-trip bit-exactly through the serializer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{Model, ModelSpec};
use crate::nn::tensor::Tensor;
use crate::optim::{AdamState, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: BTreeMap<String, Tensor>,
    /// xorshift64* state as a decimal string (u64 range exceeds JSON's
    /// exact integer range).
    pub prng_state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimCheckpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<TrainProgress>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimCheckpoint {
    pub kind: OptimizerKind,
    pub t: u64,
    #[serde(default)]
    pub m: BTreeMap<String, Tensor>,
    #[serde(default)]
    pub v: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainProgress {
    pub epoch: usize,
    pub iteration: u64,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn build(
        model: &Model,
        prng_state: u64,
        optimizer: Option<&Optimizer>,
        progress: Option<TrainProgress>,
    ) -> Checkpoint {
        let mut params = BTreeMap::new();
        for (name, t) in model.named_params() {
            params.insert(name, t.clone());
        }
        for (name, t) in model.named_state() {
            params.insert(name, t.clone());
        }
        let optim = optimizer.map(|o| match o {
            Optimizer::Sgd => OptimCheckpoint {
                kind: OptimizerKind::Sgd,
                t: 0,
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            },
            Optimizer::Adam(state) => {
                let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
                OptimCheckpoint {
                    kind: OptimizerKind::Adam,
                    t: state.t,
                    m: names.iter().cloned().zip(state.m.iter().cloned()).collect(),
                    v: names.iter().cloned().zip(state.v.iter().cloned()).collect(),
                }
            }
        });
        Checkpoint {
            format_version: FORMAT_VERSION,
            spec: model.spec.clone(),
            params,
            prng_state: prng_state.to_string(),
            optim,
            progress,
        }
    }

    /// Rebuild the model, checking every tensor name and shape against the
    /// stored spec.
    pub fn restore_model(&self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut prng = crate::prng::Prng::new(1).expect("nonzero");
        let mut model = Model::init(self.spec.clone(), &mut prng)?;
        for (name, tensor) in model.named_all_mut() {
            let stored = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if stored.shape != tensor.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: stored shape {:?} vs spec shape {:?}",
                    stored.shape, tensor.shape
                )));
            }
            if stored.data.len() != stored.shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("tensor {name}: data/shape mismatch")));
            }
            *tensor = stored.clone();
        }
        Ok(model)
    }

    pub fn restore_prng_state(&self) -> Result<u64> {
        self.prng_state
            .parse::<u64>()
            .map_err(|_| Error::Checkpoint(format!("invalid prng_state {:?}", self.prng_state)))
    }

    /// Rebuild the optimizer in the model's canonical parameter order.
    pub fn restore_optimizer(&self, model: &Model) -> Result<Optimizer> {
        let Some(stored) = &self.optim else {
            return Err(Error::Checkpoint("checkpoint has no optimizer state".into()));
        };
        match stored.kind {
            OptimizerKind::Sgd => Ok(Optimizer::Sgd),
            OptimizerKind::Adam => {
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (name, param) in model.named_params() {
                    let fetch = |map: &BTreeMap<String, Tensor>, what: &str| -> Result<Tensor> {
                        let t = map
                            .get(&name)
                            .ok_or_else(|| Error::Checkpoint(format!("missing optim.{what} for {name}")))?;
                        if t.shape != param.shape {
                            return Err(Error::Checkpoint(format!(
                                "optim.{what} for {name}: shape {:?} vs {:?}",
                                t.shape, param.shape
                            )));
                        }
                        Ok(t.clone())
                    };
                    m.push(fetch(&stored.m, "m")?);
                    v.push(fetch(&stored.v, "v")?);
                }
                Ok(Optimizer::Adam(AdamState {
                    m,
                    v,
                    t: stored.t,
                    beta1: ADAM_BETA1,
                    beta2: ADAM_BETA2,
                    eps: ADAM_EPS,
                }))
            }
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint)
        .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: malformed checkpoint: {e}", path.display())))?;
    if checkpoint.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {}",
            checkpoint.format_version
        )));
    }
    Ok(checkpoint)
}
