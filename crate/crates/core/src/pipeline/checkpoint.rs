//! Versioned JSON checkpoints: config, parameters (flat values plus shapes),
//! epoch, and rng state. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::store::ParameterStore;
use crate::num::tensor::Tensor;
use crate::pipeline::config::TrainConfig;
use crate::Real;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SavedTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub rng_state: u64,
    pub params: BTreeMap<String, SavedTensor>,
}

impl Checkpoint {
    pub fn from_store(
        config: TrainConfig,
        epoch: usize,
        rng_state: u64,
        store: &ParameterStore<Real>,
    ) -> Self {
        let params = store
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    SavedTensor {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config,
            epoch,
            rng_state,
            params,
        }
    }

    /// Rebuild a parameter store with the saved values. Optimizer moments are
    /// not persisted; resumed training restarts them.
    pub fn to_store(&self) -> Result<ParameterStore<Real>> {
        let mut store = ParameterStore::new();
        for (name, saved) in &self.params {
            let tensor = Tensor::new(saved.shape.clone(), saved.values.clone()).map_err(|e| {
                Error::Checkpoint {
                    field: format!("params.{name}"),
                    msg: e.to_string(),
                }
            })?;
            store.insert(name, tensor).map_err(|e| Error::Checkpoint {
                field: format!("params.{name}"),
                msg: e.to_string(),
            })?;
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint {
            field: "document".to_string(),
            msg: e.to_string(),
        })?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint {
                field: "format_version".to_string(),
                msg: format!("expected {CHECKPOINT_VERSION}, got {}", ckpt.format_version),
            });
        }
        for (name, saved) in &ckpt.params {
            let expect: usize = saved.shape.iter().product();
            if saved.values.len() != expect {
                return Err(Error::Checkpoint {
                    field: format!("params.{name}"),
                    msg: format!(
                        "shape {:?} needs {expect} values, got {}",
                        saved.shape,
                        saved.values.len()
                    ),
                });
            }
            if saved.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint {
                    field: format!("params.{name}"),
                    msg: "non-finite value".to_string(),
                });
            }
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}
