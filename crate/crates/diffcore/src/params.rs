//! Named parameters, their optimizer accumulators, and the checkpoint format.
//!
//! Checkpoints are JSON documents:
//!
//! ```json
//! { "format": "diffcore-params", "version": 1,
//!   "parameters": { "<name>": { "shape": [r, c], "values": [..row-major..] } } }
//! ```
//!
//! Parameters are stored in a `BTreeMap`, so a checkpoint of the same store is
//! byte-identical across runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "diffcore-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamSlot {
    pub(crate) value: Tensor,
    pub(crate) m: Tensor,
    pub(crate) v: Tensor,
    pub(crate) v_max: Tensor,
}

impl ParamSlot {
    fn new(value: Tensor) -> Self {
        let z = Tensor::zeros(value.shape());
        Self {
            m: z.clone(),
            v: z.clone(),
            v_max: z,
            value,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    pub(crate) slots: BTreeMap<String, ParamSlot>,
    pub(crate) step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.slots.contains_key(name) {
            return Err(DiffError::DuplicateParameter(name.to_string()));
        }
        self.slots.insert(name.to_string(), ParamSlot::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// Number of optimizer steps applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Result<&Tensor> {
        self.slot(name).map(|s| &s.m)
    }

    pub fn second_moment(&self, name: &str) -> Result<&Tensor> {
        self.slot(name).map(|s| &s.v)
    }

    /// Running elementwise maximum of the second moment (AMSGrad's `v_hat`).
    pub fn max_second_moment(&self, name: &str) -> Result<&Tensor> {
        self.slot(name).map(|s| &s.v_max)
    }

    fn slot(&self, name: &str) -> Result<&ParamSlot> {
        self.slots
            .get(name)
            .ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    /// Parameter values only, in the versioned checkpoint layout.
    pub fn to_checkpoint(&self) -> ParamCheckpoint {
        ParamCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            parameters: self
                .slots
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        StoredParam {
                            shape: s.value.shape().to_vec(),
                            values: s.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Rebuilds a store from a checkpoint; optimizer state starts fresh.
    pub fn from_checkpoint(ckpt: &ParamCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(DiffError::Checkpoint(format!("unexpected format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(DiffError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        let mut store = Self::new();
        for (name, p) in &ckpt.parameters {
            let t = Tensor::new(p.shape.clone(), p.values.clone())
                .map_err(|e| DiffError::Checkpoint(format!("{name}: {e}")))?;
            store.add(name, t)?;
        }
        Ok(store)
    }

    /// Overwrites every value from a checkpoint holding exactly this store's parameters.
    pub fn load_values(&mut self, ckpt: &ParamCheckpoint) -> Result<()> {
        for (name, p) in &ckpt.parameters {
            let slot = self
                .slots
                .get_mut(name)
                .ok_or_else(|| DiffError::UnknownParameter(name.clone()))?;
            if slot.value.shape() != p.shape.as_slice() || p.values.len() != slot.value.len() {
                return Err(DiffError::Checkpoint(format!(
                    "{name}: shape {:?} does not match {:?}",
                    p.shape,
                    slot.value.shape()
                )));
            }
            slot.value.data_mut().copy_from_slice(&p.values);
        }
        if ckpt.parameters.len() != self.slots.len() {
            return Err(DiffError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                ckpt.parameters.len(),
                self.slots.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub format: String,
    pub version: u32,
    pub parameters: BTreeMap<String, StoredParam>,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.0.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Global L2 norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(|t| t.data().iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_preserves_values() {
        let mut store = ParameterStore::new();
        store.add("b", Tensor::row(vec![0.25, -1.5])).unwrap();
        store.add("a", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 1e-17])).unwrap();
        let json = serde_json::to_string(&store.to_checkpoint()).unwrap();
        let back: ParamCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = ParameterStore::from_checkpoint(&back).unwrap();
        assert_eq!(restored.get("a").unwrap(), store.get("a").unwrap());
        assert_eq!(restored.get("b").unwrap(), store.get("b").unwrap());
        assert_eq!(json, serde_json::to_string(&restored.to_checkpoint()).unwrap());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut ckpt = ParameterStore::new().to_checkpoint();
        ckpt.version = 99;
        assert!(ParameterStore::from_checkpoint(&ckpt).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            store.add("w", Tensor::scalar(2.0)),
            Err(DiffError::DuplicateParameter(_))
        ));
    }
}
