//! Named parameter storage and the JSON checkpoint format.
//!
//! A checkpoint is a JSON object
//!
//! ```text
//! {"format": "jointlk.checkpoint", "version": 1,
//!  "params": {"<name>": {"shape": [r, c], "values": [..]}, ...}}
//! ```
//!
//! with parameters sorted by name. Floats are written in shortest
//! round-trip form, so save/load is bit-exact.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Parameters are split into two groups that train with separate
/// learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Graph,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, group: ParamGroup) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.groups.push(group);
        self.tensors.push(tensor.with_grad());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Multiplies every accumulated gradient by `factor` (batch averaging).
    pub fn scale_grads(&mut self, factor: f64) {
        for t in &mut self.tensors {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                (
                    n.clone(),
                    CheckpointEntry {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
        }
    }

    /// Overwrites values from a checkpoint. Names and shapes must match
    /// this store exactly.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.params.len() != self.tensors.len() {
            return Err(TensorError::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                ck.params.len(),
                self.tensors.len()
            )));
        }
        for (name, entry) in &ck.params {
            let id = self
                .id(name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            let t = &mut self.tensors[id.0];
            if t.shape() != entry.shape.as_slice() || t.len() != entry.values.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_checkpoint",
                    left: t.shape().to_vec(),
                    right: entry.shape.clone(),
                });
            }
            t.values_mut().copy_from_slice(&entry.values);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let ck = Checkpoint::read(path)?;
        self.load_checkpoint(&ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "jointlk.checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: BTreeMap<String, CheckpointEntry>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported format {} v{}",
                ck.format, ck.version
            )));
        }
        for (name, e) in &ck.params {
            if e.shape.iter().product::<usize>() != e.values.len() {
                return Err(TensorError::Checkpoint(format!(
                    "parameter `{name}`: shape {:?} does not match {} values",
                    e.shape,
                    e.values.len()
                )));
            }
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| TensorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TensorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
