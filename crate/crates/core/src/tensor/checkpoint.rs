//! Versioned JSON checkpoint: parameter name → shape + values, plus optional
//! optimizer state and free-form metadata.
//!
//! ```json
//! {
//!   "format": "mindts-checkpoint",
//!   "version": 1,
//!   "params": [{"name": "time.embed.weight", "shape": [6, 64], "values": [...]}],
//!   "optimizer": {"step": 40, "lr": 0.001, ..., "m": [[...]], "v": [[...]]},
//!   "meta": {"epoch": 3}
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so save/load is
//! exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mindts-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, optimizer: Option<&AdamState>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: store
                .iter()
                .map(|(_, name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
            meta: BTreeMap::new(),
        }
    }

    /// Copies values into `store`. Every stored parameter must be present with
    /// the same shape; all offenders are listed in the error.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let by_name: BTreeMap<&str, &NamedTensor> =
            self.params.iter().map(|p| (p.name.as_str(), p)).collect();
        let mut problems = Vec::new();
        for (_, name, t) in store.iter() {
            match by_name.get(name) {
                None => problems.push(format!("{name}: missing")),
                Some(p) if p.shape != t.shape() || p.values.len() != t.len() => problems.push(format!(
                    "{name}: expected {:?}, found {:?}",
                    t.shape(),
                    p.shape
                )),
                _ => {}
            }
        }
        for p in &self.params {
            if store.id(&p.name).is_none() {
                problems.push(format!("{}: unexpected", p.name));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }
        for p in &self.params {
            let id = store.id(&p.name).expect("checked above");
            *store.get_mut(id) = Tensor::new(p.shape.clone(), p.values.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        if let Some(opt) = &self.optimizer {
            if !opt.matches(store) {
                return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }
}
