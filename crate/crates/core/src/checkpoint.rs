//! Self-describing binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"CAMULCKP" | version: u32 LE | manifest length: u64 LE | manifest JSON | f64 LE values
//! ```
//!
//! Parameter values follow the manifest in its `params` order, each array
//! row-major.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{GraphStructure, ViewSpec};
use crate::error::{CamulError, Result};
use crate::model::{CamulModel, ModelConfig};
use crate::preprocessing::Scaler;

pub const MAGIC: &[u8; 8] = b"CAMULCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub model: ModelConfig,
    pub views: Vec<ViewSpec>,
    pub graphs: BTreeMap<usize, GraphStructure>,
    pub scaler: Scaler,
    /// Steps of each series used for fitting; later steps are held out.
    pub train_len: usize,
    pub params: Vec<ParamShape>,
    /// Free-form settings recorded by the caller.
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A model with the data transform it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: CamulModel,
    pub scaler: Scaler,
    pub train_len: usize,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            model: self.model.config.clone(),
            views: self.model.views.clone(),
            graphs: self.model.graphs.clone(),
            scaler: self.scaler.clone(),
            train_len: self.train_len,
            params: self
                .model
                .params
                .entries()
                .iter()
                .map(|e| ParamShape { name: e.name.clone(), shape: [e.value.nrows(), e.value.ncols()] })
                .collect(),
            extra: self.extra.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest())?;
        let mut out = Vec::with_capacity(20 + manifest.len() + 8 * self.model.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for e in self.model.params.entries() {
            for v in e.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| CamulError::Checkpoint(format!("corrupt checkpoint: {what}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CamulError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < len {
            return Err(corrupt("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len]).map_err(|e| corrupt(&e.to_string()))?;
        let mut values = &body[len..];

        let mut model =
            CamulModel::from_specs(manifest.model.clone(), manifest.views.clone(), manifest.graphs.clone(), 0)?;
        if model.params.len() != manifest.params.len() {
            return Err(corrupt("parameter count does not match the model layout"));
        }
        for (entry, shape) in model.params.entries_mut().iter_mut().zip(&manifest.params) {
            if entry.name != shape.name || [entry.value.nrows(), entry.value.ncols()] != shape.shape {
                return Err(corrupt(&format!("unexpected parameter `{}`", shape.name)));
            }
            for v in entry.value.iter_mut() {
                let (head, rest) = values.split_at_checked(8).ok_or_else(|| corrupt("truncated values"))?;
                *v = f64::from_le_bytes(head.try_into().expect("8 bytes"));
                values = rest;
            }
        }
        if !values.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { model, scaler: manifest.scaler, train_len: manifest.train_len, extra: manifest.extra })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocessing::{make_synthetic_panel, SyntheticConfig};

    fn checkpoint() -> Checkpoint {
        let data = make_synthetic_panel(&SyntheticConfig::default()).unwrap();
        let config = ModelConfig { latent_dim: 3, hidden: 4, ..ModelConfig::default() };
        let model = CamulModel::new(config, &data.dataset.views, 7).unwrap();
        Checkpoint {
            model,
            scaler: Scaler { mean: vec![0.1], std: vec![1.7] },
            train_len: 192,
            extra: serde_json::json!({"note": 1}),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.params, ck.model.params);
        assert_eq!(back.scaler, ck.scaler);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut wrong_version = bytes;
        wrong_version[8] = 99;
        let err = Checkpoint::from_bytes(&wrong_version).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
