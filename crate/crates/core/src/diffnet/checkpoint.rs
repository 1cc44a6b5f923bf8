use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{LayerSpec, Parameterized};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned JSON model file: layer specs, flat parameters in model order,
/// the model's own config, and free-form training metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub kind: String,
    pub layers: Vec<LayerSpec>,
    pub config: serde_json::Value,
    pub params: Vec<NamedParam>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn capture<M: Parameterized, C: Serialize>(
        kind: &str,
        layers: Vec<LayerSpec>,
        config: &C,
        model: &M,
    ) -> Result<Self> {
        let params = model
            .params()
            .into_iter()
            .enumerate()
            .map(|(i, p)| NamedParam {
                name: format!("p{i}"),
                shape: p.shape.clone(),
                values: p.value.clone(),
            })
            .collect();
        Ok(Self {
            format_version: CHECKPOINT_FORMAT,
            kind: kind.to_string(),
            layers,
            config: serde_json::to_value(config)?,
            params,
            meta: serde_json::Value::Null,
        })
    }

    pub fn config<C: DeserializeOwned>(&self, expect_kind: &str) -> Result<C> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                found: self.format_version,
                expected: CHECKPOINT_FORMAT,
            });
        }
        if self.kind != expect_kind {
            return Err(Error::config(format!(
                "checkpoint holds a `{}`, not a `{expect_kind}`",
                self.kind
            )));
        }
        Ok(serde_json::from_value(self.config.clone())?)
    }

    /// Copies values into a freshly built model of the same architecture.
    pub fn restore_into<M: Parameterized>(&self, model: &mut M) -> Result<()> {
        let mut dst = model.params_mut();
        if dst.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: dst.len(),
                got: self.params.len(),
            });
        }
        for (p, src) in dst.iter_mut().zip(&self.params) {
            if p.shape != src.shape {
                return Err(Error::config(format!(
                    "param {} shape {:?} != {:?}",
                    src.name, src.shape, p.shape
                )));
            }
            p.value.copy_from_slice(&src.values);
            p.zero_grad();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                found: ck.format_version,
                expected: CHECKPOINT_FORMAT,
            });
        }
        Ok(ck)
    }
}
