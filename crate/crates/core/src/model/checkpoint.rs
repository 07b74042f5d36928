//! Versioned JSON checkpoint: model configuration, named tensors and, for
//! resumable runs, the optimizer and scheduler state.

use std::fs;
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{Result, TseError};
use crate::training::TrainState;

pub const CHECKPOINT_FORMAT: &str = "tse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Always `"f64"` when written; `"f32"` files are accepted on read.
    pub dtype: String,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsRecord {
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

impl From<ModelParams> for ParamsRecord {
    fn from(p: ModelParams) -> Self {
        let tensors = p
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
                data: t.iter().copied().collect(),
            })
            .collect();
        ParamsRecord {
            config: p.config.clone(),
            tensors,
        }
    }
}

impl TryFrom<ParamsRecord> for ModelParams {
    type Error = TseError;

    fn try_from(r: ParamsRecord) -> Result<Self> {
        r.config.validate()?;
        let mut p = ModelParams::zeros(&r.config);
        let mut views = p.tensors_mut();
        if views.len() != r.tensors.len() {
            return Err(TseError::Shape(format!(
                "checkpoint has {} tensors, configuration implies {}",
                r.tensors.len(),
                views.len()
            )));
        }
        for ((name, view), rec) in views.iter_mut().zip(&r.tensors) {
            if *name != rec.name {
                return Err(TseError::Shape(format!("expected tensor {name}, found {}", rec.name)));
            }
            if view.shape() != rec.shape.as_slice() || rec.data.len() != view.len() {
                return Err(TseError::Shape(format!(
                    "tensor {name}: expected shape {:?}, found {:?} with {} values",
                    view.shape(),
                    rec.shape,
                    rec.data.len()
                )));
            }
            if rec.dtype != "f64" && rec.dtype != "f32" {
                return Err(TseError::Shape(format!("tensor {name}: unsupported dtype {}", rec.dtype)));
            }
            let src = ndarray::ArrayView::from_shape(IxDyn(&rec.shape), &rec.data)
                .map_err(|e| TseError::Shape(format!("tensor {name}: {e}")))?;
            view.assign(&src);
        }
        drop(views);
        Ok(p)
    }
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRecord::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ParamsRecord::deserialize(d)?;
        ModelParams::try_from(r).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: ModelParams,
    /// Present in checkpoints a run can resume from.
    #[serde(default)]
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    pub fn new(params: ModelParams, train_state: Option<TrainState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params,
            train_state,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| TseError::Parse {
            location: "checkpoint".into(),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(TseError::Parse {
                location: "checkpoint".into(),
                message: format!("not a checkpoint (format {:?})", ck.format),
            });
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(TseError::Parse {
                location: "checkpoint".into(),
                message: format!("unsupported checkpoint version {}", ck.version),
            });
        }
        Ok(ck)
    }

    /// Write atomically: a temporary sibling is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()).map_err(|e| TseError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| TseError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TseError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            TseError::Parse { message, .. } => TseError::Parse {
                location: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}
