//! Checkpoint container: a safetensors file whose header metadata carries
//! `format_version`, `kind`, the JSON-encoded architecture `spec`, the
//! training `step` and a JSON `extra` object (translation direction for
//! generators, scene id and bounds for regressors).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{NetError, ParamSet, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Generator,
    Discriminator,
    Regressor,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
            ModelKind::Regressor => "regressor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub spec: serde_json::Value,
    pub step: u64,
    pub extra: serde_json::Value,
    pub param_count: usize,
}

impl CheckpointMeta {
    pub(crate) fn spec_as<T: DeserializeOwned>(&self, path: &Path) -> Result<T> {
        serde_json::from_value(self.spec.clone()).map_err(|e| NetError::Checkpoint {
            path: path.to_path_buf(),
            message: format!("spec: {e}"),
        })
    }
}

pub(crate) fn save<S: Serialize>(
    path: &Path,
    kind: ModelKind,
    spec: &S,
    params: &ParamSet,
    step: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let err = |message: String| NetError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let spec = serde_json::to_string(spec).map_err(|e| err(e.to_string()))?;
    let metadata = HashMap::from([
        ("format_version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("kind".to_string(), kind.as_str().to_string()),
        ("spec".to_string(), spec),
        ("step".to_string(), step.to_string()),
        ("extra".to_string(), extra.to_string()),
    ]);
    let bytes =
        safetensors::serialize(params.tensors(), Some(metadata)).map_err(|e| err(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
    }
    let tmp = path.with_extension("safetensors.tmp");
    fs::write(&tmp, bytes).map_err(|e| err(e.to_string()))?;
    fs::rename(&tmp, path).map_err(|e| err(e.to_string()))?;
    Ok(())
}

/// Reads only the header metadata.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = fs::read(path).map_err(|e| NetError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_meta(path, &bytes)
}

fn parse_meta(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta> {
    let err = |message: String| NetError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let (_, header) =
        safetensors::SafeTensors::read_metadata(bytes).map_err(|e| err(e.to_string()))?;
    let md = header
        .metadata()
        .clone()
        .ok_or_else(|| err("no metadata".into()))?;
    let field = |k: &str| {
        md.get(k)
            .ok_or_else(|| err(format!("missing metadata field {k}")))
    };
    let format_version: u32 = field("format_version")?
        .parse()
        .map_err(|_| err("bad format_version".into()))?;
    if format_version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported format version {format_version}")));
    }
    let kind: ModelKind = serde_json::from_value(serde_json::Value::String(field("kind")?.clone()))
        .map_err(|e| err(e.to_string()))?;
    let spec = serde_json::from_str(field("spec")?).map_err(|e| err(e.to_string()))?;
    let step = field("step")?.parse().map_err(|_| err("bad step".into()))?;
    let extra = serde_json::from_str(field("extra")?).map_err(|e| err(e.to_string()))?;
    let param_count = header
        .tensors()
        .values()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    Ok(CheckpointMeta {
        format_version,
        kind,
        spec,
        step,
        extra,
        param_count,
    })
}

pub(crate) fn load(
    path: &Path,
    kind: ModelKind,
) -> Result<(CheckpointMeta, HashMap<String, Tensor>)> {
    let bytes = fs::read(path).map_err(|e| NetError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let meta = parse_meta(path, &bytes)?;
    if meta.kind != kind {
        return Err(NetError::Checkpoint {
            path: path.to_path_buf(),
            message: format!(
                "holds a {}, expected a {}",
                meta.kind.as_str(),
                kind.as_str()
            ),
        });
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok((meta, tensors))
}
