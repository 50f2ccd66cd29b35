//! Single-file tensor archives (safetensors) with a JSON metadata entry.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype as StDtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

fn st_dtype(d: Dtype) -> StDtype {
    match d {
        Dtype::F32 => StDtype::F32,
        Dtype::F64 => StDtype::F64,
    }
}

/// Writes `tensors` to `path`, storing `meta` under the metadata key `key`.
pub fn write_archive<T: Scalar>(path: &Path, tensors: &[(String, &Tensor<T>)], key: &str, meta: &str) -> Result<()> {
    let bytes: Vec<Vec<u8>> = tensors.iter().map(|(_, t)| t.to_le_bytes()).collect();
    let mut views = Vec::with_capacity(tensors.len());
    for ((name, t), b) in tensors.iter().zip(&bytes) {
        views.push((name.clone(), TensorView::new(st_dtype(T::DTYPE), t.shape.clone(), b)?));
    }
    let info = HashMap::from([(key.to_string(), meta.to_string())]);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    safetensors::serialize_to_file(views, Some(info), &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads every tensor (converted to `T`) and the metadata string under `key`.
pub fn read_archive<T: Scalar>(path: &Path, key: &str) -> Result<(Vec<(String, Tensor<T>)>, String)> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&raw)?;
    let meta = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(key))
        .cloned()
        .ok_or_else(|| Error::Format(format!("{}: missing `{key}` metadata", path.display())))?;
    let st = SafeTensors::deserialize(&raw)?;
    let mut out = Vec::new();
    for (name, view) in st.tensors() {
        let data: Vec<T> = match view.dtype() {
            StDtype::F32 => f32::read_le(view.data())
                .into_iter()
                .map(|v| T::from_f64_lossy(v as f64))
                .collect(),
            StDtype::F64 => f64::read_le(view.data()).into_iter().map(T::from_f64_lossy).collect(),
            other => return Err(Error::Format(format!("{name}: unsupported dtype {other:?}"))),
        };
        out.push((name, Tensor::new(view.shape().to_vec(), data)?));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((out, meta))
}
