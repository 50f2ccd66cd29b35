use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{read_archive, write_archive};
use crate::archzoo::{LayerKind, Model};
use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

const META_KEY: &str = "filtergraft.bank";

/// Where a bank came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub arch: String,
    pub dataset: String,
    pub run_id: String,
    /// Seconds since the Unix epoch.
    pub extracted_at: u64,
}

impl Provenance {
    pub fn new(arch: impl Into<String>, dataset: impl Into<String>, run_id: impl Into<String>) -> Self {
        Self {
            arch: arch.into(),
            dataset: dataset.into(),
            run_id: run_id.into(),
            extracted_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn validate(&self) -> Result<()> {
        for (field, v) in [("arch", &self.arch), ("dataset", &self.dataset), ("run_id", &self.run_id)] {
            if v.is_empty() {
                return Err(Error::invalid_spec(format!("provenance.{field}"), "must be nonempty"));
            }
        }
        Ok(())
    }
}

/// Kernels of one layer: `[C, kh, kw]` (depthwise) or `[C_out, C_in]` (pointwise),
/// plus the per-output-channel bias that travels with them.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry<T> {
    pub layer_id: usize,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> BankEntry<T> {
    pub fn channels(&self) -> usize {
        self.kernels.shape[0]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape[1], *self.kernels.shape.get(2).unwrap_or(&1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub kind: LayerKind,
    pub provenance: Provenance,
    pub entries: Vec<BankEntry<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankMeta {
    kind: LayerKind,
    dtype: Dtype,
    provenance: Provenance,
    layers: Vec<LayerMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    layer_id: usize,
    shape: Vec<usize>,
    digest: String,
    bias_digest: String,
}

fn extract<T: Scalar>(model: &Model<T>, kind: LayerKind, provenance: Provenance) -> Result<FilterBank<T>> {
    provenance.validate()?;
    let mut entries = Vec::new();
    for l in model.layers_of(kind) {
        let get = |name: &str| {
            model
                .params
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))
        };
        entries.push(BankEntry {
            layer_id: l.layer_id,
            kernels: get(&l.weight)?,
            bias: get(&l.bias)?,
        });
    }
    Ok(FilterBank {
        kind,
        provenance,
        entries,
    })
}

/// Copies every depthwise kernel stack (and bias) of `model`, in canonical order.
pub fn extract_depthwise<T: Scalar>(model: &Model<T>, provenance: Provenance) -> Result<FilterBank<T>> {
    extract(model, LayerKind::Depthwise, provenance)
}

/// Copies every pointwise matrix (and bias) of `model`, in canonical order.
pub fn extract_pointwise<T: Scalar>(model: &Model<T>, provenance: Provenance) -> Result<FilterBank<T>> {
    extract(model, LayerKind::Pointwise, provenance)
}

impl<T: Scalar> FilterBank<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_kernels(&self) -> usize {
        self.entries.iter().map(|e| e.channels()).sum()
    }

    /// Content digest over kind, layer ids, shapes and values (provenance excluded).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.kind).as_bytes());
        for e in &self.entries {
            h.update((e.layer_id as u64).to_le_bytes());
            for d in &e.kernels.shape {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(e.kernels.to_le_bytes());
            h.update(e.bias.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = BankMeta {
            kind: self.kind,
            dtype: T::DTYPE,
            provenance: self.provenance.clone(),
            layers: self
                .entries
                .iter()
                .map(|e| LayerMeta {
                    layer_id: e.layer_id,
                    shape: e.kernels.shape.clone(),
                    digest: e.kernels.digest(),
                    bias_digest: e.bias.digest(),
                })
                .collect(),
        };
        let mut tensors = Vec::new();
        for e in &self.entries {
            tensors.push((format!("{:04}", e.layer_id), &e.kernels));
            tensors.push((format!("{:04}.bias", e.layer_id), &e.bias));
        }
        write_archive(path, &tensors, META_KEY, &serde_json::to_string(&meta)?)
    }

    /// Loads a bank. Arrays are checked against the metadata digests when the
    /// stored precision matches `T`.
    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = read_archive::<T>(path, META_KEY)?;
        let meta: BankMeta = serde_json::from_str(&meta)?;
        let map: BTreeMap<String, Tensor<T>> = tensors.into_iter().collect();
        let take = |name: &str| {
            map.get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("{}: missing array {name}", path.display())))
        };
        let mut entries = Vec::new();
        for l in &meta.layers {
            let kernels = take(&format!("{:04}", l.layer_id))?;
            let bias = take(&format!("{:04}.bias", l.layer_id))?;
            if kernels.shape != l.shape {
                return Err(Error::Format(format!("layer {}: shape disagrees with metadata", l.layer_id)));
            }
            if meta.dtype == T::DTYPE && (kernels.digest() != l.digest || bias.digest() != l.bias_digest) {
                return Err(Error::DigestMismatch {
                    path: path.to_path_buf(),
                    expected: l.digest.clone(),
                    found: kernels.digest(),
                });
            }
            entries.push(BankEntry {
                layer_id: l.layer_id,
                kernels,
                bias,
            });
        }
        Ok(Self {
            kind: meta.kind,
            provenance: meta.provenance,
            entries,
        })
    }
}

/// All per-channel kernels of a depthwise bank in one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatStack<T> {
    pub kh: usize,
    pub kw: usize,
    /// `len × kh × kw` values.
    pub kernels: Vec<T>,
    /// One bias per kernel.
    pub biases: Vec<T>,
    /// `(layer_id, start_index, count)` per source layer.
    pub boundaries: Vec<(usize, usize, usize)>,
}

impl<T: Scalar> FlatStack<T> {
    pub fn len(&self) -> usize {
        self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biases.is_empty()
    }

    pub fn kernel(&self, i: usize) -> &[T] {
        let n = self.kh * self.kw;
        &self.kernels[i * n..(i + 1) * n]
    }

    /// `(source layer, channel)` of stack slot `i`.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        for &(layer, start, count) in &self.boundaries {
            if i >= start && i < start + count {
                return (layer, i - start);
            }
        }
        panic!("stack index {i} out of range {}", self.len())
    }
}

/// Flattens a depthwise bank in layer order, channel order within a layer.
pub fn flatten_stack<T: Scalar>(bank: &FilterBank<T>) -> Result<FlatStack<T>> {
    if bank.kind != LayerKind::Depthwise {
        return Err(Error::InvalidArgument("only depthwise banks can be flattened".into()));
    }
    let first = bank.entries.first().ok_or(Error::EmptyLayer(0))?;
    let (kh, kw) = first.kernel_size();
    let mut out = FlatStack {
        kh,
        kw,
        kernels: Vec::new(),
        biases: Vec::new(),
        boundaries: Vec::new(),
    };
    for e in &bank.entries {
        if e.kernel_size() != (kh, kw) {
            return Err(Error::HeterogeneousKernelSize(format!(
                "layer {} is {:?}, layer {} is {:?}",
                first.layer_id,
                (kh, kw),
                e.layer_id,
                e.kernel_size()
            )));
        }
        out.boundaries.push((e.layer_id, out.len(), e.channels()));
        out.kernels.extend_from_slice(&e.kernels.data);
        out.biases.extend_from_slice(&e.bias.data);
    }
    Ok(out)
}
