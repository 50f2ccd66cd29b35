use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::{flatten_stack, FilterBank, FlatStack};
use super::plan::{TransferMode, TransferPlan};
use crate::archzoo::{LayerKind, Model};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameters excluded from every update, with their digests at freeze time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub checksum_before: BTreeMap<String, String>,
}

impl FreezeMask {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Freezes `names` at their current values in `model`.
    pub fn capture<T: Scalar>(model: &Model<T>, names: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut checksum_before = BTreeMap::new();
        for n in names {
            let t = model.params.get(&n).ok_or_else(|| Error::UnknownParameter(n.clone()))?;
            checksum_before.insert(n, t.digest());
        }
        Ok(Self { checksum_before })
    }

    pub fn len(&self) -> usize {
        self.checksum_before.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checksum_before.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.checksum_before.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.checksum_before.keys().map(String::as_str)
    }

    pub fn frozen_param_names(&self) -> BTreeSet<String> {
        self.checksum_before.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenCheck {
    pub name: String,
    pub equal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenReport {
    pub checks: Vec<FrozenCheck>,
    pub pass: bool,
}

impl FrozenReport {
    pub fn violations(&self) -> impl Iterator<Item = &str> {
        self.checks.iter().filter(|c| !c.equal).map(|c| c.name.as_str())
    }
}

/// Compares every frozen tensor of `model` to its recorded digest.
pub fn verify_frozen<T: Scalar>(mask: &FreezeMask, model: &Model<T>) -> Result<FrozenReport> {
    let mut checks = Vec::with_capacity(mask.len());
    for (name, before) in &mask.checksum_before {
        let t = model.params.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
        checks.push(FrozenCheck {
            name: name.clone(),
            equal: &t.digest() == before,
        });
    }
    let pass = checks.iter().all(|c| c.equal);
    Ok(FrozenReport { checks, pass })
}

/// Origin of one filled kernel (depthwise) or matrix row (pointwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotOrigin {
    pub target_layer: usize,
    pub target_channel: usize,
    pub source_layer: usize,
    pub source_channel: usize,
}

#[derive(Debug, Clone)]
pub struct Transplanted<T> {
    pub model: Model<T>,
    pub mask: FreezeMask,
    pub provenance: Vec<SlotOrigin>,
    /// True when any kernel was resampled to a different size.
    pub resized: bool,
}

/// Bilinear resampling of a `sh × sw` kernel onto `th × tw` (corner-aligned).
pub fn resize_kernel<T: Scalar>(k: &[T], (sh, sw): (usize, usize), (th, tw): (usize, usize)) -> Vec<T> {
    let coord = |i: usize, t: usize, s: usize| -> (usize, usize, f64) {
        if t == 1 || s == 1 {
            let c = (s - 1) as f64 / 2.0;
            return (c.floor() as usize, c.ceil() as usize, c - c.floor());
        }
        let x = i as f64 * (s - 1) as f64 / (t - 1) as f64;
        let lo = (x.floor() as usize).min(s - 1);
        (lo, (lo + 1).min(s - 1), x - lo as f64)
    };
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = coord(y, th, sh);
        for x in 0..tw {
            let (x0, x1, fx) = coord(x, tw, sw);
            let v = |yy: usize, xx: usize| k[yy * sw + xx].to_f64_lossy();
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            out.push(T::from_f64_lossy(top * (1.0 - fy) + bot * fy));
        }
    }
    out
}

struct Target {
    layer_id: usize,
    weight: String,
    bias: String,
    shape: Vec<usize>,
}

fn targets<T: Scalar>(model: &Model<T>, kind: LayerKind, plan: &TransferPlan) -> Result<Vec<Target>> {
    let all: Vec<Target> = model
        .layers_of(kind)
        .map(|l| Target {
            layer_id: l.layer_id,
            weight: l.weight.clone(),
            bias: l.bias.clone(),
            shape: l.shape.clone(),
        })
        .collect();
    let range = plan.target_layers(all.len())?;
    Ok(all.into_iter().filter(|t| range.contains(&t.layer_id)).collect())
}

fn check_kernel(source: (usize, usize), target: (usize, usize), resize: bool) -> Result<bool> {
    if source == target {
        Ok(false)
    } else if resize {
        Ok(true)
    } else {
        Err(Error::KernelSizeMismatch {
            source_kernel: source,
            target_kernel: target,
        })
    }
}

/// Fills target depthwise layers from stack slots `order[0..]` in canonical order.
fn fill_from_stack<T: Scalar>(
    model: &mut Model<T>,
    targets: &[Target],
    stack: &FlatStack<T>,
    order: &[usize],
    resize: bool,
    provenance: &mut Vec<SlotOrigin>,
) -> Result<bool> {
    let mut resized = false;
    let mut next = 0;
    for t in targets {
        let (c, kh, kw) = (t.shape[0], t.shape[1], t.shape[2]);
        resized |= check_kernel((stack.kh, stack.kw), (kh, kw), resize)?;
        let mut w = Vec::with_capacity(c * kh * kw);
        let mut b = Vec::with_capacity(c);
        for ch in 0..c {
            let slot = order[next];
            next += 1;
            let k = stack.kernel(slot);
            if (stack.kh, stack.kw) == (kh, kw) {
                w.extend_from_slice(k);
            } else {
                w.extend(resize_kernel(k, (stack.kh, stack.kw), (kh, kw)));
            }
            b.push(stack.biases[slot]);
            let (source_layer, source_channel) = stack.origin(slot);
            provenance.push(SlotOrigin {
                target_layer: t.layer_id,
                target_channel: ch,
                source_layer,
                source_channel,
            });
        }
        write(model, t, w, b)?;
    }
    Ok(resized)
}

fn write<T: Scalar>(model: &mut Model<T>, t: &Target, w: Vec<T>, b: Vec<T>) -> Result<()> {
    let wt = model.params.get_mut(&t.weight).ok_or_else(|| Error::UnknownParameter(t.weight.clone()))?;
    debug_assert_eq!(wt.data.len(), w.len());
    wt.data = w;
    let bt = model.params.get_mut(&t.bias).ok_or_else(|| Error::UnknownParameter(t.bias.clone()))?;
    debug_assert_eq!(bt.data.len(), b.len());
    bt.data = b;
    Ok(())
}

fn demand(targets: &[Target]) -> usize {
    targets.iter().map(|t| t.shape[0]).sum()
}

/// Copies filters from `bank` into `target` according to `plan`.
///
/// Only the filled weights and their biases change; with `plan.freeze` the
/// returned mask covers exactly those tensors.
pub fn transplant<T: Scalar>(target: Model<T>, bank: &FilterBank<T>, plan: &TransferPlan) -> Result<Transplanted<T>> {
    plan.validate()?;
    let mut model = target;
    let want_kind = match plan.mode {
        TransferMode::PointwiseLayerwise => LayerKind::Pointwise,
        _ => LayerKind::Depthwise,
    };
    if bank.kind != want_kind {
        return Err(Error::InvalidArgument(format!(
            "{} plan needs a {want_kind:?} bank, got {:?}",
            plan.mode.as_str(),
            bank.kind
        )));
    }
    let targets = targets(&model, want_kind, plan)?;
    let mut provenance = Vec::new();
    let mut resized = false;
    match plan.mode {
        TransferMode::Layerwise | TransferMode::PointwiseLayerwise => {
            for t in &targets {
                let src = bank
                    .entries
                    .iter()
                    .find(|e| e.layer_id == t.layer_id)
                    .ok_or_else(|| Error::LayerShapeMismatch {
                        layer: t.layer_id,
                        source_shape: vec![],
                        target_shape: t.shape.clone(),
                    })?;
                let s = &src.kernels.shape;
                if s[0] != t.shape[0] || (want_kind == LayerKind::Pointwise && s != &t.shape) {
                    return Err(Error::LayerShapeMismatch {
                        layer: t.layer_id,
                        source_shape: s.clone(),
                        target_shape: t.shape.clone(),
                    });
                }
                let w = if want_kind == LayerKind::Depthwise {
                    let (src_k, dst_k) = ((s[1], s[2]), (t.shape[1], t.shape[2]));
                    if check_kernel(src_k, dst_k, plan.resize)? {
                        resized = true;
                        src.kernels
                            .data
                            .chunks_exact(src_k.0 * src_k.1)
                            .flat_map(|k| resize_kernel(k, src_k, dst_k))
                            .collect()
                    } else {
                        src.kernels.data.clone()
                    }
                } else {
                    src.kernels.data.clone()
                };
                write(&mut model, t, w, src.bias.data.clone())?;
                provenance.extend((0..t.shape[0]).map(|c| SlotOrigin {
                    target_layer: t.layer_id,
                    target_channel: c,
                    source_layer: src.layer_id,
                    source_channel: c,
                }));
            }
        }
        TransferMode::Stack | TransferMode::Shuffle => {
            let stack = flatten_stack(bank)?;
            let need = demand(&targets);
            if stack.len() < need {
                return Err(Error::InsufficientStack {
                    supply: stack.len(),
                    demand: need,
                });
            }
            let mut order: Vec<usize> = (0..stack.len()).collect();
            if let Some(seed) = plan.rng_seed {
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            }
            resized = fill_from_stack(&mut model, &targets, &stack, &order, plan.resize, &mut provenance)?;
        }
        TransferMode::RepeatFirstK => {
            let k = plan.repeat_k();
            if k > bank.len() {
                return Err(Error::invalid_spec(
                    "k",
                    format!("{k} exceeds the source's {} layers", bank.len()),
                ));
            }
            let first = FilterBank {
                kind: bank.kind,
                provenance: bank.provenance.clone(),
                entries: bank.entries[..k].to_vec(),
            };
            let stack = flatten_stack(&first)?;
            let order: Vec<usize> = (0..demand(&targets)).map(|i| i % stack.len()).collect();
            resized = fill_from_stack(&mut model, &targets, &stack, &order, plan.resize, &mut provenance)?;
        }
    }
    let mask = if plan.freeze {
        FreezeMask::capture(&model, targets.iter().flat_map(|t| [t.weight.clone(), t.bias.clone()]))?
    } else {
        FreezeMask::empty()
    };
    Ok(Transplanted {
        model,
        mask,
        provenance,
        resized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_and_constant() {
        let k: Vec<f64> = (0..9).map(|v| v as f64).collect();
        assert_eq!(resize_kernel(&k, (3, 3), (3, 3)), k);
        let c = vec![2.0f64; 9];
        assert!(resize_kernel(&c, (3, 3), (7, 7)).iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let up = resize_kernel(&k, (3, 3), (5, 5));
        assert_eq!(up[0], 0.0);
        assert_eq!(up[24], 8.0);
        assert!((up[12] - 4.0).abs() < 1e-12);
    }
}
