use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::spec::{ArchSpec, BlockKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Depthwise,
    Pointwise,
}

/// One transferable layer. Depthwise shapes are `[C, kh, kw]`, pointwise
/// shapes are `[C_out, C_in]`. `layer_id` counts within its kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer_id: usize,
    pub kind: LayerKind,
    pub block: usize,
    pub weight: String,
    pub bias: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthwiseLayer {
    pub layer_id: usize,
    pub channels: usize,
    pub kernel_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointwiseLayer {
    pub layer_id: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Affine {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum BlockSlots {
    Standard {
        dw: Affine,
        norm: Affine,
        pw1: Affine,
        pw2: Affine,
    },
    Gated {
        norm1: Affine,
        pw_in: Affine,
        dw: Affine,
        pw_out: Affine,
        norm2: Affine,
        pw1: Affine,
        pw2: Affine,
    },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockPlan {
    pub slots: BlockSlots,
    pub channels: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DownPlan {
    pub norm: Affine,
    pub conv: Affine,
    pub out_channels: usize,
}

/// Parameter slots resolved once per model so the hot loops avoid name lookups.
#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub stem_conv: Affine,
    pub stem_norm: Affine,
    /// `downs[s]` is the downsampler entering stage `s` (none for stage 0).
    pub downs: Vec<Option<DownPlan>>,
    /// Blocks grouped per stage.
    pub stages: Vec<Vec<BlockPlan>>,
    pub head_norm: Affine,
    pub head_fc: Affine,
}

/// A built model: spec, seed, parameters and the canonical layer index.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub spec: ArchSpec,
    pub seed: u64,
    pub params: ParamStore<T>,
    pub layer_index: Vec<LayerEntry>,
    pub(crate) program: Program,
}

impl<T: Scalar> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.seed == other.seed && self.params == other.params
    }
}

enum Init {
    FanIn,
    Zeros,
    Ones,
}

struct Builder<T> {
    params: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::filled(shape, T::one()),
            Init::FanIn => {
                let fan_in: usize = shape[1..].iter().product();
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64_lossy(self.rng.gen_range(-bound..bound)))
                    .collect();
                Tensor {
                    shape: shape.to_vec(),
                    data,
                }
            }
        };
        self.params.insert(name, t)
    }

    fn norm(&mut self, prefix: &str, c: usize) -> Affine {
        Affine {
            w: self.add(format!("{prefix}.weight"), &[c], Init::Ones),
            b: self.add(format!("{prefix}.bias"), &[c], Init::Zeros),
        }
    }

    fn conv(&mut self, prefix: &str, shape: &[usize]) -> Affine {
        Affine {
            w: self.add(format!("{prefix}.weight"), shape, Init::FanIn),
            b: self.add(format!("{prefix}.bias"), &[shape[0]], Init::Zeros),
        }
    }
}

pub(crate) fn block_prefix(block: usize) -> String {
    format!("blocks.{block:02}")
}

fn head_seed(seed: u64) -> u64 {
    seed ^ 0x6865_6164_5f72_6e67 // "head_rng"
}

/// Builds a model with deterministic initialization from `(spec, seed)`.
pub fn build_model<T: Scalar>(spec: &ArchSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut b = Builder {
        params: ParamStore::default(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let p = spec.stem.patch;
    let stem_conv = b.conv("stem.conv", &[spec.stem.channels, spec.input.channels, p, p]);
    let stem_norm = b.norm("stem.norm", spec.stem.channels);

    let mut layer_index = Vec::new();
    let mut downs = Vec::new();
    let mut stages = Vec::new();
    let mut block = 0usize;
    let mut pw_id = 0usize;
    let mut prev_c = spec.stem.channels;
    let e = spec.expansion;
    for (s, stage) in spec.stages.iter().enumerate() {
        let c = stage.channels;
        if s == 0 {
            downs.push(None);
        } else {
            let prefix = format!("down.{s}");
            let norm = b.norm(&format!("{prefix}.norm"), prev_c);
            let conv = b.conv(&format!("{prefix}.conv"), &[c, prev_c, 2, 2]);
            downs.push(Some(DownPlan {
                norm,
                conv,
                out_channels: c,
            }));
        }
        let k = spec.stage_kernel(s);
        let mut plans = Vec::new();
        for _ in 0..stage.blocks {
            let pre = block_prefix(block);
            let mut pw = |b: &mut Builder<T>, name: &str, out: usize, inp: usize| -> Affine {
                let aff = b.conv(&format!("{pre}.{name}"), &[out, inp]);
                layer_index.push(LayerEntry {
                    layer_id: pw_id,
                    kind: LayerKind::Pointwise,
                    block,
                    weight: format!("{pre}.{name}.weight"),
                    bias: format!("{pre}.{name}.bias"),
                    shape: vec![out, inp],
                });
                pw_id += 1;
                aff
            };
            let dw_entry = LayerEntry {
                layer_id: block,
                kind: LayerKind::Depthwise,
                block,
                weight: format!("{pre}.dw.weight"),
                bias: format!("{pre}.dw.bias"),
                shape: vec![c, k, k],
            };
            let slots = match spec.block_kind {
                BlockKind::StandardDs => {
                    let dw = b.conv(&format!("{pre}.dw"), &[c, k, k]);
                    let norm = b.norm(&format!("{pre}.norm"), c);
                    let pw1 = pw(&mut b, "pw1", e * c, c);
                    let pw2 = pw(&mut b, "pw2", c, e * c);
                    BlockSlots::Standard { dw, norm, pw1, pw2 }
                }
                BlockKind::GatedDs => {
                    let norm1 = b.norm(&format!("{pre}.norm1"), c);
                    let pw_in = pw(&mut b, "pw_in", 2 * c, c);
                    let dw = b.conv(&format!("{pre}.dw"), &[c, k, k]);
                    let pw_out = pw(&mut b, "pw_out", c, c);
                    let norm2 = b.norm(&format!("{pre}.norm2"), c);
                    let pw1 = pw(&mut b, "pw1", e * c, c);
                    let pw2 = pw(&mut b, "pw2", c, e * c);
                    BlockSlots::Gated {
                        norm1,
                        pw_in,
                        dw,
                        pw_out,
                        norm2,
                        pw1,
                        pw2,
                    }
                }
            };
            layer_index.push(dw_entry);
            plans.push(BlockPlan {
                slots,
                channels: c,
                kernel: k,
            });
            block += 1;
        }
        stages.push(plans);
        prev_c = c;
    }
    let head_norm = b.norm("head.norm", prev_c);
    let head_fc = head_fc_slot(&mut b.params, prev_c, spec.num_classes, seed);

    // depthwise entries first, then pointwise, each in canonical order
    layer_index.sort_by_key(|l| (l.kind == LayerKind::Pointwise, l.layer_id));

    Ok(Model {
        spec: spec.clone(),
        seed,
        params: b.params,
        layer_index,
        program: Program {
            stem_conv,
            stem_norm,
            downs,
            stages,
            head_norm,
            head_fc,
        },
    })
}

fn head_fc_slot<T: Scalar>(params: &mut ParamStore<T>, in_c: usize, classes: usize, seed: u64) -> Affine {
    let mut b = Builder {
        params: std::mem::take(params),
        rng: ChaCha8Rng::seed_from_u64(head_seed(seed)),
    };
    let aff = b.conv("head.fc", &[classes, in_c]);
    *params = b.params;
    aff
}

impl<T: Scalar> Model<T> {
    pub fn depthwise_layers(&self) -> Vec<DepthwiseLayer> {
        self.layer_index
            .iter()
            .filter(|l| l.kind == LayerKind::Depthwise)
            .map(|l| DepthwiseLayer {
                layer_id: l.layer_id,
                channels: l.shape[0],
                kernel_size: l.shape[1],
            })
            .collect()
    }

    pub fn pointwise_layers(&self) -> Vec<PointwiseLayer> {
        self.layer_index
            .iter()
            .filter(|l| l.kind == LayerKind::Pointwise)
            .map(|l| PointwiseLayer {
                layer_id: l.layer_id,
                in_channels: l.shape[1],
                out_channels: l.shape[0],
            })
            .collect()
    }

    pub fn layers_of(&self, kind: LayerKind) -> impl Iterator<Item = &LayerEntry> {
        self.layer_index.iter().filter(move |l| l.kind == kind)
    }

    pub fn layer(&self, kind: LayerKind, layer_id: usize) -> Option<&LayerEntry> {
        self.layers_of(kind).find(|l| l.layer_id == layer_id)
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Replaces the classifier with a freshly initialized one for `num_classes`.
    pub fn rebuild_head(&mut self, num_classes: usize) {
        let in_c = self.spec.stages.last().map(|s| s.channels).unwrap_or(0);
        self.spec.num_classes = num_classes;
        self.program.head_fc = head_fc_slot(&mut self.params, in_c, num_classes, self.seed);
    }

    /// Overwrites parameters with those in `source`; names and shapes must match.
    pub fn load_params(&mut self, source: ParamStore<T>) -> Result<()> {
        for (name, t) in source.iter() {
            let slot = self.params.require_slot(name)?;
            if self.params.at(slot).shape != t.shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: expected {:?}, got {:?}",
                    self.params.at(slot).shape,
                    t.shape
                )));
            }
            *self.params.at_mut(slot) = t.clone();
        }
        if source.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                source.len()
            )));
        }
        Ok(())
    }
}
