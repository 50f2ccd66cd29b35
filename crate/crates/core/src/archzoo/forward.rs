//! Forward and backward passes over a built [`Model`].

use super::model::{Affine, BlockPlan, BlockSlots, DownPlan, Model};
use crate::backend::{self, DwGeometry, NormCache};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Per-parameter gradient buffers aligned with the model's parameter slots.
pub type Gradients<T> = Vec<Vec<T>>;

enum BlockCache<T> {
    Standard {
        x: FeatureMap<T>,
        norm: NormCache<T>,
        normed: Vec<T>,
        hidden: Vec<T>,
        act: Vec<T>,
    },
    Gated {
        norm1: NormCache<T>,
        normed1: Vec<T>,
        gate: Vec<T>,
        branch: FeatureMap<T>,
        filtered: Vec<T>,
        mixed: Vec<T>,
        norm2: NormCache<T>,
        normed2: Vec<T>,
        hidden: Vec<T>,
        act: Vec<T>,
    },
}

struct DownCache<T> {
    norm: NormCache<T>,
    cols: Vec<T>,
    in_shape: (usize, usize, usize, usize),
}

/// Activations saved by [`Model::forward_train`] for the backward pass.
pub struct Tape<T> {
    batch: usize,
    stem_cols: Vec<T>,
    stem_norm: NormCache<T>,
    stem_out: (usize, usize),
    downs: Vec<Option<DownCache<T>>>,
    blocks: Vec<Vec<BlockCache<T>>>,
    pooled_norm: NormCache<T>,
    pooled_normed: Vec<T>,
    final_shape: (usize, usize, usize),
}

fn pair_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut Vec<T>, &mut Vec<T>) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

impl<T: Scalar> Model<T> {
    #[inline]
    fn w(&self, slot: usize) -> &[T] {
        &self.params.at(slot).data
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        (0..self.params.len())
            .map(|s| vec![T::zero(); self.params.at(s).numel()])
            .collect()
    }

    fn linear(&self, x: &[T], rows: usize, aff: Affine) -> Vec<T> {
        let out = self.params.at(aff.w).shape[0];
        backend::linear_forward(x, rows, self.w(aff.w), self.w(aff.b), out)
    }

    fn linear_back(&self, x: &[T], rows: usize, aff: Affine, dy: &[T], grads: &mut Gradients<T>, need_dx: bool) -> Option<Vec<T>> {
        let out = self.params.at(aff.w).shape[0];
        let (dw, db) = pair_mut(grads, aff.w, aff.b);
        backend::linear_backward(x, rows, self.w(aff.w), out, dy, dw, db, need_dx)
    }

    fn norm(&self, x: &[T], c: usize, aff: Affine) -> (Vec<T>, NormCache<T>) {
        backend::layer_norm_forward(x, c, self.w(aff.w), self.w(aff.b))
    }

    fn norm_back(&self, cache: &NormCache<T>, c: usize, aff: Affine, dy: &[T], grads: &mut Gradients<T>) -> Vec<T> {
        let (dg, db) = pair_mut(grads, aff.w, aff.b);
        backend::layer_norm_backward(cache, c, self.w(aff.w), dy, dg, db)
    }

    /// Logits for a batch, `N × num_classes`, without keeping activations.
    pub fn forward(&self, x: &FeatureMap<T>) -> Vec<T> {
        self.run(x, false).0
    }

    /// Number of depthwise-separable blocks across all stages.
    pub fn num_blocks(&self) -> usize {
        self.program.stages.iter().map(Vec::len).sum()
    }

    /// Runs block `index` (global order) alone on `x`.
    pub fn block_forward_at(&self, index: usize, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let plan = self
            .program
            .stages
            .iter()
            .flatten()
            .nth(index)
            .ok_or_else(|| Error::InvalidArgument(format!("block {index} out of range")))?;
        if x.c != plan.channels {
            return Err(Error::ShapeMismatch(format!(
                "block {index} takes {} channels, input has {}",
                plan.channels, x.c
            )));
        }
        Ok(self.block_forward(x.clone(), plan, false).0)
    }

    /// Logits plus the tape needed by [`Model::backward`].
    pub fn forward_train(&self, x: &FeatureMap<T>) -> (Vec<T>, Tape<T>) {
        let (logits, tape) = self.run(x, true);
        (logits, tape.expect("tape recorded"))
    }

    fn run(&self, x: &FeatureMap<T>, record: bool) -> (Vec<T>, Option<Tape<T>>) {
        let prog = &self.program;
        let n = x.n;
        let p = self.spec.stem.patch;
        let c0 = self.spec.stem.channels;
        let (cols, oh, ow) = backend::patches(x, p);
        let rows = n * oh * ow;
        let s = self.linear(&cols, rows, prog.stem_conv);
        let (s, stem_norm) = self.norm(&s, c0, prog.stem_norm);
        let mut cur = FeatureMap::from_vec(n, oh, ow, c0, s);

        let mut downs = Vec::new();
        let mut blocks = Vec::new();
        for (stage, plans) in prog.stages.iter().enumerate() {
            let down = match prog.downs[stage] {
                Some(d) => {
                    let (next, cache) = self.down_forward(&cur, d);
                    cur = next;
                    Some(cache)
                }
                None => None,
            };
            downs.push(if record { down } else { None });
            let mut caches = Vec::new();
            for plan in plans {
                let (next, cache) = self.block_forward(cur, plan, record);
                cur = next;
                if let Some(c) = cache {
                    caches.push(c);
                }
            }
            blocks.push(caches);
        }

        let pooled = backend::global_avg_pool(&cur);
        let c = cur.c;
        let (normed, pooled_norm) = self.norm(&pooled, c, prog.head_norm);
        let logits = self.linear(&normed, n, prog.head_fc);
        let tape = record.then_some(Tape {
            batch: n,
            stem_cols: cols,
            stem_norm,
            stem_out: (oh, ow),
            downs,
            blocks,
            pooled_norm,
            pooled_normed: normed,
            final_shape: (cur.h, cur.w, cur.c),
        });
        (logits, tape)
    }

    fn down_forward(&self, x: &FeatureMap<T>, d: DownPlan) -> (FeatureMap<T>, DownCache<T>) {
        let (normed, norm) = self.norm(&x.data, x.c, d.norm);
        let nx = FeatureMap::from_vec(x.n, x.h, x.w, x.c, normed);
        let (cols, oh, ow) = backend::patches(&nx, 2);
        let out = self.linear(&cols, x.n * oh * ow, d.conv);
        (
            FeatureMap::from_vec(x.n, oh, ow, d.out_channels, out),
            DownCache {
                norm,
                cols,
                in_shape: (x.n, x.h, x.w, x.c),
            },
        )
    }

    fn block_forward(&self, x: FeatureMap<T>, plan: &BlockPlan, record: bool) -> (FeatureMap<T>, Option<BlockCache<T>>) {
        let c = plan.channels;
        let rows = x.rows();
        let geo = DwGeometry::same(plan.kernel);
        match plan.slots {
            BlockSlots::Standard { dw, norm, pw1, pw2 } => {
                let d = backend::depthwise_forward(&x, self.w(dw.w), self.w(dw.b), geo);
                let (normed, ncache) = self.norm(&d.data, c, norm);
                let hidden = self.linear(&normed, rows, pw1);
                let act: Vec<T> = hidden.iter().map(|&v| backend::gelu(v)).collect();
                let o = self.linear(&act, rows, pw2);
                let mut y = x.clone();
                for (a, b) in y.data.iter_mut().zip(&o) {
                    *a += *b;
                }
                let cache = record.then_some(BlockCache::Standard {
                    x,
                    norm: ncache,
                    normed,
                    hidden,
                    act,
                });
                (y, cache)
            }
            BlockSlots::Gated {
                norm1,
                pw_in,
                dw,
                pw_out,
                norm2,
                pw1,
                pw2,
            } => {
                let (normed1, ncache1) = self.norm(&x.data, c, norm1);
                let fused = self.linear(&normed1, rows, pw_in);
                let mut gate = Vec::with_capacity(rows * c);
                let mut branch = Vec::with_capacity(rows * c);
                for r in fused.chunks_exact(2 * c) {
                    gate.extend_from_slice(&r[..c]);
                    branch.extend_from_slice(&r[c..]);
                }
                let branch = FeatureMap::from_vec(x.n, x.h, x.w, c, branch);
                let filtered = backend::depthwise_forward(&branch, self.w(dw.w), self.w(dw.b), geo).data;
                let mixed: Vec<T> = gate.iter().zip(&filtered).map(|(a, b)| *a * *b).collect();
                let o1 = self.linear(&mixed, rows, pw_out);
                let mut y1 = x;
                for (a, b) in y1.data.iter_mut().zip(&o1) {
                    *a += *b;
                }
                let (normed2, ncache2) = self.norm(&y1.data, c, norm2);
                let hidden = self.linear(&normed2, rows, pw1);
                let act: Vec<T> = hidden.iter().map(|&v| backend::gelu(v)).collect();
                let o2 = self.linear(&act, rows, pw2);
                let mut y = y1;
                for (a, b) in y.data.iter_mut().zip(&o2) {
                    *a += *b;
                }
                let cache = record.then_some(BlockCache::Gated {
                    norm1: ncache1,
                    normed1,
                    gate,
                    branch,
                    filtered,
                    mixed,
                    norm2: ncache2,
                    normed2,
                    hidden,
                    act,
                });
                (y, cache)
            }
        }
    }

    /// Backpropagates `dlogits` (already averaged over the batch) through the
    /// tape. Every parameter receives a gradient, frozen or not; freezing is
    /// the optimizer's concern.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &[T]) -> Gradients<T> {
        let prog = &self.program;
        let mut grads = self.zero_grads();
        let n = tape.batch;
        let (fh, fw, fc) = tape.final_shape;
        let dnormed = self
            .linear_back(&tape.pooled_normed, n, prog.head_fc, dlogits, &mut grads, true)
            .unwrap();
        let dpooled = self.norm_back(&tape.pooled_norm, fc, prog.head_norm, &dnormed, &mut grads);
        let mut dcur = backend::global_avg_pool_backward(&dpooled, n, fh, fw, fc);

        for stage in (0..prog.stages.len()).rev() {
            for (plan, cache) in prog.stages[stage].iter().zip(&tape.blocks[stage]).rev() {
                dcur = self.block_backward(plan, cache, dcur, &mut grads);
            }
            if let (Some(d), Some(cache)) = (prog.downs[stage], &tape.downs[stage]) {
                let (bn, h, w, c) = cache.in_shape;
                let rows = dcur.rows();
                let dcols = self
                    .linear_back(&cache.cols, rows, d.conv, &dcur.data, &mut grads, true)
                    .unwrap();
                let dnormed = backend::unpatch(&dcols, bn, h, w, c, 2);
                let dx = self.norm_back(&cache.norm, c, d.norm, &dnormed.data, &mut grads);
                dcur = FeatureMap::from_vec(bn, h, w, c, dx);
            }
        }

        let c0 = self.spec.stem.channels;
        let ds = self.norm_back(&tape.stem_norm, c0, prog.stem_norm, &dcur.data, &mut grads);
        let (oh, ow) = tape.stem_out;
        self.linear_back(&tape.stem_cols, n * oh * ow, prog.stem_conv, &ds, &mut grads, false);
        grads
    }

    fn block_backward(&self, plan: &BlockPlan, cache: &BlockCache<T>, dy: FeatureMap<T>, grads: &mut Gradients<T>) -> FeatureMap<T> {
        let c = plan.channels;
        let rows = dy.rows();
        let geo = DwGeometry::same(plan.kernel);
        match (plan.slots, cache) {
            (
                BlockSlots::Standard { dw, norm, pw1, pw2 },
                BlockCache::Standard {
                    x,
                    norm: ncache,
                    normed,
                    hidden,
                    act,
                },
            ) => {
                let dact = self.linear_back(act, rows, pw2, &dy.data, grads, true).unwrap();
                let dhidden: Vec<T> = dact
                    .iter()
                    .zip(hidden)
                    .map(|(g, h)| *g * backend::gelu_grad(*h))
                    .collect();
                let dnormed = self.linear_back(normed, rows, pw1, &dhidden, grads, true).unwrap();
                let dd = self.norm_back(ncache, c, norm, &dnormed, grads);
                let dd = FeatureMap::from_vec(dy.n, dy.h, dy.w, c, dd);
                let (dk, db) = pair_mut(grads, dw.w, dw.b);
                let mut dx = backend::depthwise_backward(x, self.w(dw.w), geo, &dd, dk, db);
                for (a, b) in dx.data.iter_mut().zip(&dy.data) {
                    *a += *b;
                }
                dx
            }
            (
                BlockSlots::Gated {
                    norm1,
                    pw_in,
                    dw,
                    pw_out,
                    norm2,
                    pw1,
                    pw2,
                },
                BlockCache::Gated {
                    norm1: ncache1,
                    normed1,
                    gate,
                    branch,
                    filtered,
                    mixed,
                    norm2: ncache2,
                    normed2,
                    hidden,
                    act,
                },
            ) => {
                let dact = self.linear_back(act, rows, pw2, &dy.data, grads, true).unwrap();
                let dhidden: Vec<T> = dact
                    .iter()
                    .zip(hidden)
                    .map(|(g, h)| *g * backend::gelu_grad(*h))
                    .collect();
                let dnormed2 = self.linear_back(normed2, rows, pw1, &dhidden, grads, true).unwrap();
                let mut dy1 = self.norm_back(ncache2, c, norm2, &dnormed2, grads);
                for (a, b) in dy1.iter_mut().zip(&dy.data) {
                    *a += *b;
                }
                let dmixed = self.linear_back(mixed, rows, pw_out, &dy1, grads, true).unwrap();
                let dgate: Vec<T> = dmixed.iter().zip(filtered).map(|(g, f)| *g * *f).collect();
                let dfiltered: Vec<T> = dmixed.iter().zip(gate).map(|(g, a)| *g * *a).collect();
                let dfiltered = FeatureMap::from_vec(dy.n, dy.h, dy.w, c, dfiltered);
                let (dk, db) = pair_mut(grads, dw.w, dw.b);
                let dbranch = backend::depthwise_backward(branch, self.w(dw.w), geo, &dfiltered, dk, db);
                let mut dfused = Vec::with_capacity(rows * 2 * c);
                for (g, b) in dgate.chunks_exact(c).zip(dbranch.data.chunks_exact(c)) {
                    dfused.extend_from_slice(g);
                    dfused.extend_from_slice(b);
                }
                let dnormed1 = self.linear_back(normed1, rows, pw_in, &dfused, grads, true).unwrap();
                let mut dx = self.norm_back(ncache1, c, norm1, &dnormed1, grads);
                for (a, b) in dx.iter_mut().zip(&dy1) {
                    *a += *b;
                }
                FeatureMap::from_vec(dy.n, dy.h, dy.w, c, dx)
            }
            _ => unreachable!("block cache does not match block kind"),
        }
    }
}
