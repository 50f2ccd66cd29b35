//! Randomized comparison of the training backend (f32) against the
//! brute-force reference convolutions (f64).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archzoo::{build_model, ArchSpec, BlockKind, Model, ParamStore};
use crate::backend::{depthwise_forward, linear_forward, DwGeometry};
use crate::convref::{depthwise_conv_ref, ds_block_ref, pointwise_conv_ref, BlockWeights};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Tensor, Tensor4};

pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const BLOCK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCheck {
    pub cases: usize,
    pub seed: u64,
    pub depthwise_max_diff: f64,
    pub pointwise_max_diff: f64,
    pub block_max_diff: f64,
}

impl BackendCheck {
    pub fn pass(&self) -> bool {
        self.depthwise_max_diff <= LAYER_TOLERANCE
            && self.pointwise_max_diff <= LAYER_TOLERANCE
            && self.block_max_diff <= BLOCK_TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn max_diff(fast: &FeatureMap<f32>, reference: &Tensor4<f64>) -> f64 {
    fast.to_tensor4().max_abs_diff(reference)
}

fn depthwise_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, c) = (rng.gen_range(1..=3), rng.gen_range(1..=8));
    let k = [1, 3, 5, 7][rng.gen_range(0..4)];
    let (h, w) = (rng.gen_range(k..=k + 6), rng.gen_range(k..=k + 6));
    let geo = DwGeometry {
        kh: k,
        kw: k,
        stride: rng.gen_range(1..=2),
        padding: rng.gen_range(0..=k / 2),
    };
    let x = FeatureMap::from_vec(n, h, w, c, uniform(rng, n * h * w * c));
    let kernel = uniform(rng, c * k * k);
    let bias = uniform(rng, c);
    let fast = depthwise_forward(&x, &kernel, &bias, geo);
    let xr = x.to_tensor4().cast::<f64>();
    let mut reference = depthwise_conv_ref(&xr, &Tensor::new(vec![c, k, k], widen(&kernel))?, geo.stride, geo.padding)?;
    add_bias(&mut reference, &bias);
    Ok(max_diff(&fast, &reference))
}

fn pointwise_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, h, w) = (rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6));
    let (cin, cout) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
    let x = FeatureMap::from_vec(n, h, w, cin, uniform(rng, n * h * w * cin));
    let weight = uniform(rng, cout * cin);
    let bias = uniform(rng, cout);
    let fast = FeatureMap::from_vec(n, h, w, cout, linear_forward(&x.data, x.rows(), &weight, &bias, cout));
    let xr = x.to_tensor4().cast::<f64>();
    let mut reference = pointwise_conv_ref(&xr, &Tensor::new(vec![cout, cin], widen(&weight))?)?;
    add_bias(&mut reference, &bias);
    Ok(max_diff(&fast, &reference))
}

fn add_bias(t: &mut Tensor4<f64>, bias: &[f32]) {
    let s = t.shape;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let i = t.index(n, c, y, x);
                    t.data[i] += bias[c] as f64;
                }
            }
        }
    }
}

fn block_weights(params: &ParamStore<f32>, kind: BlockKind, block: usize) -> Result<BlockWeights<f64>> {
    let t = |name: &str| -> Result<Tensor<f64>> {
        let full = format!("blocks.{block:02}.{name}");
        params.get(&full).map(Tensor::cast).ok_or(Error::UnknownParameter(full))
    };
    let v = |name: &str| t(name).map(|x| x.data);
    let aff = |name: &str| -> Result<(Tensor<f64>, Vec<f64>)> { Ok((t(&format!("{name}.weight"))?, v(&format!("{name}.bias"))?)) };
    let norm = |name: &str| -> Result<(Vec<f64>, Vec<f64>)> { Ok((v(&format!("{name}.weight"))?, v(&format!("{name}.bias"))?)) };
    Ok(match kind {
        BlockKind::StandardDs => BlockWeights::Standard {
            dw: t("dw.weight")?,
            dw_bias: v("dw.bias")?,
            norm: norm("norm")?,
            pw1: aff("pw1")?,
            pw2: aff("pw2")?,
        },
        BlockKind::GatedDs => BlockWeights::Gated {
            norm1: norm("norm1")?,
            pw_in: aff("pw_in")?,
            dw: t("dw.weight")?,
            dw_bias: v("dw.bias")?,
            pw_out: aff("pw_out")?,
            norm2: norm("norm2")?,
            pw1: aff("pw1")?,
            pw2: aff("pw2")?,
        },
    })
}

fn block_case(rng: &mut ChaCha8Rng, case: usize) -> Result<f64> {
    let spec = if case.is_multiple_of(2) { ArchSpec::micro_convnext() } else { ArchSpec::micro_gated() };
    let mut model: Model<f32> = build_model(&spec, rng.gen())?;
    // every parameter random, so norms and biases are exercised too
    let names: Vec<String> = model.params.names().to_vec();
    for name in names {
        let t = model.params.get_mut(&name).expect("listed name");
        let fresh = uniform(rng, t.data.len());
        t.data.copy_from_slice(&fresh);
    }
    let block = rng.gen_range(0..model.num_blocks());
    let c = model.params.get(&format!("blocks.{block:02}.dw.weight")).expect("block has dw").shape[0];
    let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=6), rng.gen_range(1..=6));
    let x = FeatureMap::from_vec(n, h, w, c, uniform(rng, n * h * w * c));
    let fast = model.block_forward_at(block, &x)?;
    let weights = block_weights(&model.params, model.spec.block_kind, block)?;
    let reference = ds_block_ref(&x.to_tensor4().cast::<f64>(), &weights)?;
    Ok(max_diff(&fast, &reference.output))
}

/// Runs `cases` random depthwise, pointwise and whole-block comparisons.
pub fn verify_backend(cases: usize, seed: u64) -> Result<BackendCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = BackendCheck {
        cases,
        seed,
        depthwise_max_diff: 0.0,
        pointwise_max_diff: 0.0,
        block_max_diff: 0.0,
    };
    for case in 0..cases {
        check.depthwise_max_diff = check.depthwise_max_diff.max(depthwise_case(&mut rng)?);
        check.pointwise_max_diff = check.pointwise_max_diff.max(pointwise_case(&mut rng)?);
        check.block_max_diff = check.block_max_diff.max(block_case(&mut rng, case)?);
    }
    Ok(check)
}
