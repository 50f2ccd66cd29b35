//! Channels-last training kernels with hand-written backward passes.
//!
//! Activations are flattened to `rows × channels` where `rows = N·H·W`;
//! every op here works on those flat buffers. Gradients for parameters are
//! accumulated into caller-provided slices so a whole batch can share them.

use crate::scalar::{lit, Scalar};
use crate::tensor::FeatureMap;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// `y = x · Wᵀ + b` for `x: rows × in`, `W: out × in`.
pub fn linear_forward<T: Scalar>(x: &[T], rows: usize, w: &[T], b: &[T], out_dim: usize) -> Vec<T> {
    let in_dim = w.len() / out_dim;
    debug_assert_eq!(x.len(), rows * in_dim);
    let mut y = Vec::with_capacity(rows * out_dim);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    T::gemm(
        rows,
        in_dim,
        out_dim,
        T::one(),
        x,
        in_dim as isize,
        1,
        w,
        1,
        in_dim as isize,
        T::one(),
        &mut y,
        out_dim as isize,
        1,
    );
    y
}

/// Backward of [`linear_forward`]. Accumulates into `dw`/`db` and returns `dx`
/// when requested.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    w: &[T],
    out_dim: usize,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let in_dim = w.len() / out_dim;
    // dW += dyᵀ · x
    T::gemm(
        out_dim,
        rows,
        in_dim,
        T::one(),
        dy,
        1,
        out_dim as isize,
        x,
        in_dim as isize,
        1,
        T::one(),
        dw,
        in_dim as isize,
        1,
    );
    for row in dy.chunks_exact(out_dim) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += *g;
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![T::zero(); rows * in_dim];
    T::gemm(
        rows,
        out_dim,
        in_dim,
        T::one(),
        dy,
        out_dim as isize,
        1,
        w,
        in_dim as isize,
        1,
        T::zero(),
        &mut dx,
        in_dim as isize,
        1,
    );
    Some(dx)
}

/// Saved statistics of a channel layer norm.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Layer normalization over the last (channel) dimension.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / channels;
    let inv_c = lit::<T>(1.0 / channels as f64);
    let eps = lit::<T>(LAYER_NORM_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * channels..(r + 1) * channels];
        let mean = xr.iter().copied().sum::<T>() * inv_c;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        let yr = &mut y[r * channels..(r + 1) * channels];
        let hr = &mut xhat[r * channels..(r + 1) * channels];
        for c in 0..channels {
            let h = (xr[c] - mean) * rs;
            hr[c] = h;
            yr[c] = h * gamma[c] + beta[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    channels: usize,
    gamma: &[T],
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / channels;
    let inv_c = lit::<T>(1.0 / channels as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); channels];
    for r in 0..rows {
        let dyr = &dy[r * channels..(r + 1) * channels];
        let hr = &cache.xhat[r * channels..(r + 1) * channels];
        let mut mean_d = T::zero();
        let mut mean_dh = T::zero();
        for c in 0..channels {
            dgamma[c] += dyr[c] * hr[c];
            dbeta[c] += dyr[c];
            let d = dyr[c] * gamma[c];
            dxhat[c] = d;
            mean_d += d;
            mean_dh += d * hr[c];
        }
        mean_d *= inv_c;
        mean_dh *= inv_c;
        let rs = cache.rstd[r];
        let dxr = &mut dx[r * channels..(r + 1) * channels];
        for c in 0..channels {
            dxr[c] = rs * (dxhat[c] - mean_d - hr[c] * mean_dh);
        }
    }
    dx
}

/// Geometry of a depthwise convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DwGeometry {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl DwGeometry {
    /// Stride 1 with "same" zero padding for an odd kernel.
    pub fn same(k: usize) -> Self {
        Self {
            kh: k,
            kw: k,
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn out_dim(&self, input: usize, k: usize) -> usize {
        (input + 2 * self.padding - k) / self.stride + 1
    }
}

fn to_channels_last<T: Scalar>(kernel: &[T], c: usize, taps: usize) -> Vec<T> {
    let mut out = vec![T::zero(); kernel.len()];
    for ch in 0..c {
        for t in 0..taps {
            out[t * c + ch] = kernel[ch * taps + t];
        }
    }
    out
}

/// Per-channel convolution (cross-correlation) with kernels shaped `C × kh × kw`.
pub fn depthwise_forward<T: Scalar>(
    x: &FeatureMap<T>,
    kernel: &[T],
    bias: &[T],
    geo: DwGeometry,
) -> FeatureMap<T> {
    let c = x.c;
    let taps = geo.kh * geo.kw;
    debug_assert_eq!(kernel.len(), c * taps);
    let oh = geo.out_dim(x.h, geo.kh);
    let ow = geo.out_dim(x.w, geo.kw);
    let kt = to_channels_last(kernel, c, taps);
    let mut out = FeatureMap::zeros(x.n, oh, ow, c);
    for n in 0..x.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = out.index(n, oy, ox, 0);
                let acc = &mut out.data[o..o + c];
                acc.copy_from_slice(bias);
                for ky in 0..geo.kh {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..geo.kw {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let i = x.index(n, iy as usize, ix as usize, 0);
                        let xin = &x.data[i..i + c];
                        let kr = &kt[(ky * geo.kw + kx) * c..(ky * geo.kw + kx + 1) * c];
                        for ch in 0..c {
                            acc[ch] += xin[ch] * kr[ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`depthwise_forward`]; accumulates kernel and bias gradients.
pub fn depthwise_backward<T: Scalar>(
    x: &FeatureMap<T>,
    kernel: &[T],
    geo: DwGeometry,
    dy: &FeatureMap<T>,
    dkernel: &mut [T],
    dbias: &mut [T],
) -> FeatureMap<T> {
    let c = x.c;
    let taps = geo.kh * geo.kw;
    let kt = to_channels_last(kernel, c, taps);
    let mut dkt = vec![T::zero(); c * taps];
    let mut dx = FeatureMap::zeros(x.n, x.h, x.w, c);
    for n in 0..dy.n {
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                let o = dy.index(n, oy, ox, 0);
                let g = &dy.data[o..o + c];
                for ch in 0..c {
                    dbias[ch] += g[ch];
                }
                for ky in 0..geo.kh {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..geo.kw {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let i = x.index(n, iy as usize, ix as usize, 0);
                        let t = (ky * geo.kw + kx) * c;
                        let kr = &kt[t..t + c];
                        let xin = &x.data[i..i + c];
                        let dk = &mut dkt[t..t + c];
                        for ch in 0..c {
                            dk[ch] += g[ch] * xin[ch];
                        }
                        let dxi = &mut dx.data[i..i + c];
                        for ch in 0..c {
                            dxi[ch] += g[ch] * kr[ch];
                        }
                    }
                }
            }
        }
    }
    for ch in 0..c {
        for t in 0..taps {
            dkernel[ch * taps + t] += dkt[t * c + ch];
        }
    }
    dx
}

/// Gathers non-overlapping `p × p` patches into rows ordered `(c_in, py, px)`,
/// matching a `C_out × C_in × p × p` weight layout.
pub fn patches<T: Scalar>(x: &FeatureMap<T>, p: usize) -> (Vec<T>, usize, usize) {
    let (oh, ow) = (x.h / p, x.w / p);
    let cols = x.c * p * p;
    let mut out = vec![T::zero(); x.n * oh * ow * cols];
    for n in 0..x.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((n * oh + oy) * ow + ox) * cols;
                for py in 0..p {
                    for px in 0..p {
                        let i = x.index(n, oy * p + py, ox * p + px, 0);
                        for ci in 0..x.c {
                            out[row + (ci * p + py) * p + px] = x.data[i + ci];
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Inverse scatter of [`patches`] for gradients.
pub fn unpatch<T: Scalar>(dcols: &[T], n: usize, h: usize, w: usize, c: usize, p: usize) -> FeatureMap<T> {
    let (oh, ow) = (h / p, w / p);
    let cols = c * p * p;
    let mut dx = FeatureMap::zeros(n, h, w, c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * cols;
                for py in 0..p {
                    for px in 0..p {
                        let i = dx.index(b, oy * p + py, ox * p + px, 0);
                        for ci in 0..c {
                            dx.data[i + ci] += dcols[row + (ci * p + py) * p + px];
                        }
                    }
                }
            }
        }
    }
    dx
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = lit::<T>(GELU_K);
    let c = lit::<T>(GELU_C);
    let half = lit::<T>(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = lit::<T>(GELU_K);
    let c = lit::<T>(GELU_C);
    let half = lit::<T>(0.5);
    let three = lit::<T>(3.0);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * c * x * x)
}

/// Mean over spatial positions: `N × H × W × C → N × C`.
pub fn global_avg_pool<T: Scalar>(x: &FeatureMap<T>) -> Vec<T> {
    let hw = x.h * x.w;
    let inv = lit::<T>(1.0 / hw as f64);
    let mut out = vec![T::zero(); x.n * x.c];
    for n in 0..x.n {
        let o = &mut out[n * x.c..(n + 1) * x.c];
        for s in 0..hw {
            let i = (n * hw + s) * x.c;
            for ch in 0..x.c {
                o[ch] += x.data[i + ch];
            }
        }
        for v in o.iter_mut() {
            *v *= inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &[T], n: usize, h: usize, w: usize, c: usize) -> FeatureMap<T> {
    let hw = h * w;
    let inv = lit::<T>(1.0 / hw as f64);
    let mut dx = FeatureMap::zeros(n, h, w, c);
    for b in 0..n {
        for s in 0..hw {
            let i = (b * hw + s) * c;
            for ch in 0..c {
                dx.data[i + ch] = dy[b * c + ch] * inv;
            }
        }
    }
    dx
}

/// Label-smoothed softmax cross entropy averaged over the batch.
/// Returns `(loss, dlogits)`.
pub fn cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize, smoothing: f64) -> (f64, Vec<T>) {
    let n = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0f64;
    let off = smoothing / classes as f64;
    let on = 1.0 - smoothing + off;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let log_sum = sum.ln();
        for j in 0..classes {
            let target = if j == label { on } else { off };
            let logp = row[j].to_f64_lossy() - max - log_sum;
            loss -= target * logp;
            grad[b * classes + j] = lit::<T>((exps[j] / sum - target) / n as f64);
        }
    }
    (loss / n as f64, grad)
}
