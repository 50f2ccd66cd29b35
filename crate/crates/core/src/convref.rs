//! Brute-force reference convolutions.
//!
//! These are deliberately written as explicit loops over `N × C × H × W`
//! tensors and share no code with [`crate::backend`]; they exist to check it.
//! Convention: cross-correlation (no kernel flip), zero padding, dilation 1.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape4, Tensor, Tensor4};

/// `Y_c = X_c ⋆ K_c` for every channel `c`; `kernels` is `C × kh × kw`.
pub fn depthwise_conv_ref<T: Scalar>(
    x: &Tensor4<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    if kernels.shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "depthwise kernels must be C x kh x kw, got {:?}",
            kernels.shape
        )));
    }
    let (kc, kh, kw) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    let s = x.shape;
    if kc != s.c {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernels have {kc}",
            s.c
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if kh > s.h + 2 * padding || kw > s.w + 2 * padding {
        return Err(Error::InvalidArgument(format!(
            "kernel {kh}x{kw} exceeds padded input {}x{}",
            s.h + 2 * padding,
            s.w + 2 * padding
        )));
    }
    let oh = (s.h + 2 * padding - kh) / stride + 1;
    let ow = (s.w + 2 * padding - kw) / stride + 1;
    let out = Tensor4::from_fn(Shape4::new(s.n, s.c, oh, ow), |n, c, oy, ox| {
        let mut acc = T::zero();
        for ky in 0..kh {
            for kx in 0..kw {
                let iy = (oy * stride + ky) as isize - padding as isize;
                let ix = (ox * stride + kx) as isize - padding as isize;
                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                    continue;
                }
                acc += x.at(n, c, iy as usize, ix as usize) * kernels.data[(c * kh + ky) * kw + kx];
            }
        }
        acc
    });
    Ok(out)
}

/// `Z_o = Σ_c W[o, c] · Y_c` at every spatial location; `w` is `C_out × C_in`.
pub fn pointwise_conv_ref<T: Scalar>(y: &Tensor4<T>, w: &Tensor<T>) -> Result<Tensor4<T>> {
    if w.shape.len() != 2 || w.shape[1] != y.shape.c {
        return Err(Error::ShapeMismatch(format!(
            "mixing matrix {:?} does not accept {} input channels",
            w.shape, y.shape.c
        )));
    }
    let (c_out, c_in) = (w.shape[0], w.shape[1]);
    let s = y.shape;
    Ok(Tensor4::from_fn(Shape4::new(s.n, c_out, s.h, s.w), |n, o, yy, xx| {
        let mut acc = T::zero();
        for c in 0..c_in {
            acc += w.data[o * c_in + c] * y.at(n, c, yy, xx);
        }
        acc
    }))
}

fn add_channel_bias<T: Scalar>(t: &mut Tensor4<T>, bias: &[T]) -> Result<()> {
    if bias.len() != t.shape.c {
        return Err(Error::ShapeMismatch(format!(
            "bias of length {} for {} channels",
            bias.len(),
            t.shape.c
        )));
    }
    let s = t.shape;
    for n in 0..s.n {
        for c in 0..s.c {
            for yy in 0..s.h {
                for xx in 0..s.w {
                    let i = t.index(n, c, yy, xx);
                    t.data[i] += bias[c];
                }
            }
        }
    }
    Ok(())
}

/// Layer norm across channels at every spatial location, eps `1e-6`.
pub fn channel_norm_ref<T: Scalar>(x: &Tensor4<T>, gamma: &[T], beta: &[T]) -> Tensor4<T> {
    let s = x.shape;
    let mut out = Tensor4::zeros(s);
    let eps = lit::<T>(1e-6);
    let cf = lit::<T>(s.c as f64);
    for n in 0..s.n {
        for yy in 0..s.h {
            for xx in 0..s.w {
                let mut mean = T::zero();
                for c in 0..s.c {
                    mean += x.at(n, c, yy, xx);
                }
                mean /= cf;
                let mut var = T::zero();
                for c in 0..s.c {
                    let d = x.at(n, c, yy, xx) - mean;
                    var += d * d;
                }
                var /= cf;
                let denom = (var + eps).sqrt();
                for c in 0..s.c {
                    let i = out.index(n, c, yy, xx);
                    out.data[i] = (x.at(n, c, yy, xx) - mean) / denom * gamma[c] + beta[c];
                }
            }
        }
    }
    out
}

/// GELU (tanh form), written out independently of the backend.
pub fn gelu_ref<T: Scalar>(v: T) -> T {
    let pi = lit::<T>(std::f64::consts::PI);
    let inner = (lit::<T>(2.0) / pi).sqrt() * (v + lit::<T>(0.044715) * v.powi(3));
    v * (T::one() + inner.tanh()) / lit::<T>(2.0)
}

fn map<T: Scalar>(t: &Tensor4<T>, f: impl Fn(T) -> T) -> Tensor4<T> {
    Tensor4 {
        shape: t.shape,
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, f: impl Fn(T, T) -> T) -> Tensor4<T> {
    Tensor4 {
        shape: a.shape,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn take_channels<T: Scalar>(t: &Tensor4<T>, start: usize, count: usize) -> Tensor4<T> {
    let s = t.shape;
    Tensor4::from_fn(Shape4::new(s.n, count, s.h, s.w), |n, c, y, x| t.at(n, start + c, y, x))
}

/// Weights of one depthwise-separable block, in archzoo's layouts.
#[derive(Debug, Clone)]
pub enum BlockWeights<T> {
    /// `x + pw2(gelu(pw1(norm(dw(x)))))`
    Standard {
        dw: Tensor<T>,
        dw_bias: Vec<T>,
        norm: (Vec<T>, Vec<T>),
        pw1: (Tensor<T>, Vec<T>),
        pw2: (Tensor<T>, Vec<T>),
    },
    /// `y = x + pw_out(a ⊙ dw(b))` with `(a, b) = split(pw_in(norm1(x)))`,
    /// then `y + pw2(gelu(pw1(norm2(y))))`.
    Gated {
        norm1: (Vec<T>, Vec<T>),
        pw_in: (Tensor<T>, Vec<T>),
        dw: Tensor<T>,
        dw_bias: Vec<T>,
        pw_out: (Tensor<T>, Vec<T>),
        norm2: (Vec<T>, Vec<T>),
        pw1: (Tensor<T>, Vec<T>),
        pw2: (Tensor<T>, Vec<T>),
    },
}

/// Block output plus the depthwise activations before normalization.
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    pub depthwise_out: Tensor4<T>,
    pub output: Tensor4<T>,
}

fn dense<T: Scalar>(x: &Tensor4<T>, (w, b): &(Tensor<T>, Vec<T>)) -> Result<Tensor4<T>> {
    let mut out = pointwise_conv_ref(x, w)?;
    add_channel_bias(&mut out, b)?;
    Ok(out)
}

fn mlp<T: Scalar>(
    x: &Tensor4<T>,
    norm: &(Vec<T>, Vec<T>),
    pw1: &(Tensor<T>, Vec<T>),
    pw2: &(Tensor<T>, Vec<T>),
) -> Result<Tensor4<T>> {
    let normed = channel_norm_ref(x, &norm.0, &norm.1);
    let hidden = map(&dense(&normed, pw1)?, gelu_ref);
    dense(&hidden, pw2)
}

/// Reference forward of one block with stride 1 and "same" padding.
pub fn ds_block_ref<T: Scalar>(x: &Tensor4<T>, weights: &BlockWeights<T>) -> Result<BlockTrace<T>> {
    match weights {
        BlockWeights::Standard {
            dw,
            dw_bias,
            norm,
            pw1,
            pw2,
        } => {
            let pad = dw.shape.get(1).copied().unwrap_or(1) / 2;
            let mut d = depthwise_conv_ref(x, dw, 1, pad)?;
            add_channel_bias(&mut d, dw_bias)?;
            let branch = mlp(&d, norm, pw1, pw2)?;
            if branch.shape != x.shape {
                return Err(Error::ShapeMismatch("block output channels differ from input".into()));
            }
            Ok(BlockTrace {
                depthwise_out: d,
                output: zip(x, &branch, |a, b| a + b),
            })
        }
        BlockWeights::Gated {
            norm1,
            pw_in,
            dw,
            dw_bias,
            pw_out,
            norm2,
            pw1,
            pw2,
        } => {
            let c = x.shape.c;
            let normed = channel_norm_ref(x, &norm1.0, &norm1.1);
            let fused = dense(&normed, pw_in)?;
            if fused.shape.c != 2 * c {
                return Err(Error::ShapeMismatch("gated projection must produce 2C channels".into()));
            }
            let gate = take_channels(&fused, 0, c);
            let branch = take_channels(&fused, c, c);
            let pad = dw.shape.get(1).copied().unwrap_or(1) / 2;
            let mut d = depthwise_conv_ref(&branch, dw, 1, pad)?;
            add_channel_bias(&mut d, dw_bias)?;
            let mixed = zip(&gate, &d, |a, b| a * b);
            let y = zip(x, &dense(&mixed, pw_out)?, |a, b| a + b);
            let out = zip(&y, &mlp(&y, norm2, pw1, pw2)?, |a, b| a + b);
            Ok(BlockTrace {
                depthwise_out: d,
                output: out,
            })
        }
    }
}
