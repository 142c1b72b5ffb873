//! 3x3 "same" convolution, ReLU, 2x average pooling and 2x nearest
//! upsampling on channel-first `c x h x w` tensors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T: Real = f32> {
    /// `out_c x in_c x 3 x 3`
    pub kernel: Tensor<T>,
    /// `out_c`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Real = f32> {
    pub grad_x: Tensor<T>,
    pub grad_kernel: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// `(y0, y1)` output rows for which tap `k` reads an in-range input row.
#[inline(always)]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n.saturating_sub(1) } else { n };
    (lo, hi.max(lo))
}

impl<T: Real> Conv2d<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ks = kernel.shape();
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 || bias.shape() != [ks[0]] {
            return Err(Error::shape(format!(
                "conv kernel {ks:?} with bias {:?}",
                bias.shape()
            )));
        }
        Ok(Conv2d { kernel, bias })
    }

    pub fn zeros(in_c: usize, out_c: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[out_c, in_c, 3, 3])?, Tensor::zeros(&[out_c])?)
    }

    /// Uniform kernel in `[-bound, bound]` with `bound = gain * sqrt(3 / fan_in)`;
    /// zero bias.
    pub fn init(in_c: usize, out_c: usize, gain: f64, rng: &mut Rng) -> Result<Self> {
        let bound = gain * (3.0 / (in_c * 9) as f64).sqrt();
        Self::new(
            Tensor::uniform(rng, &[out_c, in_c, 3, 3], -bound, bound)?,
            Tensor::zeros(&[out_c])?,
        )
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    fn dims(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() != 3 || s[0] != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} x h x w input, got {s:?}",
                self.in_channels()
            )));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// Cross-correlation with zero padding 1, stride 1, plus bias.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims(x)?;
        let oc = self.out_channels();
        let k = self.kernel.data();
        let xd = x.data();
        let bias = self.bias.data();
        let mut out = vec![T::zero(); oc * h * w];
        out.par_chunks_mut(h * w).enumerate().for_each(|(o, plane)| {
            plane.fill(bias[o]);
            for i in 0..c {
                let src = &xd[i * h * w..(i + 1) * h * w];
                for ky in 0..3 {
                    let (y0, y1) = tap_range(ky, h);
                    for kx in 0..3 {
                        let wt = k[((o * c + i) * 3 + ky) * 3 + kx];
                        if wt == T::zero() {
                            continue;
                        }
                        let (x0, x1) = tap_range(kx, w);
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let dst = &mut plane[y * w + x0..y * w + x1];
                            let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (d, &v) in dst.iter_mut().zip(s) {
                                *d += wt * v;
                            }
                        }
                    }
                }
            }
        });
        Tensor::new(&[oc, h, w], out)
    }

    pub fn backward(&self, x: &Tensor<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (c, h, w) = self.dims(x)?;
        let oc = self.out_channels();
        if upstream.shape() != [oc, h, w] {
            return Err(Error::shape(format!(
                "conv upstream {:?} expected [{oc}, {h}, {w}]",
                upstream.shape()
            )));
        }
        let k = self.kernel.data();
        let xd = x.data();
        let ud = upstream.data();
        let hw = h * w;

        let mut gx = vec![T::zero(); c * hw];
        gx.par_chunks_mut(hw).enumerate().for_each(|(i, plane)| {
            for o in 0..oc {
                let up = &ud[o * hw..(o + 1) * hw];
                for ky in 0..3 {
                    let (y0, y1) = tap_range(ky, h);
                    for kx in 0..3 {
                        let wt = k[((o * c + i) * 3 + ky) * 3 + kx];
                        if wt == T::zero() {
                            continue;
                        }
                        let (x0, x1) = tap_range(kx, w);
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let dst = &mut plane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            let g = &up[y * w + x0..y * w + x1];
                            for (d, &v) in dst.iter_mut().zip(g) {
                                *d += wt * v;
                            }
                        }
                    }
                }
            }
        });

        let mut gk = vec![T::zero(); oc * c * 9];
        gk.par_chunks_mut(c * 9).enumerate().for_each(|(o, row)| {
            let up = &ud[o * hw..(o + 1) * hw];
            for i in 0..c {
                let src = &xd[i * hw..(i + 1) * hw];
                for ky in 0..3 {
                    let (y0, y1) = tap_range(ky, h);
                    for kx in 0..3 {
                        let (x0, x1) = tap_range(kx, w);
                        let mut acc = 0.0f64;
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let g = &up[y * w + x0..y * w + x1];
                            let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            let mut part = T::zero();
                            for (&a, &b) in g.iter().zip(s) {
                                part += a * b;
                            }
                            acc += part.f64();
                        }
                        row[(i * 3 + ky) * 3 + kx] = T::of(acc);
                    }
                }
            }
        });

        let gb: Vec<T> = (0..oc)
            .map(|o| T::of(ud[o * hw..(o + 1) * hw].iter().map(|v| v.f64()).sum()))
            .collect();

        Ok(ConvGrads {
            grad_x: Tensor::new(&[c, h, w], gx)?,
            grad_kernel: Tensor::new(&[oc, c, 3, 3], gk)?,
            grad_bias: Tensor::new(&[oc], gb)?,
        })
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given the layer output.
pub fn relu_backward<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    output.zip_map(upstream, |o, g| if o > T::zero() { g } else { T::zero() })
}

fn chw<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected c x h x w, got {s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

/// 2x2 mean pooling; `h` and `w` must be even.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("cannot pool {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let q = T::of(0.25);
    Tensor::from_fn(&[c, oh, ow], |i| {
        let base = i[0] * h * w + 2 * i[1] * w + 2 * i[2];
        (d[base] + d[base + 1] + d[base + w] + d[base + w + 1]) * q
    })
}

pub fn avg_pool2_backward<T: Real>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, oh, ow) = chw(upstream)?;
    let u = upstream.data();
    let q = T::of(0.25);
    Tensor::from_fn(&[c, 2 * oh, 2 * ow], |i| u[(i[0] * oh + i[1] / 2) * ow + i[2] / 2] * q)
}

pub fn upsample2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x)?;
    let d = x.data();
    Tensor::from_fn(&[c, 2 * h, 2 * w], |i| d[(i[0] * h + i[1] / 2) * w + i[2] / 2])
}

pub fn upsample2_backward<T: Real>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(upstream)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("cannot fold {h}x{w}")));
    }
    let u = upstream.data();
    Tensor::from_fn(&[c, h / 2, w / 2], |i| {
        let base = i[0] * h * w + 2 * i[1] * w + 2 * i[2];
        u[base] + u[base + 1] + u[base + w] + u[base + w + 1]
    })
}
