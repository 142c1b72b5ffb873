//! Encoder-decoder offset network.
//!
//! Twenty-seven 3x3 convolutions over four resolution levels. Reference
//! channel counts at `width_mult = 1`:
//!
//! | convs   | level | channels |
//! |---------|-------|----------|
//! | C1-3    | 1     | 64       |
//! | C4-6    | 1/2   | 128      |
//! | C7-9    | 1/4   | 256      |
//! | C10-18  | 1/8   | 512      |
//! | C19-21  | 1/4   | 256      |
//! | C22-24  | 1/2   | 128      |
//! | C25-26  | 1     | 128      |
//! | C27     | 1     | head     |
//!
//! Encoder blocks end in 2x average pooling; decoder blocks start with 2x
//! nearest upsampling. Each decoder block output is summed with the encoder
//! output of the same resolution (C19-21 + C7-9, C22-24 + C4-6, C25-26 +
//! C1-3; the narrower C1-3 map is added into the leading channels). Every
//! conv but C27 is followed by ReLU. C27 is linear; the caller applies any
//! output activation.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::layers::{
    avg_pool2, avg_pool2_backward, relu, relu_backward, upsample2, upsample2_backward, Conv2d,
    ConvGrads,
};
use crate::tensor::{Real, Rng, Tensor};

pub const DEPTH: usize = 3;
pub const CONV_COUNT: usize = 27;

const ENC0: Range<usize> = 0..3;
const ENC1: Range<usize> = 3..6;
const ENC2: Range<usize> = 6..9;
const MID: Range<usize> = 9..18;
const DEC2: Range<usize> = 18..21;
const DEC1: Range<usize> = 21..24;
const DEC0: Range<usize> = 24..26;
const HEAD: usize = 26;

/// Reference channel count scaled by `width_mult`, at least 1.
pub fn scaled(channels: usize, width_mult: f64) -> usize {
    ((channels as f64 * width_mult).round() as usize).max(1)
}

/// Output channels of C1..C26 for a width multiplier.
pub fn channel_plan(width_mult: f64) -> [usize; CONV_COUNT - 1] {
    let mut plan = [0; CONV_COUNT - 1];
    for (k, c) in plan.iter_mut().enumerate() {
        let reference = match k {
            0..=2 => 64,
            3..=5 => 128,
            6..=8 => 256,
            9..=17 => 512,
            18..=20 => 256,
            _ => 128,
        };
        *c = scaled(reference, width_mult);
    }
    plan
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetNet<T: Real = f32> {
    pub convs: Vec<Conv2d<T>>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct UnetCache<T: Real> {
    /// `acts[k]` is the input of conv `k`; `outs[k]` its post-ReLU output.
    acts: Vec<Tensor<T>>,
    outs: Vec<Tensor<T>>,
    features: Tensor<T>,
}

pub struct UnetOutput<T: Real> {
    /// Linear output of C27, `head x h x w`.
    pub head: Option<Tensor<T>>,
    /// Input of C27, `c_last x h x w`.
    pub features: Tensor<T>,
    pub cache: UnetCache<T>,
}

impl<T: Real> OffsetNet<T> {
    fn layout(in_c: usize, head_c: usize, width_mult: f64) -> Vec<(usize, usize)> {
        let plan = channel_plan(width_mult);
        let mut dims = Vec::with_capacity(CONV_COUNT);
        let mut prev = in_c;
        for &c in &plan {
            dims.push((prev, c));
            prev = c;
        }
        dims.push((prev, head_c));
        dims
    }

    pub fn zeros(in_c: usize, head_c: usize, width_mult: f64) -> Result<Self> {
        let convs = Self::layout(in_c, head_c, width_mult)
            .into_iter()
            .map(|(i, o)| Conv2d::zeros(i, o))
            .collect::<Result<_>>()?;
        Ok(OffsetNet { convs })
    }

    /// Fan-in scaled uniform init. Hidden layers use a ReLU gain of sqrt(2);
    /// the head uses `head_gain`.
    pub fn init(in_c: usize, head_c: usize, width_mult: f64, head_gain: f64, rng: &mut Rng) -> Result<Self> {
        let convs = Self::layout(in_c, head_c, width_mult)
            .into_iter()
            .enumerate()
            .map(|(k, (i, o))| {
                let gain = if k == HEAD { head_gain } else { std::f64::consts::SQRT_2 };
                Conv2d::init(i, o, gain, rng)
            })
            .collect::<Result<_>>()?;
        Ok(OffsetNet { convs })
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn feature_channels(&self) -> usize {
        self.convs[HEAD].in_channels()
    }

    pub fn head_channels(&self) -> usize {
        self.convs[HEAD].out_channels()
    }

    fn run_block(&self, range: Range<usize>, mut x: Tensor<T>, acts: &mut Vec<Tensor<T>>, outs: &mut Vec<Tensor<T>>) -> Result<Tensor<T>> {
        for k in range {
            let y = relu(&self.convs[k].forward(&x)?);
            acts.push(x);
            outs.push(y.clone());
            x = y;
        }
        Ok(x)
    }

    /// Runs C1..C26 and, when `with_head`, C27.
    pub fn forward(&self, x: &Tensor<T>, with_head: bool) -> Result<UnetOutput<T>> {
        let s = x.shape();
        if s.len() != 3 || s[0] != self.in_channels() {
            return Err(Error::shape(format!(
                "offset network expects {} x h x w input, got {s:?}",
                self.in_channels()
            )));
        }
        let m = 1 << DEPTH;
        if s[1] % m != 0 || s[2] % m != 0 {
            return Err(Error::shape(format!(
                "spatial size {}x{} must be divisible by {m}",
                s[1], s[2]
            )));
        }
        let mut acts = Vec::with_capacity(CONV_COUNT);
        let mut outs = Vec::with_capacity(CONV_COUNT);
        let e0 = self.run_block(ENC0, x.clone(), &mut acts, &mut outs)?;
        let e1 = self.run_block(ENC1, avg_pool2(&e0)?, &mut acts, &mut outs)?;
        let e2 = self.run_block(ENC2, avg_pool2(&e1)?, &mut acts, &mut outs)?;
        let mid = self.run_block(MID, avg_pool2(&e2)?, &mut acts, &mut outs)?;
        let d2 = self.run_block(DEC2, upsample2(&mid)?, &mut acts, &mut outs)?.add(&e2)?;
        let d1 = self.run_block(DEC1, upsample2(&d2)?, &mut acts, &mut outs)?.add(&e1)?;
        let mut d0 = self.run_block(DEC0, upsample2(&d1)?, &mut acts, &mut outs)?;
        add_leading(&mut d0, &e0)?;
        let head = if with_head {
            Some(self.convs[HEAD].forward(&d0)?)
        } else {
            None
        };
        Ok(UnetOutput {
            head,
            features: d0.clone(),
            cache: UnetCache {
                acts,
                outs,
                features: d0,
            },
        })
    }

    fn back_block(
        &self,
        range: Range<usize>,
        cache: &UnetCache<T>,
        mut g: Tensor<T>,
        grads: &mut [Option<ConvGrads<T>>],
    ) -> Result<Tensor<T>> {
        for k in range.rev() {
            let gpre = relu_backward(&cache.outs[k], &g)?;
            let cg = self.convs[k].backward(&cache.acts[k], &gpre)?;
            g = cg.grad_x.clone();
            grads[k] = Some(cg);
        }
        Ok(g)
    }

    /// Backward from gradients on the head output and/or on the features.
    /// Returns per-conv gradients in conv order (the head entry is `None`
    /// when the head was not run) and the input gradient.
    pub fn backward(
        &self,
        cache: &UnetCache<T>,
        grad_head: Option<&Tensor<T>>,
        grad_features: Option<&Tensor<T>>,
    ) -> Result<(Vec<Option<ConvGrads<T>>>, Tensor<T>)> {
        let mut grads: Vec<Option<ConvGrads<T>>> = vec![None; CONV_COUNT];
        let d0 = &cache.features;
        let mut g_d0 = match grad_features {
            Some(g) => g.clone(),
            None => d0.zeros_like(),
        };
        if let Some(gh) = grad_head {
            let cg = self.convs[HEAD].backward(d0, gh)?;
            g_d0.add_assign(&cg.grad_x)?;
            grads[HEAD] = Some(cg);
        }
        let mut g_e0 = leading(&g_d0, self.convs[ENC0.end - 1].out_channels())?;
        let g_d1 = upsample2_backward(&self.back_block(DEC0, cache, g_d0, &mut grads)?)?;
        let mut g_e1 = g_d1.clone();
        let g_d2 = upsample2_backward(&self.back_block(DEC1, cache, g_d1, &mut grads)?)?;
        let mut g_e2 = g_d2.clone();
        let g_mid = upsample2_backward(&self.back_block(DEC2, cache, g_d2, &mut grads)?)?;
        g_e2.add_assign(&avg_pool2_backward(&self.back_block(MID, cache, g_mid, &mut grads)?)?)?;
        g_e1.add_assign(&avg_pool2_backward(&self.back_block(ENC2, cache, g_e2, &mut grads)?)?)?;
        g_e0.add_assign(&avg_pool2_backward(&self.back_block(ENC1, cache, g_e1, &mut grads)?)?)?;
        let g_in = self.back_block(ENC0, cache, g_e0, &mut grads)?;
        Ok((grads, g_in))
    }
}

/// `dst[..c] += src` where `src` has `c <= dst` channels.
fn add_leading<T: Real>(dst: &mut Tensor<T>, src: &Tensor<T>) -> Result<()> {
    let (ds, ss) = (dst.shape(), src.shape());
    if ds[1..] != ss[1..] || ss[0] > ds[0] {
        return Err(Error::shape(format!("cannot add {ss:?} into {ds:?}")));
    }
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
    Ok(())
}

fn leading<T: Real>(x: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    x.slice0(0, c)
}
