//! The full aggregation model: offset network, deformable sampling, weight
//! branch and the weighted sum, with an exact hand-written backward pass.

use crate::aggregation::{contract, sample_grid, sample_grid_backward, GroupPartition, OffsetField, RigidGrid, WeightField};
use crate::error::{Error, Result};
use crate::nn::layers::{relu, relu_backward, Conv2d};
use crate::nn::unet::{scaled, OffsetNet, UnetCache};
use crate::noise::{estimate_noise_level, NoiseParams};
use crate::tensor::{Real, Rng, Tensor};

/// Architecture variant. `Full` is the complete model; the others remove
/// one component each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Offsets fixed at zero; only the weights are predicted.
    Rigid,
    /// Offsets predicted; one learned weight vector shared by all pixels.
    FixedWeights,
    /// The offset network regresses the output directly.
    Direct,
    /// The weight branch sees only sampled pixels and the noisy input.
    NoConcat,
}

impl Variant {
    pub fn code(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::Rigid => 1,
            Variant::FixedWeights => 2,
            Variant::Direct => 3,
            Variant::NoConcat => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Variant::Full,
            1 => Variant::Rigid,
            2 => Variant::FixedWeights,
            3 => Variant::Direct,
            4 => Variant::NoConcat,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub width_mult: f64,
    /// Rigid grid extents; their count is the sampling dimension.
    pub extents: Vec<usize>,
    /// Neighbor frames on each side of the reference (0 for images).
    pub tau: usize,
    pub blind: bool,
    /// Multiplier on the Tanh output for the two spatial offset axes. The
    /// temporal axis is scaled by `tau`.
    pub offset_scale: f64,
    /// Softmax-normalize the predicted weights over the grid samples.
    pub normalize_weights: bool,
}

impl ModelConfig {
    /// Single-image model: 5x5 grid.
    pub fn pan() -> Self {
        ModelConfig {
            variant: Variant::Full,
            width_mult: 0.125,
            extents: vec![5, 5],
            tau: 0,
            blind: true,
            offset_scale: 8.0,
            normalize_weights: false,
        }
    }

    /// Video model: 3x3x3 grid over five frames.
    pub fn stpan() -> Self {
        ModelConfig {
            variant: Variant::Full,
            width_mult: 0.125,
            extents: vec![3, 3, 3],
            tau: 2,
            blind: true,
            offset_scale: 8.0,
            normalize_weights: false,
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn frames(&self) -> usize {
        2 * self.tau + 1
    }

    pub fn input_channels(&self) -> usize {
        self.frames() + usize::from(!self.blind)
    }

    pub fn grid(&self) -> Result<RigidGrid> {
        RigidGrid::new(self.dim(), &self.extents)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.dim() == 2 && self.tau != 0 {
            return Err(Error::Config("a 2-D grid takes a single frame (tau = 0)".into()));
        }
        if self.dim() == 3 && self.tau == 0 {
            return Err(Error::Config("a 3-D grid needs tau >= 1".into()));
        }
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return Err(Error::Config(format!("width_mult {} must be positive", self.width_mult)));
        }
        if !(self.offset_scale >= 0.0 && self.offset_scale.is_finite()) {
            return Err(Error::Config(format!("offset_scale {} must be nonnegative", self.offset_scale)));
        }
        Ok(())
    }

    fn head_channels(&self) -> usize {
        match self.variant {
            Variant::Direct => 1,
            _ => self.extents.iter().product::<usize>() * self.dim(),
        }
    }

    fn axis_scale(&self, axis: usize) -> f64 {
        if axis < 2 {
            self.offset_scale
        } else {
            self.tau as f64
        }
    }
}

/// Noisy frames (`f x h x w`, linear) plus the optional noise-level map.
#[derive(Clone, Debug)]
pub struct ModelInput<T: Real = f32> {
    pub frames: Tensor<T>,
    pub noise_map: Option<Tensor<T>>,
}

impl<T: Real> ModelInput<T> {
    /// Blind input when `params` is `None`; otherwise the noise-level map is
    /// estimated from the reference (center) frame.
    pub fn new(frames: Tensor<T>, params: Option<NoiseParams>) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 3 || s[0] % 2 == 0 {
            return Err(Error::shape(format!("expected an odd number of frames f x h x w, got {s:?}")));
        }
        let noise_map = match params {
            Some(p) => {
                let r = s[0] / 2;
                let reference = frames.slice0(r, r + 1)?.reshape(&[s[1], s[2]])?;
                Some(estimate_noise_level(&reference, p)?)
            }
            None => None,
        };
        Ok(ModelInput { frames, noise_map })
    }

    pub fn cast<U: Real>(&self) -> ModelInput<U> {
        ModelInput {
            frames: self.frames.cast(),
            noise_map: self.noise_map.as_ref().map(|m| m.cast()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanModel<T: Real = f32> {
    config: ModelConfig,
    grid: RigidGrid,
    pub offset_net: OffsetNet<T>,
    pub weight_branch: Option<Vec<Conv2d<T>>>,
    /// Shared weight vector for [`Variant::FixedWeights`].
    pub fixed_weights: Option<Tensor<T>>,
}

struct Cache<T: Real> {
    net_in: Tensor<T>,
    unet: UnetCache<T>,
    /// Tanh of the head output, `n*d x h x w`.
    tanh: Option<Tensor<T>>,
    source: Option<Tensor<T>>,
    samples: Option<Tensor<T>>,
    /// Weight-branch conv inputs and hidden outputs.
    branch: Vec<Tensor<T>>,
    partition: Option<GroupPartition>,
}

pub struct Forward<T: Real = f32> {
    /// Denoised reference frame, `h x w`, linear.
    pub output: Tensor<T>,
    /// Per-group outputs when a partition was requested.
    pub groups: Vec<Tensor<T>>,
    pub offsets: Option<OffsetField<T>>,
    pub weights: Option<WeightField<T>>,
    cache: Cache<T>,
}

fn softmax_last<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.f64()));
        let mut z = 0.0;
        for v in row.iter_mut() {
            let e = (v.f64() - m).exp();
            z += e;
            *v = T::of(e);
        }
        for v in row.iter_mut() {
            *v = T::of(v.f64() / z);
        }
    }
    out
}

impl<T: Real> PanModel<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let n = grid.len();
        let cin = config.input_channels();
        let offset_net = OffsetNet::zeros(cin, config.head_channels(), config.width_mult)?;
        let feat = offset_net.feature_channels();
        let (weight_branch, fixed_weights) = match config.variant {
            Variant::Direct => (None, None),
            Variant::FixedWeights => (None, Some(Tensor::zeros(&[n])?)),
            v => {
                let wide = scaled(64, config.width_mult);
                let in_c = n + cin + if v == Variant::NoConcat { 0 } else { feat };
                (
                    Some(vec![
                        Conv2d::zeros(in_c, wide)?,
                        Conv2d::zeros(wide, wide)?,
                        Conv2d::zeros(wide, n)?,
                    ]),
                    None,
                )
            }
        };
        Ok(PanModel {
            config,
            grid,
            offset_net,
            weight_branch,
            fixed_weights,
        })
    }

    /// Seeded fan-in uniform init. Output layers start small; the weight
    /// head bias (or the shared weight vector) starts at `1/n` so the
    /// untrained model averages its samples.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let head_gain = if m.config.variant == Variant::Direct { 1.0 } else { 0.1 };
        m.offset_net = OffsetNet::init(
            m.offset_net.in_channels(),
            m.offset_net.head_channels(),
            m.config.width_mult,
            head_gain,
            rng,
        )?;
        let n = m.grid.len();
        let uniform = T::of(1.0 / n as f64);
        let normalize = m.config.normalize_weights;
        if let Some(branch) = m.weight_branch.as_mut() {
            for (k, conv) in branch.iter_mut().enumerate() {
                let gain = if k == 2 { 0.1 } else { std::f64::consts::SQRT_2 };
                *conv = Conv2d::init(conv.in_channels(), conv.out_channels(), gain, rng)?;
            }
            if !normalize {
                branch[2].bias = Tensor::full(&[n], uniform)?;
            }
        }
        if let Some(fw) = m.fixed_weights.as_mut() {
            *fw = Tensor::full(&[n], uniform)?;
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> &RigidGrid {
        &self.grid
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for c in &self.offset_net.convs {
            v.push(&c.kernel);
            v.push(&c.bias);
        }
        if let Some(b) = &self.weight_branch {
            for c in b {
                v.push(&c.kernel);
                v.push(&c.bias);
            }
        }
        if let Some(f) = &self.fixed_weights {
            v.push(f);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for c in &mut self.offset_net.convs {
            v.push(&mut c.kernel);
            v.push(&mut c.bias);
        }
        if let Some(b) = &mut self.weight_branch {
            for c in b {
                v.push(&mut c.kernel);
                v.push(&mut c.bias);
            }
        }
        if let Some(f) = &mut self.fixed_weights {
            v.push(f);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Same architecture and parameter values at another precision.
    pub fn cast<U: Real>(&self) -> PanModel<U> {
        let mut m = PanModel::<U>::zeros(self.config.clone()).expect("config already validated");
        for (dst, src) in m.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        m
    }

    fn network_input(&self, input: &ModelInput<T>) -> Result<Tensor<T>> {
        let s = input.frames.shape();
        if s.len() != 3 || s[0] != self.config.frames() {
            return Err(Error::shape(format!(
                "model takes {} frames, got input {s:?}",
                self.config.frames()
            )));
        }
        match (&input.noise_map, self.config.blind) {
            (None, true) => Ok(input.frames.clone()),
            (Some(m), false) => {
                let m = m.clone().reshape(&[1, s[1], s[2]])?;
                Tensor::concat(&[&input.frames, &m])
            }
            (None, false) => Err(Error::Config("non-blind model needs a noise-level map".into())),
            (Some(_), true) => Err(Error::Config("blind model given a noise-level map".into())),
        }
    }

    /// Source tensor for sampling: `h x w` or `h x w x f`.
    fn source(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        let s = frames.shape();
        if self.config.dim() == 2 {
            frames.clone().reshape(&[s[1], s[2]])
        } else {
            frames.permute(&[1, 2, 0])
        }
    }

    pub fn forward(&self, input: &ModelInput<T>, partition: Option<&GroupPartition>) -> Result<Forward<T>> {
        let net_in = self.network_input(input)?;
        let (h, w) = (net_in.shape()[1], net_in.shape()[2]);
        let variant = self.config.variant;
        let un = self.offset_net.forward(&net_in, variant != Variant::Rigid)?;
        let features = un.features;
        if let Some(p) = partition {
            if p.samples() != self.grid.len() {
                return Err(Error::InvalidPartition(format!(
                    "partition of {} samples for a {}-point grid",
                    p.samples(),
                    self.grid.len()
                )));
            }
        }

        if variant == Variant::Direct {
            let output = un.head.expect("head requested").reshape(&[h, w])?;
            return Ok(Forward {
                output,
                groups: Vec::new(),
                offsets: None,
                weights: None,
                cache: Cache {
                    net_in,
                    unet: un.cache,
                    tanh: None,
                    source: None,
                    samples: None,
                    branch: Vec::new(),
                    partition: None,
                },
            });
        }

        let n = self.grid.len();
        let d = self.config.dim();
        let (offsets, tanh) = if variant == Variant::Rigid {
            (OffsetField::zeros(h, w, n, d)?, None)
        } else {
            let th = un.head.expect("head requested").map(|v| v.tanh());
            let td = th.data();
            let scales: Vec<T> = (0..d).map(|a| T::of(self.config.axis_scale(a))).collect();
            let off = Tensor::from_fn(&[h, w, n, d], |i| {
                td[((i[2] * d + i[3]) * h + i[0]) * w + i[1]] * scales[i[3]]
            })?;
            (OffsetField::new(off)?, Some(th))
        };

        let source = self.source(&input.frames)?;
        let samples = sample_grid(&source, &self.grid, &offsets)?;

        let mut branch = Vec::new();
        let weights = if let Some(fw) = &self.fixed_weights {
            WeightField::broadcast(h, w, fw.data())?
        } else {
            let convs = self.weight_branch.as_ref().expect("variant has a weight branch");
            let s_chw = samples.permute(&[2, 0, 1])?;
            let wb_in = if variant == Variant::NoConcat {
                Tensor::concat(&[&s_chw, &net_in])?
            } else {
                Tensor::concat(&[&s_chw, &net_in, &features])?
            };
            let a1 = relu(&convs[0].forward(&wb_in)?);
            let a2 = relu(&convs[1].forward(&a1)?);
            let raw = convs[2].forward(&a2)?.permute(&[1, 2, 0])?;
            branch = vec![wb_in, a1, a2];
            let raw = if self.config.normalize_weights {
                softmax_last(&raw)
            } else {
                raw
            };
            WeightField::new(raw)?
        };

        let output = contract(&samples, &weights, 0..n, 1.0)?;
        let groups = match partition {
            Some(p) => (0..p.groups())
                .map(|g| contract(&samples, &weights, p.members(g), p.groups() as f64))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        Ok(Forward {
            output,
            groups,
            offsets: Some(offsets),
            weights: Some(weights),
            cache: Cache {
                net_in,
                unet: un.cache,
                tanh,
                source: Some(source),
                samples: Some(samples),
                branch,
                partition: partition.cloned(),
            },
        })
    }

    /// Denoised reference frame.
    pub fn denoise(&self, input: &ModelInput<T>) -> Result<Tensor<T>> {
        Ok(self.forward(input, None)?.output)
    }

    /// Parameter gradients (in [`PanModel::params`] order) given gradients
    /// on the output and on each group output.
    pub fn backward(&self, fwd: &Forward<T>, grad_output: &Tensor<T>, grad_groups: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        grad_output.expect_same_shape(&fwd.output)?;
        if grad_groups.len() != fwd.groups.len() {
            return Err(Error::InvalidPartition(format!(
                "{} group gradients for {} groups",
                grad_groups.len(),
                fwd.groups.len()
            )));
        }
        let cache = &fwd.cache;
        let (h, w) = (grad_output.shape()[0], grad_output.shape()[1]);
        let variant = self.config.variant;

        let mut fixed_grad = None;
        let mut branch_grads = Vec::new();
        let (grad_head, grad_features) = if variant == Variant::Direct {
            (Some(grad_output.clone().reshape(&[1, h, w])?), None)
        } else {
            let n = self.grid.len();
            let d = self.config.dim();
            let samples = cache.samples.as_ref().expect("cached");
            let weights = fwd.weights.as_ref().expect("cached").tensor();
            let (sd, wd, go) = (samples.data(), weights.data(), grad_output.data());
            let mut g_w = vec![T::zero(); h * w * n];
            let mut g_s = vec![T::zero(); h * w * n];
            let part = cache.partition.as_ref();
            let s_mult = part.map_or(1.0, |p| p.groups() as f64);
            for p in 0..h * w {
                for i in 0..n {
                    let mut coef = go[p].f64();
                    if let Some(pt) = part {
                        coef += s_mult * grad_groups[pt.group_of(i)].data()[p].f64();
                    }
                    g_w[p * n + i] = T::of(coef * sd[p * n + i].f64());
                    g_s[p * n + i] = T::of(coef * wd[p * n + i].f64());
                }
            }
            if self.config.normalize_weights {
                for (gr, fr) in g_w.chunks_mut(n).zip(wd.chunks(n)) {
                    let dot: f64 = gr.iter().zip(fr).map(|(g, f)| g.f64() * f.f64()).sum();
                    for (g, f) in gr.iter_mut().zip(fr) {
                        *g = T::of(f.f64() * (g.f64() - dot));
                    }
                }
            }
            let mut g_s = Tensor::new(&[h, w, n], g_s)?;
            let g_w = Tensor::new(&[h, w, n], g_w)?;

            let mut grad_features = None;
            if self.fixed_weights.is_some() {
                let mut acc = vec![0.0f64; n];
                for row in g_w.data().chunks(n) {
                    for (a, g) in acc.iter_mut().zip(row) {
                        *a += g.f64();
                    }
                }
                fixed_grad = Some(Tensor::new(&[n], acc.into_iter().map(T::of).collect())?);
            } else {
                let convs = self.weight_branch.as_ref().expect("variant has a weight branch");
                let [wb_in, a1, a2] = [&cache.branch[0], &cache.branch[1], &cache.branch[2]];
                let g3 = convs[2].backward(a2, &g_w.permute(&[2, 0, 1])?)?;
                let g2 = convs[1].backward(a1, &relu_backward(a2, &g3.grad_x)?)?;
                let g1 = convs[0].backward(wb_in, &relu_backward(a1, &g2.grad_x)?)?;
                let g_in = &g1.grad_x;
                g_s.add_assign(&g_in.slice0(0, n)?.permute(&[1, 2, 0])?)?;
                if variant != Variant::NoConcat {
                    let start = n + cache.net_in.shape()[0];
                    grad_features = Some(g_in.slice0(start, g_in.shape()[0])?);
                }
                branch_grads = vec![g1, g2, g3];
            }

            let grad_head = match &cache.tanh {
                Some(th) => {
                    let offsets = fwd.offsets.as_ref().expect("cached");
                    let source = cache.source.as_ref().expect("cached");
                    let (_, g_off) = sample_grid_backward(source, &self.grid, offsets, &g_s, false)?;
                    let god = g_off.tensor().data();
                    let td = th.data();
                    let scales: Vec<f64> = (0..d).map(|a| self.config.axis_scale(a)).collect();
                    Some(Tensor::from_fn(&[n * d, h, w], |i| {
                        let (ch, y, x) = (i[0], i[1], i[2]);
                        let (k, a) = (ch / d, ch % d);
                        let t = td[(ch * h + y) * w + x].f64();
                        T::of(god[((y * w + x) * n + k) * d + a].f64() * scales[a] * (1.0 - t * t))
                    })?)
                }
                None => None,
            };
            (grad_head, grad_features)
        };

        let (conv_grads, _) = self
            .offset_net
            .backward(&cache.unet, grad_head.as_ref(), grad_features.as_ref())?;
        let mut out = Vec::new();
        for (cg, conv) in conv_grads.into_iter().zip(&self.offset_net.convs) {
            match cg {
                Some(g) => {
                    out.push(g.grad_kernel);
                    out.push(g.grad_bias);
                }
                None => {
                    out.push(conv.kernel.zeros_like());
                    out.push(conv.bias.zeros_like());
                }
            }
        }
        for g in branch_grads {
            out.push(g.grad_kernel);
            out.push(g.grad_bias);
        }
        if let Some(g) = fixed_grad {
            out.push(g);
        }
        Ok(out)
    }
}
