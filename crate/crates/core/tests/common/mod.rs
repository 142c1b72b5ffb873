//! Independent oracles and the checks behind the acceptance suite.
#![allow(dead_code)]

use pixagg::aggregation::{
    aggregate, aggregate_group, aggregation_backward, GroupPartition, OffsetField, RigidGrid, WeightField,
};
use pixagg::loss::{l1_gamma_loss, video_loss, AnnealSchedule};
use pixagg::nn::{Conv2d, ModelConfig, ModelInput, PanModel, Variant};
use pixagg::sampling::{trilinear_backward, trilinear_sample, SamplePoint3};
use pixagg::{Rng, Tensor};

pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Check { name: name.to_string(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Coordinate whose fractional part stays at least `margin` away from an
/// integer.
pub fn off_kink(rng: &mut Rng, lo: f64, hi: f64, margin: f64) -> f64 {
    loop {
        let c = rng.uniform_in(lo, hi);
        let f = c - c.floor();
        if f > margin && f < 1.0 - margin {
            return c;
        }
    }
}

/// Running maximum of relative errors.
#[derive(Default)]
pub struct ErrStats {
    pub max: f64,
    pub compared: usize,
}

impl ErrStats {
    pub fn push(&mut self, e: f64) {
        self.compared += 1;
        if e > self.max || e.is_nan() {
            self.max = e;
        }
    }
}

// ---------------------------------------------------------------- direct oracles

/// Brute-force trilinear interpolation: sum over every voxel of the product
/// of hat weights.
pub fn trilinear_oracle(x: &Tensor<f64>, u: f64, v: f64, t: f64) -> f64 {
    let s = x.shape();
    let hat = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut acc = 0.0;
    for a in 0..s[0] {
        for b in 0..s[1] {
            for c in 0..s[2] {
                acc += x.get(&[a, b, c]).unwrap() * hat(u - a as f64) * hat(v - b as f64) * hat(t - c as f64);
            }
        }
    }
    acc
}

/// Integer-indexed aggregation with zero offsets: reads `x[u+du, v+dv, tau+dt]`
/// directly, zero outside.
pub fn rigid_oracle(x: &Tensor<f64>, extents: &[usize], weights: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let (h, w) = (s[0], s[1]);
    let f = if s.len() == 3 { s[2] } else { 1 };
    let tau = (f / 2) as i64;
    let ext: Vec<i64> = extents.iter().map(|&e| e as i64).collect();
    let et = if ext.len() == 3 { ext[2] } else { 1 };
    Tensor::from_fn(&[h, w], |p| {
        let mut acc = 0.0;
        let mut i = 0;
        for du in -(ext[0] / 2)..=ext[0] / 2 {
            for dv in -(ext[1] / 2)..=ext[1] / 2 {
                for dt in -(et / 2)..=et / 2 {
                    let (a, b, c) = (p[0] as i64 + du, p[1] as i64 + dv, tau + dt);
                    if a >= 0 && b >= 0 && c >= 0 && a < h as i64 && b < w as i64 && c < f as i64 {
                        let xv = if s.len() == 3 {
                            x.get(&[a as usize, b as usize, c as usize]).unwrap()
                        } else {
                            x.get(&[a as usize, b as usize]).unwrap()
                        };
                        acc += xv * weights.get(&[p[0], p[1], i]).unwrap();
                    }
                    i += 1;
                }
            }
        }
        acc
    })
    .unwrap()
}

/// Naive triple-loop 3x3 convolution with zero padding.
pub fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (ic, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let oc = k.shape()[0];
    Tensor::from_fn(&[oc, h, w], |i| {
        let mut acc = b.data()[i[0]];
        for c in 0..ic {
            for dy in 0..3 {
                for dx in 0..3 {
                    let (y, xx) = (i[1] as i64 + dy as i64 - 1, i[2] as i64 + dx as i64 - 1);
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        acc += k.get(&[i[0], c, dy, dx]).unwrap() * x.get(&[c, y as usize, xx as usize]).unwrap();
                    }
                }
            }
        }
        acc
    })
    .unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- gradient checks

const OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 5e-3;

/// Trilinear sampling: coordinate and source gradients against central
/// differences.
pub fn grad_trilinear(instances: usize, seed: u64) -> ErrStats {
    let mut rng = Rng::new(seed);
    let mut st = ErrStats::default();
    let eps = 1e-6;
    for _ in 0..instances {
        let x = Tensor::<f64>::uniform(&mut rng, &[6, 7, 5], -1.0, 1.0).unwrap();
        let p = SamplePoint3 {
            u: off_kink(&mut rng, -0.8, 5.8, 1e-3),
            v: off_kink(&mut rng, -0.8, 6.8, 1e-3),
            t: off_kink(&mut rng, -0.8, 4.8, 1e-3),
        };
        let up = rng.uniform_in(0.5, 2.0);
        let g = trilinear_backward(&x, p, up).unwrap();
        let f = |q: SamplePoint3, xx: &Tensor<f64>| up * trilinear_sample(xx, q).unwrap();
        for axis in 0..3 {
            let mut a = p;
            let mut b = p;
            match axis {
                0 => {
                    a.u += eps;
                    b.u -= eps
                }
                1 => {
                    a.v += eps;
                    b.v -= eps
                }
                _ => {
                    a.t += eps;
                    b.t -= eps
                }
            }
            let fd = (f(a, &x) - f(b, &x)) / (2.0 * eps);
            st.push(rel_err(g.grad_p[axis], fd, 1e-6));
        }
        let mut dense = vec![0.0; x.len()];
        for &(i, v) in &g.grad_x {
            dense[i] += v;
        }
        for _ in 0..4 {
            let k = rng.below(x.len());
            let mut xp = x.clone();
            xp.data_mut()[k] += eps;
            let mut xm = x.clone();
            xm.data_mut()[k] -= eps;
            let fd = (f(p, &xp) - f(p, &xm)) / (2.0 * eps);
            if fd.abs() > 0.0 || dense[k] != 0.0 {
                st.push(rel_err(dense[k], fd, 1e-6));
            }
        }
    }
    st
}

pub struct AggInstance {
    pub x: Tensor<f64>,
    pub grid: RigidGrid,
    pub offsets: OffsetField<f64>,
    pub weights: WeightField<f64>,
    pub upstream: Tensor<f64>,
}

pub fn random_aggregation(rng: &mut Rng, video: bool) -> AggInstance {
    let (h, w) = (4 + rng.below(3), 4 + rng.below(3));
    let (x, grid) = if video {
        (
            Tensor::<f64>::uniform(rng, &[h, w, 3], 0.0, 1.0).unwrap(),
            RigidGrid::new(3, &[3, 3, 3]).unwrap(),
        )
    } else {
        (
            Tensor::<f64>::uniform(rng, &[h, w], 0.0, 1.0).unwrap(),
            RigidGrid::new(2, &[3, 3]).unwrap(),
        )
    };
    let (n, d) = (grid.len(), grid.dim());
    let off = Tensor::from_fn(&[h, w, n, d], |_| off_kink(rng, -1.5, 1.5, 1e-3)).unwrap();
    AggInstance {
        offsets: OffsetField::new(off).unwrap(),
        weights: WeightField::new(Tensor::uniform(rng, &[h, w, n], -1.0, 1.0).unwrap()).unwrap(),
        upstream: Tensor::uniform(rng, &[h, w], -1.0, 1.0).unwrap(),
        x,
        grid,
    }
}

/// Aggregation: weight, offset and source gradients of `<upstream, Y>`.
pub fn grad_aggregation(instances: usize, seed: u64) -> ErrStats {
    let mut rng = Rng::new(seed);
    let mut st = ErrStats::default();
    let eps = 1e-6;
    for k in 0..instances {
        let a = random_aggregation(&mut rng, k % 2 == 0);
        let g = aggregation_backward(&a.x, &a.grid, &a.offsets, &a.weights, &a.upstream).unwrap();
        let loss = |x: &Tensor<f64>, o: &OffsetField<f64>, w: &WeightField<f64>| {
            dot(&aggregate(x, &a.grid, o, w).unwrap(), &a.upstream)
        };
        for _ in 0..4 {
            let i = rng.below(a.weights.tensor().len());
            let mut wp = a.weights.tensor().clone();
            wp.data_mut()[i] += eps;
            let mut wm = a.weights.tensor().clone();
            wm.data_mut()[i] -= eps;
            let fd = (loss(&a.x, &a.offsets, &WeightField::new(wp).unwrap())
                - loss(&a.x, &a.offsets, &WeightField::new(wm).unwrap()))
                / (2.0 * eps);
            st.push(rel_err(g.grad_weights.tensor().data()[i], fd, 1e-6));

            let i = rng.below(a.offsets.tensor().len());
            let mut op = a.offsets.clone();
            op.tensor_mut().data_mut()[i] += eps;
            let mut om = a.offsets.clone();
            om.tensor_mut().data_mut()[i] -= eps;
            let fd = (loss(&a.x, &op, &a.weights) - loss(&a.x, &om, &a.weights)) / (2.0 * eps);
            st.push(rel_err(g.grad_offsets.tensor().data()[i], fd, 1e-6));

            let i = rng.below(a.x.len());
            let mut xp = a.x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = a.x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&xp, &a.offsets, &a.weights) - loss(&xm, &a.offsets, &a.weights)) / (2.0 * eps);
            st.push(rel_err(g.grad_x.data()[i], fd, 1e-6));
        }
    }
    st
}

/// Convolution: input, kernel and bias gradients of `<upstream, conv(x)>`.
pub fn grad_conv(instances: usize, seed: u64) -> ErrStats {
    let mut rng = Rng::new(seed);
    let mut st = ErrStats::default();
    let eps = 1e-6;
    for _ in 0..instances {
        let (ic, oc) = (1 + rng.below(3), 1 + rng.below(3));
        let (h, w) = (1 + rng.below(6), 1 + rng.below(6));
        let conv = Conv2d::<f64>::init(ic, oc, 1.0, &mut rng).unwrap();
        let conv = Conv2d::new(conv.kernel, Tensor::uniform(&mut rng, &[oc], -1.0, 1.0).unwrap()).unwrap();
        let x = Tensor::<f64>::uniform(&mut rng, &[ic, h, w], -1.0, 1.0).unwrap();
        let up = Tensor::<f64>::uniform(&mut rng, &[oc, h, w], -1.0, 1.0).unwrap();
        let g = conv.backward(&x, &up).unwrap();
        let f = |c: &Conv2d<f64>, xx: &Tensor<f64>| dot(&conv_oracle(xx, &c.kernel, &c.bias), &up);
        for _ in 0..3 {
            let i = rng.below(x.len());
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            st.push(rel_err(g.grad_x.data()[i], (f(&conv, &xp) - f(&conv, &xm)) / (2.0 * eps), 1e-6));

            let i = rng.below(conv.kernel.len());
            let (mut cp, mut cm) = (conv.clone(), conv.clone());
            cp.kernel.data_mut()[i] += eps;
            cm.kernel.data_mut()[i] -= eps;
            st.push(rel_err(g.grad_kernel.data()[i], (f(&cp, &x) - f(&cm, &x)) / (2.0 * eps), 1e-6));

            let i = rng.below(oc);
            let (mut cp, mut cm) = (conv.clone(), conv.clone());
            cp.bias.data_mut()[i] += eps;
            cm.bias.data_mut()[i] -= eps;
            st.push(rel_err(g.grad_bias.data()[i], (f(&cp, &x) - f(&cm, &x)) / (2.0 * eps), 1e-6));
        }
    }
    st
}

/// Index of the first weight-branch tensor in parameter order.
pub fn branch_start(m: &PanModel<f64>) -> usize {
    2 * m.offset_net.convs.len()
}

fn perturbed<F: Fn(&PanModel<f64>) -> f64>(m: &PanModel<f64>, t: usize, i: usize, eps: f64, f: F) -> f64 {
    let mut mp = m.clone();
    mp.params_mut()[t].data_mut()[i] += eps;
    let mut mm = m.clone();
    mm.params_mut()[t].data_mut()[i] -= eps;
    (f(&mp) - f(&mm)) / (2.0 * eps)
}

/// Weight branch: parameter gradients of `<upstream, Y>` for a rigid-grid
/// model, where the sampled pixels do not move.
pub fn grad_weight_branch(instances: usize, seed: u64) -> ErrStats {
    let mut rng = Rng::new(seed);
    let mut st = ErrStats::default();
    let eps = 1e-6;
    for k in 0..instances {
        let cfg = ModelConfig {
            blind: k % 2 == 0,
            ..ModelConfig::stpan().with_variant(Variant::Rigid)
        };
        let m = PanModel::<f64>::init(cfg, &mut rng).unwrap();
        let frames = Tensor::<f64>::uniform(&mut rng, &[5, 8, 8], 0.0, 1.0).unwrap();
        let params = (!m.config().blind).then(|| pixagg::noise::NoiseParams::new(0.005, 0.02).unwrap());
        let input = ModelInput::new(frames, params).unwrap();
        let up = Tensor::<f64>::uniform(&mut rng, &[8, 8], -1.0, 1.0).unwrap();
        let fwd = m.forward(&input, None).unwrap();
        let grads = m.backward(&fwd, &up, &[]).unwrap();
        let f = |mm: &PanModel<f64>| dot(&mm.denoise(&input).unwrap(), &up);
        let start = branch_start(&m);
        for _ in 0..4 {
            let t = start + rng.below(6);
            let i = rng.below(grads[t].len());
            st.push(rel_err(grads[t].data()[i], perturbed(&m, t, i, eps, f), 1e-6));
        }
    }
    st
}

pub struct E2eInstance {
    pub model: PanModel<f32>,
    pub input: ModelInput<f32>,
    pub gt: Tensor<f32>,
    pub schedule: AnnealSchedule,
}

pub fn e2e_instance(rng: &mut Rng) -> E2eInstance {
    let model = PanModel::<f32>::init(ModelConfig::stpan(), rng).unwrap();
    let gt = Tensor::<f32>::uniform(rng, &[16, 16], 0.05, 0.95).unwrap();
    let frames = Tensor::<f32>::from_fn(&[5, 16, 16], |i| gt.get(&[i[1], i[2]]).unwrap() + 0.1 * rng.normal() as f32)
        .unwrap();
    E2eInstance {
        model,
        input: ModelInput::new(frames, None).unwrap(),
        gt,
        schedule: AnnealSchedule::default().at(rng.below(5000) as u64),
    }
}

pub fn total_loss(m: &PanModel<f64>, input: &ModelInput<f64>, gt: &Tensor<f64>, s: AnnealSchedule) -> f64 {
    let part = GroupPartition::contiguous(27, 3).unwrap();
    let f = m.forward(input, Some(&part)).unwrap();
    video_loss(&f.output, &f.groups, gt, s, 3).unwrap()
}

/// End-to-end: gradients of the annealed video loss computed by the `f32`
/// training path against central differences (step 1e-2) of the `f64`
/// forward pass, on 20 random parameters per instance.
pub fn grad_end_to_end(instances: usize, seed: u64) -> ErrStats {
    let mut rng = Rng::new(seed);
    let mut st = ErrStats::default();
    let eps = 1e-2;
    let part = GroupPartition::contiguous(27, 3).unwrap();
    for _ in 0..instances {
        let e = e2e_instance(&mut rng);
        let fwd = e.model.forward(&e.input, Some(&part)).unwrap();
        let coeff = pixagg::loss::anneal_coeff(e.schedule);
        let g_out = pixagg::loss::l1_gamma_grad(&fwd.output, &e.gt, 1.0).unwrap();
        let g_groups: Vec<_> = fwd
            .groups
            .iter()
            .map(|g| pixagg::loss::l1_gamma_grad(g, &e.gt, coeff).unwrap())
            .collect();
        let grads = e.model.backward(&fwd, &g_out, &g_groups).unwrap();
        let m64 = e.model.cast::<f64>();
        let (in64, gt64) = (e.input.cast::<f64>(), e.gt.cast::<f64>());
        let sizes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
        let total: usize = sizes.iter().sum();
        for _ in 0..20 {
            let mut flat = rng.below(total);
            let mut t = 0;
            while flat >= sizes[t] {
                flat -= sizes[t];
                t += 1;
            }
            let fd = perturbed(&m64, t, flat, eps, |m| total_loss(m, &in64, &gt64, e.schedule));
            st.push(rel_err(f64::from(grads[t].data()[flat]), fd, 1e-4));
        }
    }
    st
}

/// End-to-end in `f64` throughout with a small step (1e-6): separates
/// backward-pass errors from the curvature and kinks a large step crosses.
pub fn grad_end_to_end_f64(instances: usize, seed: u64) -> ErrStats {
    let mut rng = Rng::new(seed);
    let mut st = ErrStats::default();
    let eps = 1e-6;
    let part = GroupPartition::contiguous(27, 3).unwrap();
    for _ in 0..instances {
        let e = e2e_instance(&mut rng);
        let m = e.model.cast::<f64>();
        let (input, gt) = (e.input.cast::<f64>(), e.gt.cast::<f64>());
        let fwd = m.forward(&input, Some(&part)).unwrap();
        let coeff = pixagg::loss::anneal_coeff(e.schedule);
        let g_out = pixagg::loss::l1_gamma_grad(&fwd.output, &gt, 1.0).unwrap();
        let g_groups: Vec<_> = fwd
            .groups
            .iter()
            .map(|g| pixagg::loss::l1_gamma_grad(g, &gt, coeff).unwrap())
            .collect();
        let grads = m.backward(&fwd, &g_out, &g_groups).unwrap();
        for _ in 0..20 {
            let t = rng.below(grads.len());
            let i = rng.below(grads[t].len());
            let fd = perturbed(&m, t, i, eps, |mm| total_loss(mm, &input, &gt, e.schedule));
            st.push(rel_err(grads[t].data()[i], fd, 1e-4));
        }
    }
    st
}

pub fn grad_check(name: &str, st: &ErrStats, tol: f64, min_instances: usize, instances: usize) -> Check {
    Check::new(
        name,
        st.max <= tol && instances >= min_instances,
        format!("{instances} instances, {} comparisons, max rel err {:.2e} (tol {tol:.0e})", st.compared, st.max),
    )
}

pub const OPERATOR_TOL: f64 = OP_TOL;
pub const END_TO_END_TOL: f64 = E2E_TOL;

pub fn l1_of(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    l1_gamma_loss(a, b).unwrap()
}

pub fn group_sum(
    x: &Tensor<f64>,
    grid: &RigidGrid,
    o: &OffsetField<f64>,
    w: &WeightField<f64>,
    part: &GroupPartition,
) -> Tensor<f64> {
    let mut acc = Tensor::<f64>::zeros(&[x.shape()[0], x.shape()[1]]).unwrap();
    for g in 0..part.groups() {
        acc.add_assign(&aggregate_group(x, grid, o, w, part, g).unwrap()).unwrap();
    }
    acc.scale(1.0 / part.groups() as f64)
}
