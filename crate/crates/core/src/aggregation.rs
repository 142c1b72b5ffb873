//! Pixel aggregation: every output pixel is a weighted sum of `n` samples
//! taken at a rigid lattice deformed by per-pixel offsets.
//!
//! Source tensors are `h x w` (spatial) or `h x w x f` (spatio-temporal,
//! `f = 2*tau + 1`, reference frame `tau`). Offsets are `h x w x n x d` with
//! the axes ordered (row, column[, frame]); weights are `h x w x n`.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::Volume;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RigidGrid {
    dim: usize,
    extents: Vec<usize>,
    /// (row, col, frame) offsets; frame is 0 for 2-D grids.
    points: Vec<[i32; 3]>,
}

impl RigidGrid {
    /// Centered lattice with odd `extents`, enumerated row-major (last
    /// axis fastest).
    pub fn new(dim: usize, extents: &[usize]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension {dim} (expected 2 or 3)")));
        }
        if extents.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} extents for a {dim}-D grid",
                extents.len()
            )));
        }
        if let Some(e) = extents.iter().find(|&&e| e == 0 || e % 2 == 0) {
            return Err(Error::InvalidGrid(format!("extent {e} must be odd and positive")));
        }
        let half: Vec<i32> = extents.iter().map(|&e| (e / 2) as i32).collect();
        let kt = if dim == 3 { half[2] } else { 0 };
        let mut points = Vec::with_capacity(extents.iter().product());
        for u in -half[0]..=half[0] {
            for v in -half[1]..=half[1] {
                for t in -kt..=kt {
                    points.push([u, v, t]);
                }
            }
        }
        Ok(RigidGrid {
            dim,
            extents: extents.to_vec(),
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn points(&self) -> &[[i32; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the (0, 0[, 0]) point.
    pub fn center(&self) -> usize {
        self.points.len() / 2
    }
}

pub fn build_rigid_grid(dim: usize, extents: &[usize]) -> Result<RigidGrid> {
    RigidGrid::new(dim, extents)
}

/// Per-pixel sample offsets, `h x w x n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField<T: Real = f32>(Tensor<T>);

impl<T: Real> OffsetField<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        let s = values.shape();
        if s.len() != 4 || !(s[3] == 2 || s[3] == 3) {
            return Err(Error::shape(format!("offset field must be h x w x n x (2|3), got {s:?}")));
        }
        Ok(OffsetField(values))
    }

    pub fn zeros(h: usize, w: usize, n: usize, d: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[h, w, n, d])?)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2], s[3])
    }
}

/// Per-pixel averaging weights, `h x w x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField<T: Real = f32>(Tensor<T>);

impl<T: Real> WeightField<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::shape(format!(
                "weight field must be h x w x n, got {:?}",
                values.shape()
            )));
        }
        Ok(WeightField(values))
    }

    /// The same kernel at every pixel.
    pub fn broadcast(h: usize, w: usize, kernel: &[T]) -> Result<Self> {
        let n = kernel.len();
        Self::new(Tensor::from_fn(&[h, w, n], |i| kernel[i[2]])?)
    }

    /// One at the grid center, zero elsewhere.
    pub fn one_hot(h: usize, w: usize, grid: &RigidGrid) -> Result<Self> {
        let c = grid.center();
        Self::new(Tensor::from_fn(&[h, w, grid.len()], |i| {
            if i[2] == c {
                T::one()
            } else {
                T::zero()
            }
        })?)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Split of the `n` grid samples into `s` equal groups of consecutive
/// indices in grid enumeration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    n: usize,
    s: usize,
}

impl GroupPartition {
    pub fn contiguous(n: usize, s: usize) -> Result<Self> {
        if s == 0 || n == 0 || n % s != 0 {
            return Err(Error::InvalidPartition(format!("{s} groups do not divide {n} samples")));
        }
        Ok(GroupPartition { n, s })
    }

    pub fn groups(&self) -> usize {
        self.s
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn members(&self, g: usize) -> Range<usize> {
        let k = self.n / self.s;
        g * k..(g + 1) * k
    }

    pub fn group_of(&self, i: usize) -> usize {
        i / (self.n / self.s)
    }
}

struct Layout {
    h: usize,
    w: usize,
    n: usize,
    d: usize,
    tau: f64,
}

fn check<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    weights: Option<&WeightField<T>>,
) -> Result<Layout> {
    let xs = x.shape();
    if xs.len() != grid.dim() {
        return Err(Error::shape(format!(
            "{}-D grid applied to tensor of shape {xs:?}",
            grid.dim()
        )));
    }
    let tau = if grid.dim() == 3 {
        if xs[2] % 2 == 0 {
            return Err(Error::shape(format!("frame count {} must be odd", xs[2])));
        }
        ((xs[2] - 1) / 2) as f64
    } else {
        0.0
    };
    let (h, w, n, d) = offsets.dims();
    if (h, w) != (xs[0], xs[1]) || n != grid.len() || d != grid.dim() {
        return Err(Error::shape(format!(
            "offsets {:?} do not match input {xs:?} and {}-point {}-D grid",
            offsets.tensor().shape(),
            grid.len(),
            grid.dim()
        )));
    }
    if !offsets.tensor().is_finite() {
        return Err(Error::InvalidInput("non-finite offsets".into()));
    }
    if let Some(wf) = weights {
        if wf.tensor().shape() != [h, w, n] {
            return Err(Error::shape(format!(
                "weights {:?} expected [{h}, {w}, {n}]",
                wf.tensor().shape()
            )));
        }
        if !wf.tensor().is_finite() {
            return Err(Error::InvalidInput("non-finite weights".into()));
        }
    }
    Ok(Layout { h, w, n, d, tau })
}

#[inline(always)]
fn position<T: Real>(l: &Layout, pt: &[i32; 3], off: &[T], u: usize, v: usize) -> (f64, f64, f64) {
    let pu = u as f64 + pt[0] as f64 + off[0].f64();
    let pv = v as f64 + pt[1] as f64 + off[1].f64();
    let pt_ = if l.d == 3 {
        l.tau + pt[2] as f64 + off[2].f64()
    } else {
        0.0
    };
    (pu, pv, pt_)
}

/// Sampled values at every deformed grid location, `h x w x n`.
pub fn sample_grid<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
) -> Result<Tensor<T>> {
    let l = check(x, grid, offsets, None)?;
    let vol = Volume::of(x);
    let off = offsets.tensor().data();
    let mut out = vec![T::zero(); l.h * l.w * l.n];
    out.par_chunks_mut(l.w * l.n).enumerate().for_each(|(u, row)| {
        for v in 0..l.w {
            for (i, pt) in grid.points().iter().enumerate() {
                let o = &off[((u * l.w + v) * l.n + i) * l.d..][..l.d];
                let (a, b, c) = position(&l, pt, o, u, v);
                row[v * l.n + i] = T::of(vol.sample(a, b, c));
            }
        }
    });
    Tensor::new(&[l.h, l.w, l.n], out)
}

/// Backward of [`sample_grid`]: offset gradients, plus the source gradient
/// when `with_grad_x` is set.
pub fn sample_grid_backward<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    grad_samples: &Tensor<T>,
    with_grad_x: bool,
) -> Result<(Option<Tensor<T>>, OffsetField<T>)> {
    let l = check(x, grid, offsets, None)?;
    if grad_samples.shape() != [l.h, l.w, l.n] {
        return Err(Error::shape(format!(
            "sample gradient {:?} expected [{}, {}, {}]",
            grad_samples.shape(),
            l.h,
            l.w,
            l.n
        )));
    }
    let vol = Volume::of(x);
    let off = offsets.tensor().data();
    let gs = grad_samples.data();
    let mut goff = vec![T::zero(); off.len()];
    goff.par_chunks_mut(l.w * l.n * l.d).enumerate().for_each(|(u, row)| {
        for v in 0..l.w {
            for (i, pt) in grid.points().iter().enumerate() {
                let k = (u * l.w + v) * l.n + i;
                let up = gs[k].f64();
                if up == 0.0 {
                    continue;
                }
                let o = &off[k * l.d..][..l.d];
                let (a, b, c) = position(&l, pt, o, u, v);
                let (_, g) = vol.sample_grad(a, b, c);
                let dst = &mut row[(v * l.n + i) * l.d..][..l.d];
                for ax in 0..l.d {
                    dst[ax] = T::of(g[ax] * up);
                }
            }
        }
    });

    let grad_x = if with_grad_x {
        // Serial scatter keeps the accumulation order fixed.
        let mut gx = vec![0.0f64; x.len()];
        for u in 0..l.h {
            for v in 0..l.w {
                for (i, pt) in grid.points().iter().enumerate() {
                    let k = (u * l.w + v) * l.n + i;
                    let up = gs[k].f64();
                    if up == 0.0 {
                        continue;
                    }
                    let (a, b, c) = position(&l, pt, &off[k * l.d..][..l.d], u, v);
                    vol.for_each_weight(a, b, c, |idx, wt| gx[idx] += up * wt);
                }
            }
        }
        Some(Tensor::new(x.shape(), gx.into_iter().map(T::of).collect())?)
    } else {
        None
    };
    Ok((grad_x, OffsetField::new(Tensor::new(offsets.tensor().shape(), goff)?)?))
}

/// `scale * sum_{i in range} samples[.., i] * weights[.., i]`, accumulated in f64.
pub fn contract<T: Real>(
    samples: &Tensor<T>,
    weights: &WeightField<T>,
    range: Range<usize>,
    scale: f64,
) -> Result<Tensor<T>> {
    samples.expect_same_shape(weights.tensor())?;
    let s = samples.shape();
    let (h, w, n) = (s[0], s[1], s[2]);
    if range.end > n {
        return Err(Error::shape(format!("sample range {range:?} beyond {n}")));
    }
    let sd = samples.data();
    let wd = weights.tensor().data();
    let out = (0..h * w)
        .map(|p| {
            let acc: f64 = range
                .clone()
                .map(|i| sd[p * n + i].f64() * wd[p * n + i].f64())
                .sum();
            T::of(acc * scale)
        })
        .collect();
    Tensor::new(&[h, w], out)
}

fn aggregate_checked<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    weights: &WeightField<T>,
) -> Result<Tensor<T>> {
    let l = check(x, grid, offsets, Some(weights))?;
    let samples = sample_grid(x, grid, offsets)?;
    contract(&samples, weights, 0..l.n, 1.0)
}

/// `Y(u,v) = sum_i X(u + u_i, v + v_i) F(u,v,i)` with bilinear sampling.
pub fn aggregate_spatial<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    weights: &WeightField<T>,
) -> Result<Tensor<T>> {
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid("spatial aggregation needs a 2-D grid".into()));
    }
    aggregate_checked(x, grid, offsets, weights)
}

/// Trilinear version of [`aggregate_spatial`] over a `2*tau + 1` frame
/// stack; the output is the denoised reference frame.
pub fn aggregate_spatiotemporal<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    weights: &WeightField<T>,
) -> Result<Tensor<T>> {
    if grid.dim() != 3 {
        return Err(Error::InvalidGrid("spatio-temporal aggregation needs a 3-D grid".into()));
    }
    aggregate_checked(x, grid, offsets, weights)
}

/// Aggregation with either grid dimension.
pub fn aggregate<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    weights: &WeightField<T>,
) -> Result<Tensor<T>> {
    aggregate_checked(x, grid, offsets, weights)
}

/// Aggregation restricted to group `g`, scaled by the group count.
pub fn aggregate_group<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    weights: &WeightField<T>,
    part: &GroupPartition,
    g: usize,
) -> Result<Tensor<T>> {
    if part.samples() != grid.len() {
        return Err(Error::InvalidPartition(format!(
            "partition of {} samples for a {}-point grid",
            part.samples(),
            grid.len()
        )));
    }
    if g >= part.groups() {
        return Err(Error::InvalidPartition(format!("group {g} of {}", part.groups())));
    }
    check(x, grid, offsets, Some(weights))?;
    let samples = sample_grid(x, grid, offsets)?;
    contract(&samples, weights, part.members(g), part.groups() as f64)
}

#[derive(Clone, Debug)]
pub struct AggregationGrads<T: Real = f32> {
    pub grad_x: Tensor<T>,
    pub grad_offsets: OffsetField<T>,
    pub grad_weights: WeightField<T>,
}

pub fn aggregation_backward<T: Real>(
    x: &Tensor<T>,
    grid: &RigidGrid,
    offsets: &OffsetField<T>,
    weights: &WeightField<T>,
    upstream: &Tensor<T>,
) -> Result<AggregationGrads<T>> {
    let l = check(x, grid, offsets, Some(weights))?;
    if upstream.shape() != [l.h, l.w] {
        return Err(Error::shape(format!(
            "upstream {:?} expected [{}, {}]",
            upstream.shape(),
            l.h,
            l.w
        )));
    }
    let samples = sample_grid(x, grid, offsets)?;
    let up = upstream.data();
    let n = l.n;
    let gw = Tensor::from_fn(&[l.h, l.w, n], |i| {
        let p = i[0] * l.w + i[1];
        up[p] * samples.data()[p * n + i[2]]
    })?;
    let gs = Tensor::from_fn(&[l.h, l.w, n], |i| {
        let p = i[0] * l.w + i[1];
        up[p] * weights.tensor().data()[p * n + i[2]]
    })?;
    let (grad_x, grad_offsets) = sample_grid_backward(x, grid, offsets, &gs, true)?;
    Ok(AggregationGrads {
        grad_x: grad_x.expect("requested"),
        grad_offsets,
        grad_weights: WeightField::new(gw)?,
    })
}

/// Mean over pixels of the spatial L-infinity diameter of the deformed
/// sample positions.
pub fn receptive_field_stat<T: Real>(offsets: &OffsetField<T>, grid: &RigidGrid) -> Result<f64> {
    let (h, w, n, d) = offsets.dims();
    if n != grid.len() || d != grid.dim() {
        return Err(Error::shape(format!(
            "offsets {:?} do not match a {}-point {}-D grid",
            offsets.tensor().shape(),
            grid.len(),
            grid.dim()
        )));
    }
    let off = offsets.tensor().data();
    let mut total = 0.0;
    for p in 0..h * w {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for (i, pt) in grid.points().iter().enumerate() {
            let o = &off[(p * n + i) * d..];
            for ax in 0..2 {
                let c = pt[ax] as f64 + o[ax].f64();
                lo[ax] = lo[ax].min(c);
                hi[ax] = hi[ax].max(c);
            }
        }
        total += (hi[0] - lo[0]).max(hi[1] - lo[1]);
    }
    Ok(total / (h * w) as f64)
}
