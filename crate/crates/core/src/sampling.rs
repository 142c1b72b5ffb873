//! Bilinear and trilinear point sampling with the tent kernel
//! `max(0, 1 - |d|)` along each axis. Lattice points outside the tensor
//! contribute nothing, so far-away samples read as zero.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Fractional (row, column) position in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint2 {
    pub u: f64,
    pub v: f64,
}

/// Fractional (row, column, frame) position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint3 {
    pub u: f64,
    pub v: f64,
    pub t: f64,
}

/// Tent weights of the two lattice points bracketing one coordinate, with
/// their derivatives. The derivative is zero at integer coordinates, where
/// both the apex and the window edge sit.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tent {
    pub lo: isize,
    pub w: [f64; 2],
    pub dw: [f64; 2],
}

impl Tent {
    #[inline(always)]
    pub fn new(c: f64) -> Self {
        let fl = c.floor();
        let fr = c - fl;
        let dw = if fr > 0.0 { [-1.0, 1.0] } else { [0.0, 0.0] };
        Tent {
            lo: fl as isize,
            w: [1.0 - fr, fr],
            dw,
        }
    }

    /// In-range lattice index for corner `k`, if its weight can be nonzero.
    #[inline(always)]
    pub fn index(&self, k: usize, size: usize) -> Option<usize> {
        let i = self.lo + k as isize;
        if i >= 0 && (i as usize) < size && (self.w[k] != 0.0 || self.dw[k] != 0.0) {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Raw view of an `h x w x f` buffer.
#[derive(Clone, Copy)]
pub(crate) struct Volume<'a, T> {
    pub data: &'a [T],
    pub h: usize,
    pub w: usize,
    pub f: usize,
}

impl<'a, T: Real> Volume<'a, T> {
    pub fn of(x: &'a Tensor<T>) -> Self {
        let s = x.shape();
        match s.len() {
            2 => Volume {
                data: x.data(),
                h: s[0],
                w: s[1],
                f: 1,
            },
            _ => Volume {
                data: x.data(),
                h: s[0],
                w: s[1],
                f: s[2],
            },
        }
    }

    #[inline(always)]
    pub fn sample(&self, u: f64, v: f64, t: f64) -> f64 {
        let (tu, tv, tt) = (Tent::new(u), Tent::new(v), Tent::new(t));
        let mut acc = 0.0;
        for a in 0..2 {
            let Some(p) = tu.index(a, self.h) else { continue };
            for b in 0..2 {
                let Some(q) = tv.index(b, self.w) else { continue };
                let wab = tu.w[a] * tv.w[b];
                let base = (p * self.w + q) * self.f;
                for c in 0..2 {
                    let Some(j) = tt.index(c, self.f) else { continue };
                    acc += self.data[base + j].f64() * wab * tt.w[c];
                }
            }
        }
        acc
    }

    /// Value and partial derivatives with respect to (u, v, t).
    #[inline(always)]
    pub fn sample_grad(&self, u: f64, v: f64, t: f64) -> (f64, [f64; 3]) {
        let (tu, tv, tt) = (Tent::new(u), Tent::new(v), Tent::new(t));
        let mut acc = 0.0;
        let mut g = [0.0; 3];
        for a in 0..2 {
            let Some(p) = tu.index(a, self.h) else { continue };
            for b in 0..2 {
                let Some(q) = tv.index(b, self.w) else { continue };
                let base = (p * self.w + q) * self.f;
                for c in 0..2 {
                    let Some(j) = tt.index(c, self.f) else { continue };
                    let x = self.data[base + j].f64();
                    acc += x * tu.w[a] * tv.w[b] * tt.w[c];
                    g[0] += x * tu.dw[a] * tv.w[b] * tt.w[c];
                    g[1] += x * tu.w[a] * tv.dw[b] * tt.w[c];
                    g[2] += x * tu.w[a] * tv.w[b] * tt.dw[c];
                }
            }
        }
        (acc, g)
    }

    /// Calls `f(flat_index, weight)` for every contributing lattice point.
    #[inline(always)]
    pub fn for_each_weight(&self, u: f64, v: f64, t: f64, mut f: impl FnMut(usize, f64)) {
        let (tu, tv, tt) = (Tent::new(u), Tent::new(v), Tent::new(t));
        for a in 0..2 {
            let Some(p) = tu.index(a, self.h) else { continue };
            for b in 0..2 {
                let Some(q) = tv.index(b, self.w) else { continue };
                let base = (p * self.w + q) * self.f;
                for c in 0..2 {
                    let Some(j) = tt.index(c, self.f) else { continue };
                    let wt = tu.w[a] * tv.w[b] * tt.w[c];
                    if wt != 0.0 {
                        f(base + j, wt);
                    }
                }
            }
        }
    }
}

fn expect_rank<T: Real>(x: &Tensor<T>, rank: usize) -> Result<()> {
    if x.rank() != rank {
        return Err(Error::shape(format!(
            "expected a {rank}-D tensor, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

fn expect_finite(coords: &[f64]) -> Result<()> {
    if coords.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite sample point {coords:?}")))
    }
}

pub fn bilinear_sample<T: Real>(x: &Tensor<T>, p: SamplePoint2) -> Result<T> {
    expect_rank(x, 2)?;
    expect_finite(&[p.u, p.v])?;
    Ok(T::of(Volume::of(x).sample(p.u, p.v, 0.0)))
}

pub fn trilinear_sample<T: Real>(x: &Tensor<T>, p: SamplePoint3) -> Result<T> {
    expect_rank(x, 3)?;
    expect_finite(&[p.u, p.v, p.t])?;
    Ok(T::of(Volume::of(x).sample(p.u, p.v, p.t)))
}

/// Gradients of one sample: a sparse gradient over the source tensor (at
/// most eight entries) and the gradient with respect to the coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGrad<const D: usize> {
    pub grad_x: Vec<(usize, f64)>,
    pub grad_p: [f64; D],
}

pub fn trilinear_backward<T: Real>(
    x: &Tensor<T>,
    p: SamplePoint3,
    upstream: f64,
) -> Result<PointGrad<3>> {
    expect_rank(x, 3)?;
    expect_finite(&[p.u, p.v, p.t])?;
    let vol = Volume::of(x);
    let mut grad_x = Vec::with_capacity(8);
    vol.for_each_weight(p.u, p.v, p.t, |i, w| grad_x.push((i, upstream * w)));
    let (_, g) = vol.sample_grad(p.u, p.v, p.t);
    Ok(PointGrad {
        grad_x,
        grad_p: g.map(|d| d * upstream),
    })
}

pub fn bilinear_backward<T: Real>(
    x: &Tensor<T>,
    p: SamplePoint2,
    upstream: f64,
) -> Result<PointGrad<2>> {
    expect_rank(x, 2)?;
    expect_finite(&[p.u, p.v])?;
    let vol = Volume::of(x);
    let mut grad_x = Vec::with_capacity(4);
    vol.for_each_weight(p.u, p.v, 0.0, |i, w| grad_x.push((i, upstream * w)));
    let (_, g) = vol.sample_grad(p.u, p.v, 0.0);
    Ok(PointGrad {
        grad_x,
        grad_p: [g[0] * upstream, g[1] * upstream],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn p2(u: f64, v: f64) -> SamplePoint2 {
        SamplePoint2 { u, v }
    }

    fn p3(u: f64, v: f64, t: f64) -> SamplePoint3 {
        SamplePoint3 { u, v, t }
    }

    /// Literal triple sum over every lattice point, independent of `Tent`.
    fn brute(x: &Tensor, p: SamplePoint3) -> f64 {
        let s = x.shape();
        let hat = |d: f64| (1.0 - d.abs()).max(0.0);
        let mut acc = 0.0;
        for i in 0..s[0] {
            for j in 0..s[1] {
                for k in 0..s[2] {
                    acc += x.get(&[i, j, k]).unwrap() as f64
                        * hat(p.u - i as f64)
                        * hat(p.v - j as f64)
                        * hat(p.t - k as f64);
                }
            }
        }
        acc
    }

    fn random_interior(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
        loop {
            let c = rng.uniform_in(lo, hi);
            let fr = c - c.floor();
            if fr > 0.01 && fr < 0.99 && (fr - 0.5).abs() > 0.01 {
                return c;
            }
        }
    }

    #[test]
    fn bilinear_examples() {
        let x = Tensor::new(&[2, 2], vec![0.0f32, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&x, p2(0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(bilinear_sample(&x, p2(0.5, 0.5)).unwrap(), 1.5);
        assert_eq!(bilinear_sample(&x, p2(-5.0, -5.0)).unwrap(), 0.0);
        assert_eq!(bilinear_sample(&x, p2(1.0, 1.0)).unwrap(), 3.0);
        // Half a pixel outside reads a half-weighted border pixel.
        assert_eq!(bilinear_sample(&x, p2(-0.5, 0.0)).unwrap(), 0.0);
        assert_eq!(bilinear_sample(&x, p2(1.5, 1.0)).unwrap(), 1.5);
        let cube = Tensor::<f32>::zeros(&[2, 2, 2]).unwrap();
        assert!(matches!(bilinear_sample(&cube, p2(0.0, 0.0)), Err(Error::InvalidShape(_))));
        assert!(bilinear_sample(&x, p2(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn trilinear_examples() {
        let mut rng = Rng::new(9);
        let x = Tensor::<f32>::randn(&mut rng, &[5, 6, 5]).unwrap();
        assert_eq!(trilinear_sample(&x, p3(2.0, 3.0, 1.0)).unwrap(), x.get(&[2, 3, 1]).unwrap());
        let mid = trilinear_sample(&x, p3(2.0, 3.0, 0.5)).unwrap();
        let avg = 0.5 * (x.get(&[2, 3, 0]).unwrap() as f64 + x.get(&[2, 3, 1]).unwrap() as f64);
        assert!((mid as f64 - avg).abs() < 1e-6);
        assert_eq!(trilinear_sample(&x, p3(2.0, 3.0, 7.0)).unwrap(), 0.0);
        assert!(trilinear_sample(&Tensor::<f32>::zeros(&[3, 3]).unwrap(), p3(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn matches_literal_formula() {
        let mut rng = Rng::new(10);
        let x = Tensor::<f32>::randn(&mut rng, &[4, 5, 3]).unwrap();
        for _ in 0..500 {
            let p = p3(rng.uniform_in(-2.0, 6.0), rng.uniform_in(-2.0, 7.0), rng.uniform_in(-2.0, 4.0));
            let got = trilinear_sample(&x, p).unwrap() as f64;
            assert!((got - brute(&x, p)).abs() < 1e-5, "{p:?}");
        }
    }

    #[test]
    fn partition_of_unity_and_linearity() {
        let mut rng = Rng::new(11);
        let ones = Tensor::<f32>::full(&[8, 8, 5], 1.0).unwrap();
        let x = Tensor::<f32>::randn(&mut rng, &[8, 8, 5]).unwrap();
        let y = Tensor::<f32>::randn(&mut rng, &[8, 8, 5]).unwrap();
        for _ in 0..200 {
            let p = p3(rng.uniform_in(1.0, 6.0), rng.uniform_in(1.0, 6.0), rng.uniform_in(1.0, 3.0));
            let g = trilinear_backward(&ones, p, 1.0).unwrap();
            let s: f64 = g.grad_x.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(g.grad_x.iter().all(|&(_, w)| (0.0..=1.0).contains(&w)));
            assert!(g.grad_p.iter().all(|&d| d.abs() < 1e-9), "flat field has no coordinate gradient");

            let (a, b) = (rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0));
            let combo = x.zip_map(&y, |xv, yv| (a as f32) * xv + (b as f32) * yv).unwrap();
            let lhs = trilinear_sample(&combo, p).unwrap() as f64;
            let rhs = a * trilinear_sample(&x, p).unwrap() as f64 + b * trilinear_sample(&y, p).unwrap() as f64;
            assert!((lhs - rhs).abs() < 1e-5 * (1.0 + rhs.abs()), "{lhs} {rhs}");
        }
        let flat = Tensor::<f32>::full(&[4, 4], 1.0).unwrap();
        let g = bilinear_backward(&flat, p2(1.3, 2.7), 1.0).unwrap();
        assert!((g.grad_x.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coordinate_gradient_matches_central_differences() {
        let mut rng = Rng::new(12);
        let eps = 1e-3;
        for _ in 0..100 {
            let x = Tensor::<f64>::randn(&mut rng, &[6, 6, 5]).unwrap();
            let p = p3(
                random_interior(&mut rng, 0.5, 4.5),
                random_interior(&mut rng, 0.5, 4.5),
                random_interior(&mut rng, 0.5, 3.5),
            );
            let g = trilinear_backward(&x, p, 1.0).unwrap();
            let f = |q: SamplePoint3| trilinear_sample(&x, q).unwrap();
            let fd = [
                (f(p3(p.u + eps, p.v, p.t)) - f(p3(p.u - eps, p.v, p.t))) / (2.0 * eps),
                (f(p3(p.u, p.v + eps, p.t)) - f(p3(p.u, p.v - eps, p.t))) / (2.0 * eps),
                (f(p3(p.u, p.v, p.t + eps)) - f(p3(p.u, p.v, p.t - eps))) / (2.0 * eps),
            ];
            for k in 0..3 {
                let err = (g.grad_p[k] - fd[k]).abs();
                assert!(err <= 1e-4 * g.grad_p[k].abs().max(fd[k].abs()) + 1e-6, "{k}: {} vs {}", g.grad_p[k], fd[k]);
            }
        }
    }

    #[test]
    fn integer_coordinate_has_zero_coordinate_gradient() {
        let x = Tensor::<f32>::randn(&mut Rng::new(1), &[4, 4, 3]).unwrap();
        let g = trilinear_backward(&x, p3(1.0, 2.0, 1.0), 1.0).unwrap();
        assert_eq!(g.grad_p, [0.0; 3]);
        assert_eq!(g.grad_x.len(), 1);
    }
}
