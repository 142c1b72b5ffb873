//! PSNR and single-scale SSIM for images in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(y: &Tensor, y_gt: &Tensor) -> Result<f64> {
    y.expect_same_shape(y_gt)?;
    let s: f64 = y
        .data()
        .iter()
        .zip(y_gt.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(s / y.len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak 1. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(y: &Tensor, y_gt: &Tensor) -> Result<f64> {
    let m = mse(y, y_gt)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1).
pub fn ssim(y: &Tensor, y_gt: &Tensor) -> Result<f64> {
    y.expect_same_shape(y_gt)?;
    let s = y.shape();
    if s.len() != 2 || s[0] < SSIM_WINDOW || s[1] < SSIM_WINDOW {
        return Err(Error::shape(format!("SSIM needs a 2-D image of at least 11x11, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let k = gaussian_window();
    let a: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = y_gt.data().iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let (mu_a, mu_b) = (filter_valid(&a, h, w, &k), filter_valid(&b, h, w, &k));
    let (e_aa, e_bb, e_ab) = (
        filter_valid(&aa, h, w, &k),
        filter_valid(&bb, h, w, &k),
        filter_valid(&ab, h, w, &k),
    );
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}
