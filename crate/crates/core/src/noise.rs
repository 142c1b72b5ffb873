//! sRGB transfer curve and signal-dependent Gaussian noise.

use crate::error::{Error, Result};
use crate::tensor::{Real, Rng, Tensor};

pub const SRGB_ALPHA: f64 = 0.055;
pub const SRGB_KNEE: f64 = 0.003_130_8;

/// Shot/read noise levels: variance at intensity `q` is `sigma_s * q + sigma_r^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub sigma_s: f64,
    pub sigma_r: f64,
}

impl NoiseParams {
    /// Training range for the shot coefficient.
    pub const SHOT_RANGE: (f64, f64) = (1e-4, 1e-2);
    /// Training range for the read noise std, `[1e-3, 10^-1.5]`.
    pub const READ_RANGE: (f64, f64) = (1e-3, 0.031_622_776_601_683_79);

    pub fn new(sigma_s: f64, sigma_r: f64) -> Result<Self> {
        let p = NoiseParams { sigma_s, sigma_r };
        p.validate()?;
        Ok(p)
    }

    /// Zero shot noise: plain Gaussian with standard deviation `sigma`.
    pub fn homoscedastic(sigma: f64) -> Result<Self> {
        Self::new(0.0, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(self.sigma_s) && ok(self.sigma_r) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "sigma_s={} sigma_r={} must be finite and nonnegative",
                self.sigma_s, self.sigma_r
            )))
        }
    }

    /// Uniform draw from the training ranges.
    pub fn sample(rng: &mut Rng) -> Self {
        let (s0, s1) = Self::SHOT_RANGE;
        let (r0, r1) = Self::READ_RANGE;
        NoiseParams {
            sigma_s: rng.uniform_in(s0, s1),
            sigma_r: rng.uniform_in(r0, r1),
        }
    }

    pub fn variance(&self, q: f64) -> f64 {
        self.sigma_s * q + self.sigma_r * self.sigma_r
    }
}

/// Linear to sRGB for one value, clamped to `[0, 1]` first.
#[inline]
pub fn gamma(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    if y <= SRGB_KNEE {
        12.92 * y
    } else {
        (1.0 + SRGB_ALPHA) * y.powf(1.0 / 2.4) - SRGB_ALPHA
    }
}

/// Derivative of [`gamma`]; zero where the clamp is active.
#[inline]
pub fn gamma_grad(y: f64) -> f64 {
    if !(0.0..=1.0).contains(&y) {
        0.0
    } else if y <= SRGB_KNEE {
        12.92
    } else {
        (1.0 + SRGB_ALPHA) / 2.4 * y.powf(1.0 / 2.4 - 1.0)
    }
}

/// sRGB to linear for one value.
#[inline]
pub fn inverse(z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    if z <= 12.92 * SRGB_KNEE {
        z / 12.92
    } else {
        ((z + SRGB_ALPHA) / (1.0 + SRGB_ALPHA)).powf(2.4)
    }
}

pub fn gamma_correct<T: Real>(y: &Tensor<T>) -> Tensor<T> {
    y.map(|v| T::of(gamma(v.f64())))
}

pub fn inverse_gamma<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    z.map(|v| T::of(inverse(v.f64())))
}

/// `x + e` with `e ~ N(0, sigma_s * x + sigma_r^2)` drawn per element. The
/// result is not clipped.
pub fn add_noise(x: &Tensor, p: NoiseParams, rng: &mut Rng) -> Result<Tensor> {
    p.validate()?;
    if p.sigma_s == 0.0 && p.sigma_r == 0.0 {
        return Ok(x.clone());
    }
    let data = x
        .data()
        .iter()
        .map(|&q| {
            let var = p.variance(q as f64).max(0.0);
            (q as f64 + var.sqrt() * rng.normal()) as f32
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Per-pixel noise level `sqrt(sigma_r^2 + sigma_s * q_ref)` from the
/// (noisy) reference frame.
pub fn estimate_noise_level<T: Real>(reference: &Tensor<T>, p: NoiseParams) -> Result<Tensor<T>> {
    p.validate()?;
    Ok(reference.map(|q| T::of(p.variance(q.f64()).max(0.0).sqrt())))
}
