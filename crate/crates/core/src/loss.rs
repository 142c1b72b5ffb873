//! L1 loss in gamma-corrected space and the annealed group regularizer.

use crate::error::{Error, Result};
use crate::noise::{gamma, gamma_grad};
use crate::tensor::{Real, Tensor};

/// Coefficient `eta * gamma^m` of the per-group loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub eta: f64,
    pub gamma: f64,
    pub m: u64,
}

impl AnnealSchedule {
    pub const DEFAULT_ETA: f64 = 100.0;
    pub const DEFAULT_GAMMA: f64 = 0.9998;

    pub fn new(eta: f64, gamma: f64, m: u64) -> Self {
        AnnealSchedule { eta, gamma, m }
    }

    pub fn at(self, m: u64) -> Self {
        AnnealSchedule { m, ..self }
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule::new(Self::DEFAULT_ETA, Self::DEFAULT_GAMMA, 0)
    }
}

pub fn anneal_coeff(s: AnnealSchedule) -> f64 {
    s.eta * s.gamma.powf(s.m as f64)
}

/// Mean absolute difference of the gamma-corrected tensors.
pub fn l1_gamma_loss<T: Real>(y: &Tensor<T>, y_gt: &Tensor<T>) -> Result<f64> {
    y.expect_same_shape(y_gt)?;
    let total: f64 = y
        .data()
        .iter()
        .zip(y_gt.data())
        .map(|(a, b)| (gamma(a.f64()) - gamma(b.f64())).abs())
        .sum();
    Ok(total / y.len() as f64)
}

/// Gradient of [`l1_gamma_loss`] with respect to `y`, scaled by `scale`.
/// Zero residuals and clamped inputs get a zero subgradient.
pub fn l1_gamma_grad<T: Real>(y: &Tensor<T>, y_gt: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    y.expect_same_shape(y_gt)?;
    let k = scale / y.len() as f64;
    y.zip_map(y_gt, |a, b| {
        let r = gamma(a.f64()) - gamma(b.f64());
        if r == 0.0 {
            T::zero()
        } else {
            T::of(r.signum() * gamma_grad(a.f64()) * k)
        }
    })
}

/// `l(Y, Y_gt) + eta * gamma^m * sum_i l(Y_i, Y_gt)`.
pub fn video_loss<T: Real>(
    y: &Tensor<T>,
    y_groups: &[Tensor<T>],
    y_gt: &Tensor<T>,
    schedule: AnnealSchedule,
    expected_groups: usize,
) -> Result<f64> {
    if y_groups.len() != expected_groups {
        return Err(Error::InvalidPartition(format!(
            "{} group outputs for {expected_groups} groups",
            y_groups.len()
        )));
    }
    let mut reg = 0.0;
    for g in y_groups {
        reg += l1_gamma_loss(g, y_gt)?;
    }
    Ok(l1_gamma_loss(y, y_gt)? + anneal_coeff(schedule) * reg)
}
