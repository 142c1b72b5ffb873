//! Evaluation of models and baselines on sequences with ground truth.
//!
//! Metrics are computed on display-referred values: both the estimate and
//! the ground truth go through the clamped sRGB curve first.

use std::io::Write;

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::nn::{ModelInput, PanModel};
use crate::noise::{gamma_correct, NoiseParams};
use crate::tensor::Tensor;
use crate::train::model_input;

pub const EVAL_HEADER: &str = "name,psnr,ssim";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of a linear estimate against a linear ground truth.
pub fn score(estimate: &Tensor, ground_truth: &Tensor) -> Result<(f64, f64)> {
    let (a, b) = (gamma_correct(estimate), gamma_correct(ground_truth));
    Ok((psnr(&a, &b)?, ssim(&a, &b)?))
}

fn pad_to(x: &Tensor, m: usize) -> Result<Tensor> {
    let s = x.shape();
    let (h, w) = (s[1].div_ceil(m) * m, s[2].div_ceil(m) * m);
    Tensor::from_fn(&[s[0], h, w], |i| {
        x.data()[(i[0] * s[1] + i[1].min(s[1] - 1)) * s[2] + i[2].min(s[2] - 1)]
    })
}

/// Replicates the last row and column of every input plane up to a multiple
/// of `m`.
pub fn pad_input(input: &ModelInput, m: usize) -> Result<ModelInput> {
    let s = input.frames.shape().to_vec();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected f x h x w frames, got {s:?}")));
    }
    let noise_map = match &input.noise_map {
        Some(map) => {
            let p = pad_to(&map.clone().reshape(&[1, s[1], s[2]])?, m)?;
            let ps = p.shape().to_vec();
            Some(p.reshape(&[ps[1], ps[2]])?)
        }
        None => None,
    };
    Ok(ModelInput {
        frames: pad_to(&input.frames, m)?,
        noise_map,
    })
}

/// Runs the model on any spatial size by padding to a multiple of 8 and
/// cropping the result.
pub fn denoise_any_size(model: &PanModel, input: &ModelInput) -> Result<Tensor> {
    let s = input.frames.shape().to_vec();
    if s.len() == 3 && s[1] % 8 == 0 && s[2] % 8 == 0 {
        return model.denoise(input);
    }
    let out = model.denoise(&pad_input(input, 8)?)?;
    let w = out.shape()[1];
    Tensor::from_fn(&[s[1], s[2]], |i| out.data()[i[0] * w + i[1]])
}

/// Denoised reference frame for a sequence whose frame count must match the
/// model.
pub fn denoise_sequence(model: &PanModel, seq: &SequenceSample) -> Result<Tensor> {
    let cfg = model.config();
    if seq.tau != cfg.tau {
        return Err(Error::Config(format!(
            "model expects tau = {} ({} frames), sequence has {} frames",
            cfg.tau,
            cfg.frames(),
            seq.frames()
        )));
    }
    denoise_any_size(model, &model_input(cfg, seq)?)
}

/// Like [`denoise_sequence`] but takes the centered window the model needs
/// from a longer sequence.
pub fn denoise_window(model: &PanModel, seq: &SequenceSample) -> Result<Tensor> {
    denoise_sequence(model, &seq.window(model.config().tau)?)
}

pub fn eval_rows<'a>(
    seqs: impl IntoIterator<Item = (&'a str, &'a SequenceSample)>,
    mut estimate: impl FnMut(&SequenceSample) -> Result<Tensor>,
) -> Result<Vec<EvalRow>> {
    seqs.into_iter()
        .map(|(name, seq)| {
            let (p, s) = score(&estimate(seq)?, &seq.reference())?;
            Ok(EvalRow {
                name: name.to_string(),
                psnr: p,
                ssim: s,
            })
        })
        .collect()
}

/// Mean PSNR and SSIM. Infinite PSNRs make the mean infinite.
pub fn mean(rows: &[EvalRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

/// CSV with one row per sequence and a final `mean` row.
pub fn write_csv<W: Write>(w: &mut W, rows: &[EvalRow]) -> Result<()> {
    writeln!(w, "{EVAL_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.name, r.psnr, r.ssim)?;
    }
    let (p, s) = mean(rows);
    writeln!(w, "mean,{p},{s}")?;
    Ok(())
}

/// Noise-level map input for a non-blind model from explicit parameters.
pub fn input_with_params(frames: Tensor, blind: bool, params: Option<NoiseParams>) -> Result<ModelInput> {
    if blind {
        return ModelInput::new(frames, None);
    }
    match params {
        Some(p) => ModelInput::new(frames, Some(p)),
        None => Err(Error::Config("non-blind model needs sigma_s and sigma_r".into())),
    }
}
