//! Training loop: patch sampling, loss and gradients, Adam updates, loss log.

use std::io::Write;

use crate::aggregation::GroupPartition;
use crate::data::{extract_patches, generate_sequence, synthesize_pair, Motion, SequenceSample};
use crate::error::{Error, Result};
use crate::loss::{anneal_coeff, l1_gamma_grad, l1_gamma_loss, AnnealSchedule};
use crate::nn::{Adam, AdamConfig, ModelConfig, ModelInput, PanModel, Variant};
use crate::noise::{add_noise, NoiseParams};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub anneal: AnnealSchedule,
    /// Number of sample groups for the annealed per-group loss.
    pub groups: usize,
    /// Apply the per-group loss (video models only).
    pub regularize: bool,
    pub patch: usize,
    /// Iterations per epoch for the learning-rate decay.
    pub epoch_len: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            adam: AdamConfig::default(),
            anneal: AnnealSchedule::default(),
            groups: 3,
            regularize: true,
            patch: 32,
            epoch_len: 1000,
        }
    }

    /// Named training mode: `pan`, `stpan`, or an ablation of `stpan`
    /// (`rigid`, `fixed-weights`, `direct`, `no-reg`, `no-concat`).
    pub fn for_mode(mode: &str) -> Result<Self> {
        let st = ModelConfig::stpan();
        Ok(match mode {
            "pan" => TrainConfig::new(ModelConfig::pan()),
            "stpan" => TrainConfig::new(st),
            "rigid" => TrainConfig::new(st.with_variant(Variant::Rigid)),
            "fixed-weights" => TrainConfig::new(st.with_variant(Variant::FixedWeights)),
            "direct" => TrainConfig::new(st.with_variant(Variant::Direct)),
            "no-concat" => TrainConfig::new(st.with_variant(Variant::NoConcat)),
            "no-reg" => TrainConfig {
                regularize: false,
                ..TrainConfig::new(st)
            },
            _ => {
                return Err(Error::Config(format!(
                    "unknown mode {mode:?} (pan, stpan, rigid, fixed-weights, direct, no-reg, no-concat)"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.patch == 0 || self.patch % 8 != 0 {
            return Err(Error::Config(format!("patch size {} must be a positive multiple of 8", self.patch)));
        }
        if self.epoch_len == 0 {
            return Err(Error::Config("epoch_len must be positive".into()));
        }
        self.partition().map(|_| ())
    }

    /// Group partition used by the loss, if any.
    pub fn partition(&self) -> Result<Option<GroupPartition>> {
        let video = self.model.dim() == 3;
        if !self.regularize || !video || self.model.variant == Variant::Direct {
            return Ok(None);
        }
        let n = self.model.extents.iter().product();
        GroupPartition::contiguous(n, self.groups).map(Some)
    }
}

/// Supplies training sequences (clean and noisy linear frames, reference in
/// the middle).
pub trait SampleSource {
    fn next_sample(&mut self, rng: &mut Rng) -> Result<SequenceSample>;
}

/// Fresh random textures under random motion, noise drawn per sample.
#[derive(Clone, Debug)]
pub struct ProceduralSource {
    pub size: usize,
    pub tau: usize,
    pub max_shift: f64,
    /// Fixed noise; sampled from the default ranges when `None`.
    pub noise: Option<NoiseParams>,
}

impl SampleSource for ProceduralSource {
    fn next_sample(&mut self, rng: &mut Rng) -> Result<SequenceSample> {
        let motion = Motion::random(rng, self.max_shift);
        let p = self.noise.unwrap_or_else(|| NoiseParams::sample(rng));
        let clean = generate_sequence(rng, self.size, self.size, self.tau, motion)?;
        synthesize_pair(&clean, p, rng)
    }
}

/// Random crops of loaded sequences. With `resample_noise` the stored noisy
/// frames are ignored and new noise is drawn for each crop with the
/// sequence's parameters.
#[derive(Clone, Debug)]
pub struct DatasetSource {
    pub sequences: Vec<SequenceSample>,
    pub patch: usize,
    pub tau: usize,
    pub resample_noise: bool,
}

impl SampleSource for DatasetSource {
    fn next_sample(&mut self, rng: &mut Rng) -> Result<SequenceSample> {
        if self.sequences.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let seq = &self.sequences[rng.below(self.sequences.len())];
        let crop = extract_patches(&seq.window(self.tau)?, self.patch, rng)?;
        if self.resample_noise {
            let noisy = add_noise(&crop.clean, crop.params, rng)?;
            SequenceSample::new(crop.clean, noisy, crop.params)
        } else {
            Ok(crop)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub loss: f64,
    pub anneal: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "iteration,loss,anneal,lr";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{}", self.iteration, self.loss, self.anneal, self.lr)
    }
}

/// Network input for a sample under a model config.
pub fn model_input(cfg: &ModelConfig, sample: &SequenceSample) -> Result<ModelInput> {
    let params = if cfg.blind { None } else { Some(sample.params) };
    ModelInput::new(sample.noisy.clone(), params)
}

/// Loss of one forward pass and its gradients on the output and group outputs.
fn loss_and_grads(
    out: &Tensor,
    groups: &[Tensor],
    gt: &Tensor,
    coeff: f64,
) -> Result<(f64, Tensor, Vec<Tensor>)> {
    let mut loss = l1_gamma_loss(out, gt)?;
    let g_out = l1_gamma_grad(out, gt, 1.0)?;
    let mut g_groups = Vec::with_capacity(groups.len());
    for g in groups {
        loss += coeff * l1_gamma_loss(g, gt)?;
        g_groups.push(l1_gamma_grad(g, gt, coeff)?);
    }
    Ok((loss, g_out, g_groups))
}

/// Model, optimizer and sampling state of a training run.
pub struct Trainer {
    pub model: PanModel,
    pub config: TrainConfig,
    adam: Adam,
    partition: Option<GroupPartition>,
    iteration: u64,
    rng: Rng,
}

impl Trainer {
    /// Seeded initialization. The model and the data stream use separate
    /// sub-streams of `seed`.
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = PanModel::init(config.model.clone(), &mut Rng::with_stream(seed, 0))?;
        Self::from_model(model, config, seed)
    }

    pub fn from_model(model: PanModel, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.model {
            return Err(Error::Config("model does not match the training config".into()));
        }
        let adam = Adam::new(config.adam.clone(), &model.params());
        Ok(Trainer {
            partition: config.partition()?,
            model,
            adam,
            config,
            iteration: 0,
            rng: Rng::with_stream(seed, 1),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr()
    }

    /// Loss of the current model on `sample` with the current schedule.
    pub fn loss_on(&self, sample: &SequenceSample) -> Result<f64> {
        let input = model_input(&self.config.model, sample)?;
        let fwd = self.model.forward(&input, self.partition.as_ref())?;
        let coeff = anneal_coeff(self.config.anneal.at(self.iteration));
        Ok(loss_and_grads(&fwd.output, &fwd.groups, &sample.reference(), coeff)?.0)
    }

    /// One optimization step on one sample.
    pub fn step_on(&mut self, sample: &SequenceSample) -> Result<LogRow> {
        let input = model_input(&self.config.model, sample)?;
        let fwd = self.model.forward(&input, self.partition.as_ref())?;
        let coeff = if self.partition.is_some() {
            anneal_coeff(self.config.anneal.at(self.iteration))
        } else {
            0.0
        };
        let (loss, g_out, g_groups) = loss_and_grads(&fwd.output, &fwd.groups, &sample.reference(), coeff)?;
        let grads = self.model.backward(&fwd, &g_out, &g_groups)?;
        let row = LogRow {
            iteration: self.iteration,
            loss,
            anneal: coeff,
            lr: self.adam.lr(),
        };
        self.adam.step(self.model.params_mut(), &grads)?;
        self.iteration += 1;
        if self.iteration % self.config.epoch_len as u64 == 0 {
            self.adam.end_epoch();
        }
        Ok(row)
    }

    pub fn step(&mut self, source: &mut dyn SampleSource) -> Result<LogRow> {
        let sample = source.next_sample(&mut self.rng)?.window(self.config.model.tau)?;
        self.step_on(&sample)
    }

    /// Runs `iters` steps, writing each log row as CSV when `log` is given.
    pub fn run(
        &mut self,
        source: &mut dyn SampleSource,
        iters: u64,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<LogRow>> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{LOG_HEADER}")?;
        }
        let mut rows = Vec::with_capacity(iters as usize);
        for _ in 0..iters {
            let row = self.step(source)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", row.csv())?;
            }
            rows.push(row);
        }
        Ok(rows)
    }
}
