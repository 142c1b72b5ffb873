use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pixagg::aggregation::{receptive_field_stat, OffsetField};
use pixagg::config::Settings;
use pixagg::data::{self, load_dataset, load_sequence, SequenceSample, SynthConfig};
use pixagg::eval::{self, eval_rows, input_with_params, write_csv, EvalRow};
use pixagg::nn::checkpoint;
use pixagg::nn::{ModelInput, PanModel, Variant};
use pixagg::noise::{gamma_correct, inverse_gamma, NoiseParams};
use pixagg::train::{DatasetSource, TrainConfig, Trainer};
use pixagg::{pxt, Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "pixagg", version, about = "Learned pixel aggregation denoising")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// key=value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset of clean and noisy sequences.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        sigma_s: Option<f64>,
        #[arg(long)]
        sigma_r: Option<f64>,
        /// Largest per-frame motion in pixels.
        #[arg(long)]
        max_shift: Option<f64>,
        /// Use exactly `max_shift` pixels along a random axis.
        #[arg(long)]
        integer_shift: Option<bool>,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// pan, stpan, rigid, fixed-weights, direct, no-reg or no-concat.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        width_mult: Option<f64>,
        #[arg(long)]
        offset_scale: Option<f64>,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        blind: Option<bool>,
    },
    /// Denoise a sequence directory, a PXT1 stack or a PGM image.
    Denoise {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        sigma_s: Option<f64>,
        #[arg(long)]
        sigma_r: Option<f64>,
    },
    /// PSNR/SSIM of a model and the baselines on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Rigid-grid model to report alongside.
        #[arg(long)]
        rigid: Option<PathBuf>,
    },
    /// Dump the sampling locations and weights of one pixel.
    Visgrid {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Pixel as `row,col`.
        #[arg(long)]
        pixel: Option<String>,
        #[arg(long)]
        sigma_s: Option<f64>,
        #[arg(long)]
        sigma_r: Option<f64>,
    },
}

const COMMON_DEFAULTS: [(&str, &str); 2] = [("seed", "0"), ("out", "")];

fn settings(common: &Common, specific: &[(&str, &str)]) -> Result<Settings> {
    let mut all: Vec<(&str, &str)> = COMMON_DEFAULTS.to_vec();
    all.extend_from_slice(specific);
    let mut s = Settings::with_defaults(&all);
    if let Some(p) = &common.config {
        s.merge_file(p)?;
    }
    s.set_opt("seed", common.seed)?;
    s.set_opt("out", common.out.as_ref().map(|p| p.display().to_string()))?;
    Ok(s)
}

fn required_path(s: &Settings, key: &str) -> Result<PathBuf> {
    let v = s.raw(key)?;
    if v.is_empty() {
        return Err(Error::Config(format!("--{} is required", key.replace('_', "-"))));
    }
    Ok(PathBuf::from(v))
}

fn out_dir(s: &Settings, name: &str) -> Result<PathBuf> {
    let out = required_path(s, "out")?;
    fs::create_dir_all(&out)?;
    fs::write(out.join(format!("{name}.cfg")), s.render())?;
    Ok(out)
}

fn noise_from(s: &Settings) -> Result<Option<NoiseParams>> {
    match (s.get_opt::<f64>("sigma_s")?, s.get_opt::<f64>("sigma_r")?) {
        (None, None) => Ok(None),
        (a, b) => NoiseParams::new(a.unwrap_or(0.0), b.unwrap_or(0.0)).map(Some),
    }
}

fn cmd_synth(s: &Settings) -> Result<()> {
    let cfg = SynthConfig {
        count: s.get("count")?,
        size: s.get("size")?,
        tau: s.get("tau")?,
        noise: noise_from(s)?,
        max_shift: s.get("max_shift")?,
        integer_shift: s.get("integer_shift")?,
    };
    let out = out_dir(s, "synth")?;
    let entries = data::synth_dataset(&out, &cfg, s.get("seed")?)?;
    println!("wrote {} sequences of {} frames to {}", entries.len(), 2 * cfg.tau + 1, out.display());
    Ok(())
}

fn cmd_train(s: &Settings) -> Result<()> {
    let data_dir = required_path(s, "data")?;
    let mut cfg = TrainConfig::for_mode(&s.get::<String>("mode")?)?;
    cfg.patch = s.get("patch")?;
    cfg.adam.lr = s.get("lr")?;
    cfg.groups = s.get("groups")?;
    cfg.anneal.eta = s.get("eta")?;
    cfg.anneal.gamma = s.get("gamma")?;
    cfg.model.width_mult = s.get("width_mult")?;
    cfg.model.offset_scale = s.get("offset_scale")?;
    cfg.model.blind = s.get("blind")?;
    cfg.validate()?;
    let sequences: Vec<SequenceSample> = load_dataset(&data_dir)?.into_iter().map(|(_, q)| q).collect();
    if sequences.is_empty() {
        return Err(Error::Config(format!("{}: dataset is empty", data_dir.display())));
    }
    for q in &sequences {
        if q.height().min(q.width()) < cfg.patch {
            return Err(Error::Config(format!(
                "patch {} exceeds a {}x{} sequence",
                cfg.patch,
                q.height(),
                q.width()
            )));
        }
        q.window(cfg.model.tau)?;
    }
    cfg.epoch_len = s.get_opt("epoch_len")?.unwrap_or(sequences.len());
    let out = out_dir(s, "train")?;
    let mut trainer = Trainer::new(cfg.clone(), s.get("seed")?)?;
    let mut source = DatasetSource {
        sequences,
        patch: cfg.patch,
        tau: cfg.model.tau,
        resample_noise: s.get("resample_noise")?,
    };
    let iters: u64 = s.get("iters")?;
    let mut log = BufWriter::new(File::create(out.join("loss.csv"))?);
    let rows = trainer.run(&mut source, iters, Some(&mut log))?;
    std::io::Write::flush(&mut log)?;
    checkpoint::save(&out.join("model.pxc"), &trainer.model, trainer.iteration())?;
    if let Some(last) = rows.last() {
        println!("iteration {} loss {}", last.iteration, last.loss);
    }
    Ok(())
}

fn load_model(s: &Settings) -> Result<PanModel> {
    Ok(checkpoint::load(&required_path(s, "checkpoint")?)?.model)
}

/// Noisy linear frames and any noise parameters stored with them.
fn load_input(path: &Path) -> Result<(Tensor, Option<NoiseParams>)> {
    if path.is_dir() {
        let seq = load_sequence(path)?;
        return Ok((seq.noisy, Some(seq.params)));
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let t = match ext {
        "pxt" => pxt::read(path)?,
        "pgm" => inverse_gamma(&data::load_image(path)?),
        _ => return Err(Error::Config(format!("{}: expected a directory, .pxt or .pgm", path.display()))),
    };
    let t = if t.rank() == 2 {
        let s = t.shape().to_vec();
        t.reshape(&[1, s[0], s[1]])?
    } else {
        t
    };
    Ok((t, None))
}

fn model_input_for(model: &PanModel, frames: Tensor, params: Option<NoiseParams>) -> Result<ModelInput> {
    let cfg = model.config();
    let f = frames.shape()[0];
    if frames.rank() != 3 || f != cfg.frames() {
        return Err(Error::Config(format!(
            "model expects tau = {} ({} frames), input has {} frames",
            cfg.tau,
            cfg.frames(),
            f
        )));
    }
    input_with_params(frames, cfg.blind, params)
}

fn cmd_denoise(s: &Settings) -> Result<()> {
    let model = load_model(s)?;
    let (frames, stored) = load_input(&required_path(s, "input")?)?;
    let params = noise_from(s)?.or(stored);
    let input = model_input_for(&model, frames, params)?;
    let y = eval::denoise_any_size(&model, &input)?;
    let out = out_dir(s, "denoise")?;
    pxt::write(&out.join("denoised.pxt"), &y)?;
    data::write_pgm(&out.join("denoised.pgm"), &gamma_correct(&y), 65535)?;
    println!("wrote {}x{} output to {}", y.shape()[0], y.shape()[1], out.display());
    Ok(())
}

fn write_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(&mut w, rows)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn cmd_eval(s: &Settings) -> Result<()> {
    let set = load_dataset(&required_path(s, "data")?)?;
    let named: Vec<(&str, &SequenceSample)> = set.iter().map(|(e, q)| (e.name.as_str(), q)).collect();
    let mut reports: Vec<(&str, Vec<EvalRow>)> = vec![
        ("reference", eval_rows(named.clone(), |q| Ok(q.noisy_reference()))?),
        ("average", eval_rows(named.clone(), |q| Ok(q.temporal_average()))?),
    ];
    if !s.raw("checkpoint")?.is_empty() {
        let model = load_model(s)?;
        reports.push(("model", eval_rows(named.clone(), |q| eval::denoise_window(&model, q))?));
    }
    if let Some(p) = s.get_opt::<PathBuf>("rigid")? {
        let rigid = checkpoint::load(&p)?.model;
        reports.push(("rigid", eval_rows(named.clone(), |q| eval::denoise_window(&rigid, q))?));
    }
    let out = out_dir(s, "eval")?;
    for (name, rows) in &reports {
        write_rows(&out.join(format!("{name}.csv")), rows)?;
        let (p, q) = eval::mean(rows);
        println!("{name:<10} psnr {p:.3} ssim {q:.4}");
    }
    Ok(())
}

fn parse_pixel(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("pixel {text:?} is not row,col"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Offsets and weights for an input of any size, cropped back to it.
fn grid_fields(model: &PanModel, input: &ModelInput) -> Result<(OffsetField, Tensor)> {
    let s = input.frames.shape().to_vec();
    let (h, w) = (s[1], s[2]);
    let padded = eval::pad_input(input, 8)?;
    let pw = padded.frames.shape()[2];
    let fwd = model.forward(&padded, None)?;
    let (off, wts) = match (fwd.offsets, fwd.weights) {
        (Some(o), Some(w)) => (o, w),
        _ => return Err(Error::Config("this model has no sampling grid".into())),
    };
    let (_, _, n, d) = off.dims();
    let ot = off.tensor();
    let o = Tensor::from_fn(&[h, w, n, d], |i| ot.data()[((i[0] * pw + i[1]) * n + i[2]) * d + i[3]])?;
    let wt = wts.tensor();
    let wc = Tensor::from_fn(&[h, w, n], |i| wt.data()[(i[0] * pw + i[1]) * n + i[2]])?;
    Ok((OffsetField::new(o)?, wc))
}

fn cmd_visgrid(s: &Settings) -> Result<()> {
    let model = load_model(s)?;
    if model.config().variant == Variant::Direct {
        return Err(Error::Config("direct-regression models have no sampling grid".into()));
    }
    let (u, v) = parse_pixel(s.raw("pixel")?)?;
    let input_path = required_path(s, "input")?;
    let inputs: Vec<(Tensor, Option<NoiseParams>)> = if input_path.join(data::MANIFEST).exists() {
        load_dataset(&input_path)?
            .into_iter()
            .map(|(_, q)| Ok((q.window(model.config().tau)?.noisy, Some(q.params))))
            .collect::<Result<_>>()?
    } else {
        vec![load_input(&input_path)?]
    };
    let override_params = noise_from(s)?;
    let grid = model.grid().clone();
    let (mut stat, mut count) = (0.0, 0usize);
    let mut rows = String::new();
    for (k, (frames, stored)) in inputs.into_iter().enumerate() {
        let input = model_input_for(&model, frames, override_params.or(stored))?;
        let (h, w) = (input.frames.shape()[1], input.frames.shape()[2]);
        let (off, wts) = grid_fields(&model, &input)?;
        stat += receptive_field_stat(&off, &grid)?;
        if k == 0 {
            if u >= h || v >= w {
                return Err(Error::InvalidInput(format!("pixel ({u}, {v}) outside a {h}x{w} input")));
            }
            let d = grid.dim();
            rows.push_str(if d == 3 { "u,v,t,weight\n" } else { "u,v,weight\n" });
            let tau = model.config().tau as f64;
            for (i, pt) in grid.points().iter().enumerate() {
                let o = off.tensor();
                let at = |a: usize| o.get(&[u, v, i, a]).map(f64::from);
                let pu = u as f64 + f64::from(pt[0]) + at(0)?;
                let pv = v as f64 + f64::from(pt[1]) + at(1)?;
                let wt = f64::from(wts.get(&[u, v, i])?);
                if d == 3 {
                    let pt_ = tau + f64::from(pt[2]) + at(2)?;
                    rows.push_str(&format!("{pu},{pv},{pt_},{wt}\n"));
                } else {
                    rows.push_str(&format!("{pu},{pv},{wt}\n"));
                }
            }
        }
        count += 1;
    }
    let stat = stat / count as f64;
    let out = out_dir(s, "visgrid")?;
    fs::write(out.join("grid.csv"), rows)?;
    fs::write(out.join("receptive_field.txt"), format!("{stat}\n"))?;
    println!("receptive field {stat:.4}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let c = &cli.common;
    match cli.cmd {
        Cmd::Synth {
            count,
            size,
            tau,
            sigma_s,
            sigma_r,
            max_shift,
            integer_shift,
        } => {
            let mut s = settings(
                c,
                &[
                    ("count", "8"),
                    ("size", "32"),
                    ("tau", "2"),
                    ("sigma_s", ""),
                    ("sigma_r", ""),
                    ("max_shift", "4"),
                    ("integer_shift", "false"),
                ],
            )?;
            s.set_opt("count", count)?;
            s.set_opt("size", size)?;
            s.set_opt("tau", tau)?;
            s.set_opt("sigma_s", sigma_s)?;
            s.set_opt("sigma_r", sigma_r)?;
            s.set_opt("max_shift", max_shift)?;
            s.set_opt("integer_shift", integer_shift)?;
            cmd_synth(&s)
        }
        Cmd::Train {
            data,
            mode,
            iters,
            patch,
            lr,
            width_mult,
            offset_scale,
            groups,
            blind,
        } => {
            let mut s = settings(
                c,
                &[
                    ("data", ""),
                    ("mode", "stpan"),
                    ("iters", "2000"),
                    ("patch", "32"),
                    ("lr", "2e-4"),
                    ("width_mult", "0.125"),
                    ("offset_scale", "8"),
                    ("groups", "3"),
                    ("eta", "100"),
                    ("gamma", "0.9998"),
                    ("blind", "true"),
                    ("epoch_len", ""),
                    ("resample_noise", "true"),
                ],
            )?;
            s.set_opt("data", data.map(|p| p.display().to_string()))?;
            s.set_opt("mode", mode)?;
            s.set_opt("iters", iters)?;
            s.set_opt("patch", patch)?;
            s.set_opt("lr", lr)?;
            s.set_opt("width_mult", width_mult)?;
            s.set_opt("offset_scale", offset_scale)?;
            s.set_opt("groups", groups)?;
            s.set_opt("blind", blind)?;
            cmd_train(&s)
        }
        Cmd::Denoise {
            checkpoint,
            input,
            sigma_s,
            sigma_r,
        } => {
            let mut s = settings(
                c,
                &[("checkpoint", ""), ("input", ""), ("sigma_s", ""), ("sigma_r", "")],
            )?;
            s.set_opt("checkpoint", checkpoint.map(|p| p.display().to_string()))?;
            s.set_opt("input", input.map(|p| p.display().to_string()))?;
            s.set_opt("sigma_s", sigma_s)?;
            s.set_opt("sigma_r", sigma_r)?;
            cmd_denoise(&s)
        }
        Cmd::Eval { checkpoint, data, rigid } => {
            let mut s = settings(c, &[("checkpoint", ""), ("data", ""), ("rigid", "")])?;
            s.set_opt("checkpoint", checkpoint.map(|p| p.display().to_string()))?;
            s.set_opt("data", data.map(|p| p.display().to_string()))?;
            s.set_opt("rigid", rigid.map(|p| p.display().to_string()))?;
            cmd_eval(&s)
        }
        Cmd::Visgrid {
            checkpoint,
            input,
            pixel,
            sigma_s,
            sigma_r,
        } => {
            let mut s = settings(
                c,
                &[
                    ("checkpoint", ""),
                    ("input", ""),
                    ("pixel", "0,0"),
                    ("sigma_s", ""),
                    ("sigma_r", ""),
                ],
            )?;
            s.set_opt("checkpoint", checkpoint.map(|p| p.display().to_string()))?;
            s.set_opt("input", input.map(|p| p.display().to_string()))?;
            s.set_opt("pixel", pixel)?;
            s.set_opt("sigma_s", sigma_s)?;
            s.set_opt("sigma_r", sigma_r)?;
            cmd_visgrid(&s)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pixagg: error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
