//! Image I/O, procedural clean sequences, noisy-pair synthesis, cropping and
//! the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.csv` and one `seq_XXXX/` directory
//! per sequence containing `frame_XX.pgm` (clean, sRGB, 16-bit),
//! `noisy.pxt` (noisy linear frames, `f x h x w`) and `noise.txt`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::noise::{add_noise, inverse_gamma, NoiseParams};
use crate::pxt::{self, Cursor};
use crate::tensor::{Rng, Tensor};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "name,seed,sigma_s,sigma_r,shift_u,shift_v";

// ---------------------------------------------------------------- PGM

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

fn header_field<R: Read>(c: &mut Cursor<R>, what: &str) -> Result<u32> {
    let mut b = c.exact::<1>()?[0];
    loop {
        if b == b'#' {
            while b != b'\n' {
                b = c.exact::<1>()?[0];
            }
        } else if !is_space(b) {
            break;
        }
        b = c.exact::<1>()?[0];
    }
    let start = c.pos - 1;
    let mut value: u64 = 0;
    loop {
        if !b.is_ascii_digit() {
            return Err(c.parse_error(c.pos - 1, format!("expected {what}, found byte 0x{b:02x}")));
        }
        value = value * 10 + u64::from(b - b'0');
        if value > u64::from(u32::MAX) {
            return Err(c.parse_error(start, format!("{what} too large")));
        }
        b = c.exact::<1>()?[0];
        if is_space(b) {
            break;
        }
    }
    Ok(value as u32)
}

/// Binary PGM (P5) normalized by its maxval.
pub fn read_pgm_from<R: Read>(r: R, path: &Path) -> Result<Tensor> {
    let mut c = Cursor::new(r, path);
    if &c.exact::<2>()? != b"P5" {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "P5",
        });
    }
    let w_at = c.pos;
    let w = header_field(&mut c, "width")?;
    let h = header_field(&mut c, "height")?;
    let m_at = c.pos;
    let maxval = header_field(&mut c, "maxval")?;
    if w == 0 || h == 0 {
        return Err(c.parse_error(w_at, format!("empty image {w}x{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(c.parse_error(m_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let count = w as usize * h as usize;
    let wide = maxval > 255;
    let mut bytes = vec![0u8; count * if wide { 2 } else { 1 }];
    c.fill(&mut bytes)?;
    let scale = 1.0 / f64::from(maxval);
    let data = if wide {
        bytes
            .chunks_exact(2)
            .map(|p| (f64::from(u16::from_be_bytes([p[0], p[1]])) * scale) as f32)
            .collect()
    } else {
        bytes.iter().map(|&b| (f64::from(b) * scale) as f32).collect()
    };
    Tensor::new(&[h as usize, w as usize], data)
}

/// Loads a grayscale image with values in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    read_pgm_from(BufReader::new(pxt::open(path)?), path)
}

/// Quantizes `[0, 1]` values (clamped) to `maxval` levels.
pub fn write_pgm_to<W: Write>(w: &mut W, img: &Tensor, maxval: u16) -> Result<()> {
    let s = img.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("PGM needs an h x w image, got {s:?}")));
    }
    if maxval == 0 {
        return Err(Error::InvalidInput("maxval must be positive".into()));
    }
    write!(w, "P5\n{} {}\n{}\n", s[1], s[0], maxval)?;
    let m = f64::from(maxval);
    let q = |v: f32| (f64::from(v).clamp(0.0, 1.0) * m).round() as u16;
    if maxval > 255 {
        for &v in img.data() {
            w.write_all(&q(v).to_be_bytes())?;
        }
    } else {
        let bytes: Vec<u8> = img.data().iter().map(|&v| q(v) as u8).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn write_pgm(path: &Path, img: &Tensor, maxval: u16) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm_to(&mut w, img, maxval)?;
    w.flush()?;
    Ok(())
}

/// What a 16-bit PGM round trip does to a value.
pub fn quantize16(img: &Tensor) -> Tensor {
    img.map(|v| ((f64::from(v).clamp(0.0, 1.0) * 65535.0).round() / 65535.0) as f32)
}

// ---------------------------------------------------------------- textures

#[derive(Clone, Debug)]
struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
    amp: f64,
}

#[derive(Clone, Debug)]
struct Shape {
    cy: f64,
    cx: f64,
    /// Half sizes; a disc when `rect` is false.
    ry: f64,
    rx: f64,
    rect: bool,
    value: f64,
    softness: f64,
}

/// A random continuous grayscale pattern (sRGB, `[0, 1]`): smooth waves under
/// a stack of soft-edged discs and rectangles. Evaluating it at shifted
/// coordinates gives exact motion.
#[derive(Clone, Debug)]
pub struct Texture {
    base: f64,
    waves: Vec<Wave>,
    shapes: Vec<Shape>,
}

impl Texture {
    /// Random texture whose shapes cover the window `[-pad, h + pad) x [-pad, w + pad)`.
    pub fn random(rng: &mut Rng, h: usize, w: usize, pad: f64) -> Self {
        let base = rng.uniform_in(0.2, 0.8);
        let waves = (0..4)
            .map(|_| {
                let f = rng.uniform_in(0.02, 0.3);
                let a = rng.uniform_in(0.0, std::f64::consts::PI);
                Wave {
                    ky: 2.0 * std::f64::consts::PI * f * a.sin(),
                    kx: 2.0 * std::f64::consts::PI * f * a.cos(),
                    phase: rng.uniform_in(0.0, 2.0 * std::f64::consts::PI),
                    amp: rng.uniform_in(0.02, 0.1),
                }
            })
            .collect();
        let area = (h as f64 + 2.0 * pad) * (w as f64 + 2.0 * pad);
        let count = ((area / 60.0) as usize).clamp(8, 400);
        let shapes = (0..count)
            .map(|_| Shape {
                cy: rng.uniform_in(-pad, h as f64 + pad),
                cx: rng.uniform_in(-pad, w as f64 + pad),
                ry: rng.uniform_in(1.5, 7.0),
                rx: rng.uniform_in(1.5, 7.0),
                rect: rng.uniform() < 0.5,
                value: rng.uniform_in(0.0, 1.0),
                softness: rng.uniform_in(0.3, 1.2),
            })
            .collect();
        Texture { base, waves, shapes }
    }

    pub fn eval(&self, y: f64, x: f64) -> f64 {
        let mut v = self.base;
        for wv in &self.waves {
            v += wv.amp * (wv.ky * y + wv.kx * x + wv.phase).sin();
        }
        for s in &self.shapes {
            let (dy, dx) = ((y - s.cy) / s.ry, (x - s.cx) / s.rx);
            // Signed distance in units of the smaller half size, negative inside.
            let r = s.ry.min(s.rx);
            let d = if s.rect { dy.abs().max(dx.abs()) - 1.0 } else { (dy * dy + dx * dx).sqrt() - 1.0 } * r;
            let z = -d / s.softness;
            if z < -30.0 {
                continue;
            }
            let alpha = 1.0 / (1.0 + (-z).exp());
            v = v * (1.0 - alpha) + s.value * alpha;
        }
        v.clamp(0.0, 1.0)
    }
}

/// Constant per-frame translation in pixels along rows (`du`) and columns
/// (`dv`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Motion {
    pub du: f64,
    pub dv: f64,
}

impl Motion {
    /// Random direction, magnitude uniform in `[0, max_shift]`.
    pub fn random(rng: &mut Rng, max_shift: f64) -> Self {
        let r = rng.uniform_in(0.0, max_shift);
        let a = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
        Motion {
            du: r * a.sin(),
            dv: r * a.cos(),
        }
    }

    /// Integer shift of `shift` pixels along a random axis and sign.
    pub fn axis(rng: &mut Rng, shift: usize) -> Self {
        let s = if rng.uniform() < 0.5 { -(shift as f64) } else { shift as f64 };
        if rng.uniform() < 0.5 {
            Motion { du: s, dv: 0.0 }
        } else {
            Motion { du: 0.0, dv: s }
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.du.hypot(self.dv)
    }
}

/// Clean sRGB frames `(2 tau + 1) x h x w`. Frame `k` at pixel `(y, x)`
/// shows the texture at `(y + (k - tau) du, x + (k - tau) dv)`.
pub fn render_sequence(tex: &Texture, h: usize, w: usize, tau: usize, motion: Motion) -> Result<Tensor> {
    Tensor::from_fn(&[2 * tau + 1, h, w], |i| {
        let k = i[0] as f64 - tau as f64;
        tex.eval(i[1] as f64 + k * motion.du, i[2] as f64 + k * motion.dv) as f32
    })
}

/// Random texture rendered under `motion`.
pub fn generate_sequence(rng: &mut Rng, h: usize, w: usize, tau: usize, motion: Motion) -> Result<Tensor> {
    let pad = tau as f64 * motion.magnitude() + 8.0;
    let tex = Texture::random(rng, h, w, pad);
    render_sequence(&tex, h, w, tau, motion)
}

// ---------------------------------------------------------------- samples

/// Clean and noisy linear frames of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    /// Clean linear frames, `(2 tau + 1) x h x w`.
    pub clean: Tensor,
    pub noisy: Tensor,
    pub tau: usize,
    pub params: NoiseParams,
}

impl SequenceSample {
    pub fn new(clean: Tensor, noisy: Tensor, params: NoiseParams) -> Result<Self> {
        clean.expect_same_shape(&noisy)?;
        let s = clean.shape();
        if s.len() != 3 || s[0] % 2 == 0 {
            return Err(Error::shape(format!("sequence needs an odd frame count, got {s:?}")));
        }
        Ok(SequenceSample {
            tau: s[0] / 2,
            clean,
            noisy,
            params,
        })
    }

    pub fn frames(&self) -> usize {
        self.clean.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.clean.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.clean.shape()[2]
    }

    fn frame(t: &Tensor, k: usize) -> Tensor {
        let s = t.shape();
        t.slice0(k, k + 1).and_then(|f| f.reshape(&[s[1], s[2]])).expect("frame index in range")
    }

    /// Clean linear reference frame.
    pub fn reference(&self) -> Tensor {
        Self::frame(&self.clean, self.tau)
    }

    pub fn noisy_reference(&self) -> Tensor {
        Self::frame(&self.noisy, self.tau)
    }

    /// Noisy frames restricted to `tau` neighbors on each side.
    pub fn window(&self, tau: usize) -> Result<Self> {
        if tau > self.tau {
            return Err(Error::Config(format!("model needs tau = {tau}, sequence has tau = {}", self.tau)));
        }
        let (a, b) = (self.tau - tau, self.tau + tau + 1);
        SequenceSample::new(self.clean.slice0(a, b)?, self.noisy.slice0(a, b)?, self.params)
    }

    /// Mean of the noisy frames.
    pub fn temporal_average(&self) -> Tensor {
        let (f, h, w) = (self.frames(), self.height(), self.width());
        let d = self.noisy.data();
        let data = (0..h * w)
            .map(|p| ((0..f).map(|k| f64::from(d[k * h * w + p])).sum::<f64>() / f as f64) as f32)
            .collect();
        Tensor::new(&[h, w], data).expect("shape matches")
    }
}

/// Linearizes sRGB clean frames and adds noise to every frame.
pub fn synthesize_pair(clean_srgb: &Tensor, p: NoiseParams, rng: &mut Rng) -> Result<SequenceSample> {
    let linear = inverse_gamma(clean_srgb);
    let noisy = add_noise(&linear, p, rng)?;
    SequenceSample::new(linear, noisy, p)
}

fn crop3(t: &Tensor, y: usize, x: usize, size: usize) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(&[s[0], size, size], |i| {
        t.data()[(i[0] * s[1] + y + i[1]) * s[2] + x + i[2]]
    })
    .expect("crop inside source")
}

/// The same random `size x size` crop of every frame.
pub fn extract_patches(seq: &SequenceSample, size: usize, rng: &mut Rng) -> Result<SequenceSample> {
    let (h, w) = (seq.height(), seq.width());
    if size == 0 || size > h.min(w) {
        return Err(Error::shape(format!("patch size {size} does not fit a {h}x{w} sequence")));
    }
    let y = rng.below(h - size + 1);
    let x = rng.below(w - size + 1);
    SequenceSample::new(crop3(&seq.clean, y, x, size), crop3(&seq.noisy, y, x, size), seq.params)
}

// ---------------------------------------------------------------- datasets

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub tau: usize,
    /// Fixed noise parameters; sampled per sequence when `None`.
    pub noise: Option<NoiseParams>,
    pub max_shift: f64,
    /// Integer axis-aligned shifts of exactly `max_shift` pixels.
    pub integer_shift: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 8,
            size: 32,
            tau: 2,
            noise: None,
            max_shift: 4.0,
            integer_shift: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub seed: u64,
    pub params: NoiseParams,
    pub motion: Motion,
}

/// One sequence of a synthetic dataset. The clean frames are quantized to
/// 16 bits so the in-memory sample equals what a reload gives.
pub fn synth_sequence(cfg: &SynthConfig, seed: u64, index: usize) -> Result<(ManifestEntry, SequenceSample)> {
    let seq_seed = Rng::with_stream(seed, index as u64).next_u64();
    let mut rng = Rng::new(seq_seed);
    let motion = if cfg.integer_shift {
        Motion::axis(&mut rng, cfg.max_shift.round() as usize)
    } else {
        Motion::random(&mut rng, cfg.max_shift)
    };
    let params = match cfg.noise {
        Some(p) => p,
        None => NoiseParams::sample(&mut rng),
    };
    let clean = quantize16(&generate_sequence(&mut rng, cfg.size, cfg.size, cfg.tau, motion)?);
    let sample = synthesize_pair(&clean, params, &mut rng)?;
    let entry = ManifestEntry {
        name: format!("seq_{index:04}"),
        seed: seq_seed,
        params,
        motion,
    };
    Ok((entry, sample))
}

pub fn frame_name(k: usize) -> String {
    format!("frame_{k:02}.pgm")
}

fn write_sequence(dir: &Path, sample: &SequenceSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    let srgb = crate::noise::gamma_correct(&sample.clean);
    for k in 0..sample.frames() {
        write_pgm(&dir.join(frame_name(k)), &SequenceSample::frame(&srgb, k), 65535)?;
    }
    pxt::write(&dir.join("noisy.pxt"), &sample.noisy)?;
    fs::write(
        dir.join("noise.txt"),
        format!("sigma_s={}\nsigma_r={}\n", sample.params.sigma_s, sample.params.sigma_r),
    )?;
    Ok(())
}

/// Writes `cfg.count` sequences and the manifest under `out`.
pub fn synth_dataset(out: &Path, cfg: &SynthConfig, seed: u64) -> Result<Vec<ManifestEntry>> {
    if cfg.count == 0 || cfg.size == 0 {
        return Err(Error::Config("count and size must be positive".into()));
    }
    fs::create_dir_all(out)?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut entries = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let (e, sample) = synth_sequence(cfg, seed, i)?;
        write_sequence(&out.join(&e.name), &sample)?;
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.name, e.seed, e.params.sigma_s, e.params.sigma_r, e.motion.du, e.motion.dv
        ));
        entries.push(e);
    }
    fs::write(out.join(MANIFEST), manifest)?;
    Ok(entries)
}

fn parse_noise_file(path: &Path) -> Result<NoiseParams> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound { path: path.to_path_buf() },
        _ => e.into(),
    })?;
    let (mut s, mut r) = (None, None);
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() {
            let bad = |m: &str| Error::Parse {
                path: path.to_path_buf(),
                offset,
                message: m.to_string(),
            };
            let (k, v) = t.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("not a number"))?;
            match k.trim() {
                "sigma_s" => s = Some(v),
                "sigma_r" => r = Some(v),
                _ => return Err(bad("unknown key")),
            }
        }
        offset += line.len() as u64;
    }
    match (s, r) {
        (Some(s), Some(r)) => NoiseParams::new(s, r),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            offset,
            message: "sigma_s and sigma_r are required".into(),
        }),
    }
}

/// Loads `seq_XXXX/`: clean frames (linearized), noisy frames and noise
/// parameters.
pub fn load_sequence(dir: &Path) -> Result<SequenceSample> {
    let mut frames = Vec::new();
    for k in 0.. {
        let p = dir.join(frame_name(k));
        if !p.exists() {
            break;
        }
        frames.push(load_image(&p)?);
    }
    if frames.is_empty() {
        return Err(Error::NotFound { path: dir.join(frame_name(0)) });
    }
    let refs: Vec<Tensor> = frames
        .iter()
        .map(|f| {
            let s = f.shape();
            f.clone().reshape(&[1, s[0], s[1]])
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = refs.iter().collect();
    let clean = inverse_gamma(&Tensor::concat(&refs)?);
    let noisy = pxt::read(&dir.join("noisy.pxt"))?;
    let params = parse_noise_file(&dir.join("noise.txt"))?;
    SequenceSample::new(clean, noisy, params)
}

/// Sequence directories listed in the manifest, in order.
pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound { path: path.clone() },
        _ => e.into(),
    })?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let t = line.trim();
        let bad = |m: &str| Error::Parse {
            path: path.clone(),
            offset,
            message: m.to_string(),
        };
        if i == 0 {
            if t != MANIFEST_HEADER {
                return Err(bad("unexpected manifest header"));
            }
        } else if !t.is_empty() {
            let f: Vec<&str> = t.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("not a number"));
            out.push(ManifestEntry {
                name: f[0].to_string(),
                seed: f[1].parse().map_err(|_| bad("bad seed"))?,
                params: NoiseParams::new(num(f[2])?, num(f[3])?)?,
                motion: Motion { du: num(f[4])?, dv: num(f[5])? },
            });
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

/// All sequences of a dataset directory with their manifest entries.
pub fn load_dataset(root: &Path) -> Result<Vec<(ManifestEntry, SequenceSample)>> {
    read_manifest(root)?
        .into_iter()
        .map(|e| {
            let s = load_sequence(&root.join(&e.name))?;
            Ok((e, s))
        })
        .collect()
}

pub fn sequence_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(bytes: &[u8]) -> Result<Tensor> {
        read_pgm_from(bytes, Path::new("mem.pgm"))
    }

    #[test]
    fn pgm_examples() {
        let mut b = b"P5\n2 2\n255\n".to_vec();
        b.extend([0, 128, 255, 64]);
        let t = pgm(&b).unwrap();
        let want = [0.0, 0.50196, 1.0, 0.25098];
        for (v, w) in t.data().iter().zip(want) {
            assert!((f64::from(*v) - w).abs() < 1e-5);
        }

        let mut b = b"P5 # comment\n3 1 65535\n".to_vec();
        for v in [0u16, 1, 65535] {
            b.extend(v.to_be_bytes());
        }
        let t = pgm(&b).unwrap();
        assert_eq!(t.shape(), &[1, 3]);
        assert_eq!(t.data()[1], (1.0f64 / 65535.0) as f32);
        assert_eq!(t.data()[2], 1.0);
    }

    #[test]
    fn pgm_errors() {
        assert!(matches!(pgm(b"P6\n1 1\n255\n\0"), Err(Error::BadMagic { .. })));
        assert!(matches!(pgm(b"P5\n2 x\n255\n"), Err(Error::Parse { offset: 5, .. })));
        assert!(matches!(pgm(b"P5\n2 2\n0\n"), Err(Error::Parse { offset: 7, .. })));
        assert!(matches!(pgm(b"P5\n2 2\n255\n\0\0"), Err(Error::Truncated { offset: 13, .. })));
        assert!(matches!(load_image(Path::new("/no/such.pgm")), Err(Error::NotFound { .. })));
    }

    #[test]
    fn pgm_round_trip() {
        let mut rng = Rng::new(1);
        let img = Tensor::<f32>::uniform(&mut rng, &[7, 5], 0.0, 1.0).unwrap();
        for maxval in [255u16, 65535] {
            let mut buf = Vec::new();
            write_pgm_to(&mut buf, &img, maxval).unwrap();
            let back = pgm(&buf).unwrap();
            assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / f64::from(maxval) + 1e-7);
            let mut again = Vec::new();
            write_pgm_to(&mut again, &back, maxval).unwrap();
            assert_eq!(again, buf);
        }
        let mut buf = Vec::new();
        write_pgm_to(&mut buf, &img, 65535).unwrap();
        assert_eq!(pgm(&buf).unwrap(), quantize16(&img));
    }

    #[test]
    fn render_is_exact_motion() {
        let mut rng = Rng::new(2);
        let tex = Texture::random(&mut rng, 16, 16, 20.0);
        let seq = render_sequence(&tex, 16, 16, 2, Motion { du: 0.0, dv: 3.0 }).unwrap();
        for y in 0..16 {
            for x in 3..16 {
                assert_eq!(seq.get(&[3, y, x - 3]).unwrap(), seq.get(&[2, y, x]).unwrap());
            }
        }
        assert!(seq.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synth_pair_cases() {
        let mut rng = Rng::new(3);
        let clean = generate_sequence(&mut rng, 8, 8, 1, Motion::default()).unwrap();
        let s = synthesize_pair(&clean, NoiseParams::new(0.0, 0.0).unwrap(), &mut rng).unwrap();
        assert_eq!(s.noisy, s.clean);
        assert_eq!(s.clean, inverse_gamma(&clean));
        let p = NoiseParams::homoscedastic(0.1).unwrap();
        let a = synthesize_pair(&clean, p, &mut Rng::new(9)).unwrap();
        let b = synthesize_pair(&clean, p, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.noisy, a.clean);
    }

    #[test]
    fn patches() {
        let ramp = Tensor::<f32>::from_fn(&[3, 20, 20], |i| (i[1] * 100 + i[2]) as f32).unwrap();
        let seq = SequenceSample::new(ramp.clone(), ramp.clone(), NoiseParams::new(0.0, 0.0).unwrap()).unwrap();
        let mut rng = Rng::new(4);
        let same = extract_patches(&seq, 20, &mut rng).unwrap();
        assert_eq!(same, seq);
        for _ in 0..20 {
            let p = extract_patches(&seq, 6, &mut rng).unwrap();
            let c = p.clean.data();
            assert_eq!(c[0], c[36]);
            assert_eq!(c[0], c[72]);
            assert_eq!(p.noisy, p.clean);
        }
        assert!(extract_patches(&seq, 21, &mut rng).is_err());
    }

    #[test]
    fn patch_offsets_cover_everything() {
        let ramp = Tensor::<f32>::from_fn(&[1, 64, 64], |i| (i[1] * 64 + i[2]) as f32).unwrap();
        let seq = SequenceSample::new(ramp.clone(), ramp, NoiseParams::new(0.0, 0.0).unwrap()).unwrap();
        let mut seen = vec![false; 17 * 17];
        let mut rng = Rng::new(5);
        for _ in 0..10_000 {
            let p = extract_patches(&seq, 48, &mut rng).unwrap();
            let v = p.clean.data()[0] as usize;
            seen[(v / 64) * 17 + v % 64] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { count: 3, size: 16, ..SynthConfig::default() };
        let entries = synth_dataset(dir.path(), &cfg, 7).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), entries);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (i, (e, s)) in loaded.iter().enumerate() {
            let (e2, s2) = synth_sequence(&cfg, 7, i).unwrap();
            assert_eq!(e, &e2);
            assert_eq!(s.frames(), 5);
            assert_eq!(s.noisy, s2.noisy);
            assert!(s.clean.max_abs_diff(&s2.clean).unwrap() < 1e-6);
        }
        assert!(matches!(load_sequence(&dir.path().join("nope")), Err(Error::NotFound { .. })));
    }
}
