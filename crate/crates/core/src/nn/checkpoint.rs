//! `PXC1` checkpoints.
//!
//! Layout (little-endian): magic `PXC1`; `f64` width_mult; `u32` n; `u32` d;
//! `u32` tau; `u8` blind; `f64` offset_scale; `u32` variant code; `u8`
//! normalize_weights; `d` x `u32` grid extents; `u64` iteration; `u32`
//! tensor count; then every parameter tensor in `PXT1` framing, in
//! [`PanModel::params`] order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::{ModelConfig, PanModel, Variant};
use crate::pxt::{self, Cursor};

pub const MAGIC: &[u8; 4] = b"PXC1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: PanModel,
    pub iteration: u64,
}

pub fn write_to<W: Write>(w: &mut W, model: &PanModel, iteration: u64) -> std::io::Result<()> {
    let c = model.config();
    w.write_all(MAGIC)?;
    w.write_all(&c.width_mult.to_le_bytes())?;
    w.write_all(&(model.grid().len() as u32).to_le_bytes())?;
    w.write_all(&(c.dim() as u32).to_le_bytes())?;
    w.write_all(&(c.tau as u32).to_le_bytes())?;
    w.write_all(&[u8::from(c.blind)])?;
    w.write_all(&c.offset_scale.to_le_bytes())?;
    w.write_all(&c.variant.code().to_le_bytes())?;
    w.write_all(&[u8::from(c.normalize_weights)])?;
    for &e in &c.extents {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    w.write_all(&iteration.to_le_bytes())?;
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        pxt::write_to(w, p)?;
    }
    Ok(())
}

pub fn to_bytes(model: &PanModel, iteration: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    write_to(&mut buf, model, iteration).expect("writing to a Vec cannot fail");
    buf
}

pub fn save(path: &Path, model: &PanModel, iteration: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, model, iteration)?;
    w.flush()?;
    Ok(())
}

fn flag<R: Read>(c: &mut Cursor<R>) -> Result<bool> {
    let at = c.pos;
    match c.exact::<1>()?[0] {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(c.parse_error(at, format!("flag byte {b} is not 0 or 1"))),
    }
}

fn f64_le<R: Read>(c: &mut Cursor<R>) -> Result<f64> {
    Ok(f64::from_le_bytes(c.exact::<8>()?))
}

pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Checkpoint> {
    let mut c = Cursor::new(r, path);
    if &c.exact::<4>()? != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "PXC1",
        });
    }
    let width_mult = f64_le(&mut c)?;
    let n_at = c.pos;
    let n = c.u32()? as usize;
    let d_at = c.pos;
    let d = c.u32()? as usize;
    if !(d == 2 || d == 3) {
        return Err(c.parse_error(d_at, format!("sampling dimension {d}")));
    }
    let tau = c.u32()? as usize;
    let blind = flag(&mut c)?;
    let offset_scale = f64_le(&mut c)?;
    let v_at = c.pos;
    let code = c.u32()?;
    let variant = Variant::from_code(code).ok_or_else(|| c.parse_error(v_at, format!("unknown variant {code}")))?;
    let normalize_weights = flag(&mut c)?;
    let mut extents = Vec::with_capacity(d);
    for _ in 0..d {
        extents.push(c.u32()? as usize);
    }
    if extents.iter().product::<usize>() != n {
        return Err(c.parse_error(n_at, format!("n = {n} disagrees with extents {extents:?}")));
    }
    let iteration = c.u64()?;
    let config = ModelConfig {
        variant,
        width_mult,
        extents,
        tau,
        blind,
        offset_scale,
        normalize_weights,
    };
    let mut model = PanModel::zeros(config).map_err(|e| c.parse_error(4, e.to_string()))?;
    let count_at = c.pos;
    let count = c.u32()? as usize;
    let mut slots = model.params_mut();
    if count != slots.len() {
        return Err(c.parse_error(
            count_at,
            format!("{count} tensors stored, architecture has {}", slots.len()),
        ));
    }
    for slot in slots.iter_mut() {
        let at = c.pos;
        let t = c.tensor()?;
        if t.shape() != slot.shape() {
            return Err(c.parse_error(
                at,
                format!("tensor shape {:?}, expected {:?}", t.shape(), slot.shape()),
            ));
        }
        **slot = t;
    }
    Ok(Checkpoint { model, iteration })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    read_from(BufReader::new(pxt::open(path)?), path)
}
