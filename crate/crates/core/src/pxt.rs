//! `PXT1` raw tensor files: the 4-byte magic `PXT1`, a little-endian `u32`
//! rank, `rank` little-endian `u32` dimensions, then the row-major payload as
//! little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PXT1";
const MAX_RANK: u32 = 16;

pub fn write_to<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    write_to(&mut buf, t).expect("writing to a Vec cannot fail");
    buf
}

/// Byte-counting reader so errors can name the failing offset.
pub(crate) struct Cursor<R> {
    inner: R,
    pub pos: u64,
    path: std::path::PathBuf,
}

impl<R: Read> Cursor<R> {
    pub fn new(inner: R, path: &Path) -> Self {
        Cursor {
            inner,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    pub fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        path: self.path.clone(),
                        offset: self.pos + read as u64,
                    })
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.pos += buf.len() as u64;
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact::<4>()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact::<8>()?))
    }

    pub fn parse_error(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            offset,
            message: message.into(),
        }
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let start = self.pos;
        if &self.exact::<4>()? != MAGIC {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected: "PXT1",
            });
        }
        let rank = self.u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(self.parse_error(start + 4, format!("unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u32()?;
            if d == 0 {
                return Err(self.parse_error(at, "zero dimension"));
            }
            shape.push(d as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| self.parse_error(start + 8, "dimension product overflows"))?;
        let mut bytes = vec![0u8; len * 4];
        self.fill(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(&shape, data)
    }
}

pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Tensor> {
    Cursor::new(r, path).tensor()
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor> {
    let f = open(path)?;
    read_from(BufReader::new(f), path)
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound {
            path: path.to_path_buf(),
        },
        _ => e.into(),
    })
}
