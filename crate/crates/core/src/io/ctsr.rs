//! CTSR tensor files.
//!
//! Layout: magic `CTSR`, u32 version (1), u32 rank, `rank` u64 extents, then
//! the row-major payload as little-endian `f32`. All integers little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel_of, Tensor};

pub const MAGIC: &[u8; 4] = b"CTSR";
pub const VERSION: u32 = 1;
/// Largest rank accepted when decoding.
pub const MAX_RANK: usize = 8;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("CTSR", format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("CTSR", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            "CTSR",
            format!("unsupported version {version}"),
        ));
    }
    let rank = r.u32()? as usize;
    if rank > MAX_RANK {
        return Err(Error::format(
            "CTSR",
            format!("rank {rank} exceeds {MAX_RANK}"),
        ));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = r.u64()?;
        shape.push(usize::try_from(d).map_err(|_| Error::format("CTSR", "extent too large"))?);
    }
    let numel = numel_of(&shape).map_err(|_| Error::format("CTSR", "extent product overflows"))?;
    let payload = bytes.len() - r.pos;
    if numel.checked_mul(4) != Some(payload) {
        return Err(Error::format(
            "CTSR",
            format!("shape {shape:?} needs {numel} values, payload has {payload} bytes"),
        ));
    }
    let data = r
        .take(payload)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(&shape, data)
}

pub fn read(path: &Path) -> Result<Tensor> {
    decode(&super::read_bytes(path)?).map_err(|e| match e {
        Error::Format { format, reason } => Error::Format {
            format,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    super::write_bytes(path, &encode(t))
}

/// Round a tensor to the precision CTSR stores.
pub fn quantize(t: &Tensor) -> Tensor {
    Tensor::new(
        t.shape(),
        t.data().iter().map(|&v| v as f32 as f64).collect(),
    )
    .expect("same shape")
}
