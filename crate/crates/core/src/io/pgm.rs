//! Binary (P5) PGM label maps with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// Largest accepted width or height.
pub const MAX_SIDE: usize = 1 << 14;

pub fn encode(map: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend_from_slice(map.data());
    out
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Parse the next header integer, skipping whitespace and `#` comments.
fn header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(&b) if is_space(b) => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::format("PGM", "truncated header")),
        }
    }
    let start = *pos;
    let mut value: usize = 0;
    while let Some(&b) = bytes.get(*pos).filter(|b| b.is_ascii_digit()) {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as usize))
            .filter(|&v| v <= MAX_SIDE)
            .ok_or_else(|| Error::format("PGM", "header value too large"))?;
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::format("PGM", "expected a decimal header field"));
    }
    Ok(value)
}

pub fn decode(bytes: &[u8]) -> Result<LabelMap> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::format("PGM", "not a binary P5 file"));
    }
    let mut pos = 2;
    let width = header_int(bytes, &mut pos)?;
    let height = header_int(bytes, &mut pos)?;
    let maxval = header_int(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            "PGM",
            format!("maxval {maxval} is not 8-bit"),
        ));
    }
    if !bytes.get(pos).is_some_and(|&b| is_space(b)) {
        return Err(Error::format("PGM", "missing whitespace after header"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::format(
            "PGM",
            format!(
                "{width}×{height} image needs {} bytes, found {}",
                width * height,
                payload.len()
            ),
        ));
    }
    LabelMap::new(height, width, payload.to_vec())
}

pub fn read(path: &Path) -> Result<LabelMap> {
    decode(&super::read_bytes(path)?).map_err(|e| match e {
        Error::Format { format, reason } => Error::Format {
            format,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

pub fn write(path: &Path, map: &LabelMap) -> Result<()> {
    super::write_bytes(path, &encode(map))
}
