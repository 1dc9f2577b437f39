//! Flat parameter checkpoints.
//!
//! Layout: a 16-byte header — magic `DFL1`, the dimension as a 64-bit
//! little-endian unsigned integer, four reserved zero bytes — followed by the
//! parameters as 64-bit little-endian floats.

use crate::error::{Error, Result};
use crate::math::ParamVector;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DFL1";
const HEADER_LEN: usize = 16;

pub fn write_checkpoint(params: &ParamVector, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    header[4..12].copy_from_slice(&(params.len() as u64).to_le_bytes());
    file.write_all(&header).map_err(|e| Error::io(&display, e))?;
    let mut body = Vec::with_capacity(params.len() * 8);
    for v in params.iter() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&body).map_err(|e| Error::io(&display, e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ParamVector> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&display, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(&display, "missing DFL1 header"));
    }
    let dim = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let expected = HEADER_LEN + dim * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            &display,
            format!("expected {expected} bytes for dimension {dim}, found {}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ParamVector(values))
}
