//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "KWSCKPT\0"
//! version    u32
//! config     u64 length + UTF-8 text (the flat key=value run config)
//! n_tensors  u64
//! table      per tensor: u16 name length, name bytes, u8 ndim,
//!            u64 dims…, u64 offset (in elements, into the payload)
//! payload    u64 element count, then f64 little-endian values
//! ```
//!
//! Round-trips are bit-exact: the payload is raw f64 bits. The shape table is
//! validated on load (offsets in order, sizes covering the payload exactly).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelError, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"KWSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Write parameters plus an arbitrary config text block.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    config_text: &str,
) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config_text.len() as u64).to_le_bytes())?;
    w.write_all(config_text.as_bytes())?;

    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut offset: u64 = 0;
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += tensor.numel() as u64;
    }

    w.write_all(&offset.to_le_bytes())?;
    for (_, tensor) in params.iter() {
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_buf<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>, ModelError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, ModelError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Load parameters and the stored config text.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, String), ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact_buf(&mut r, 8)?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let config_len = read_u64(&mut r)? as usize;
    let config_text = String::from_utf8(read_exact_buf(&mut r, config_len)?)
        .map_err(|e| ModelError::BadShapeTable(format!("config block not UTF-8: {e}")))?;

    let n_tensors = read_u64(&mut r)? as usize;
    let mut table: Vec<(String, Vec<usize>, u64)> = Vec::with_capacity(n_tensors);
    let mut expected_offset: u64 = 0;
    for _ in 0..n_tensors {
        let name_len = read_u16(&mut r)? as usize;
        let name = String::from_utf8(read_exact_buf(&mut r, name_len)?)
            .map_err(|e| ModelError::BadShapeTable(format!("name not UTF-8: {e}")))?;
        let ndim = read_exact_buf(&mut r, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(ModelError::BadShapeTable(format!(
                "tensor '{name}' has zero dimension in {shape:?}"
            )));
        }
        let offset = read_u64(&mut r)?;
        if offset != expected_offset {
            return Err(ModelError::BadShapeTable(format!(
                "tensor '{name}' offset {offset} does not follow previous end {expected_offset}"
            )));
        }
        expected_offset += shape.iter().product::<usize>() as u64;
        table.push((name, shape, offset));
    }

    let payload_len = read_u64(&mut r)?;
    if payload_len != expected_offset {
        return Err(ModelError::BadShapeTable(format!(
            "payload holds {payload_len} elements but shape table implies {expected_offset}"
        )));
    }
    let mut payload = vec![0.0f64; payload_len as usize];
    let mut buf = [0u8; 8];
    for v in payload.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }

    let mut params = ModelParams::default();
    for (name, shape, offset) in table {
        let numel: usize = shape.iter().product();
        let start = offset as usize;
        let data = payload[start..start + numel].to_vec();
        params.insert(name, Tensor::new(shape, data));
    }
    Ok((params, config_text))
}
