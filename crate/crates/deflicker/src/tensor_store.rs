//! A small binary container for named `f64` tensors plus a JSON metadata
//! blob. Used for model checkpoints and feature-extractor weight files.
//!
//! Layout (all integers little-endian):
//! `"DFTS"` magic, `u32` version, `u64` metadata length, metadata JSON,
//! `u32` tensor count, then per tensor: `u32` name length, name bytes,
//! `u32` rank, `u64` per dimension, and the row-major `f64` data.
//!
//! Tensors are written in `BTreeMap` order, so identical contents produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DFTS";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_tensor_file(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &BTreeMap<String, ArrayD<f64>>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let werr = |e| Error::io(path, e);

    out.write_all(MAGIC).map_err(werr)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(werr)?;
    let meta_bytes = serde_json::to_vec(meta).expect("metadata serializes");
    out.write_all(&(meta_bytes.len() as u64).to_le_bytes())
        .map_err(werr)?;
    out.write_all(&meta_bytes).map_err(werr)?;

    out.write_all(&(tensors.len() as u32).to_le_bytes())
        .map_err(werr)?;
    for (name, tensor) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())
            .map_err(werr)?;
        out.write_all(name.as_bytes()).map_err(werr)?;
        out.write_all(&(tensor.ndim() as u32).to_le_bytes())
            .map_err(werr)?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes()).map_err(werr)?;
        }
        for &v in tensor.as_standard_layout().iter() {
            out.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    out.flush().map_err(werr)
}

pub fn read_tensor_file(
    path: &Path,
) -> Result<(serde_json::Value, BTreeMap<String, ArrayD<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let rerr = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(rerr)?;
    if &magic != MAGIC {
        return Err(Error::Contract(format!(
            "{} is not a tensor file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut input, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            got: version,
            supported: FORMAT_VERSION,
        });
    }

    let meta_len = read_u64(&mut input, path)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    input.read_exact(&mut meta_bytes).map_err(rerr)?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Contract(format!("corrupt metadata in {}: {e}", path.display())))?;

    let count = read_u32(&mut input, path)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        input.read_exact(&mut name_bytes).map_err(rerr)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Contract(format!("non-utf8 tensor name in {}", path.display())))?;
        let rank = read_u32(&mut input, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut input, path)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0u8; len * 8];
        input.read_exact(&mut data).map_err(rerr)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| Error::Contract(format!("bad tensor shape in {}: {e}", path.display())))?;
        tensors.insert(name, tensor);
    }
    Ok((meta, tensors))
}

fn read_u32(input: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}
