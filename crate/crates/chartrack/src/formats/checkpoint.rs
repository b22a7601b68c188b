//! Model checkpoints.
//!
//! Magic `NNCK`, version `u32 = 1`, tensor count `u32`, then per tensor: name
//! length `u16`, UTF-8 name, rank `u8`, each dimension as `u32`, and the
//! values as row-major `f64`. Loading requires the same names and shapes, in
//! order, as the target model.

use std::path::Path;

use chartrack_core::nn::Parameters;

use super::{read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NNCK";
pub const VERSION: u32 = 1;

pub fn to_bytes<P: Parameters + ?Sized>(model: &P) -> Result<Vec<u8>> {
    let tensors = model.tensors();
    let mut out = Vec::with_capacity(12 + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        let name = u16::try_from(t.name.len()).map_err(|_| Error::Config(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| Error::Config(format!("rank too large: {}", t.name)))?;
        out.extend_from_slice(&name.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Overwrites `model`'s parameters from a checkpoint image.
pub fn load_bytes<P: Parameters + ?Sized>(model: &mut P, path: &Path, buf: &[u8]) -> Result<()> {
    let mut r = Reader::new(path, buf);
    if r.bytes(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic, expected NNCK"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let expected: Vec<(String, Vec<usize>)> = model.tensors().into_iter().map(|t| (t.name, t.dims)).collect();
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(r.fail(8, format!("{count} tensors, model has {}", expected.len())));
    }
    let mut values = Vec::with_capacity(model.num_params());
    for (name, dims) in &expected {
        let start = r.offset();
        let len = r.u16("name length")? as usize;
        let got = std::str::from_utf8(r.bytes(len, "name")?).map_err(|_| r.fail(start, "name is not UTF-8"))?;
        if got != name {
            return Err(r.fail(start, format!("tensor {got:?}, expected {name:?}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut got_dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            got_dims.push(r.u32("dimension")? as usize);
        }
        if &got_dims != dims {
            return Err(r.fail(start, format!("{name} has shape {got_dims:?}, expected {dims:?}")));
        }
        for _ in 0..dims.iter().product::<usize>() {
            values.push(r.f64("values")?);
        }
    }
    if r.remaining() != 0 {
        return Err(r.fail(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    model
        .load_flat(&values)
        .map_err(|e| r.fail(0, e.to_string()))
}

pub fn save<P: Parameters + ?Sized>(model: &P, path: &Path) -> Result<()> {
    write_file(path, &to_bytes(model)?)
}

pub fn load_into<P: Parameters + ?Sized>(model: &mut P, path: &Path) -> Result<()> {
    load_bytes(model, path, &read_file(path)?)
}
