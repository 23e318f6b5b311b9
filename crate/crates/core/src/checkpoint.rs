//! Binary model checkpoints.
//!
//! Layout (little endian): magic `DRSNCKPT`, `u32` version, `u64` length +
//! network config JSON, `u64` tensor count, then per tensor: `u32` name
//! length, name bytes, `u8` kind code, `u8` dtype (1 = f64), `u8` rank,
//! `u64` dims, raw values.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use drsnet_tensor::{ParamKind, Tensor};

use crate::error::{Error, Result};
use crate::model::{DrsNet, NetworkConfig};
use crate::nn::Module;

pub const MAGIC: &[u8; 8] = b"DRSNCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn to_bytes(model: &DrsNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    let params = model.params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        out.extend_from_slice(&(p.name().len() as u32).to_le_bytes());
        out.extend_from_slice(p.name().as_bytes());
        out.push(p.kind().code());
        out.push(DTYPE_F64);
        let value = p.value();
        out.push(value.shape().len() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes atomically via a sibling temp file.
pub fn save(model: &DrsNet, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    let write = || -> io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(model))?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DrsNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<DrsNet> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_len = read_len(&mut r)?;
    let config_bytes = take(&mut r, config_len)?;
    let config: NetworkConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad network config: {e}")))?;
    let n = read_len(&mut r)?;
    let mut tensors = HashMap::new();
    for _ in 0..n {
        let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let name = std::str::from_utf8(take(&mut r, name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
            .to_string();
        let [kind, dtype, rank] = read_array(&mut r)?;
        let kind = ParamKind::from_code(kind).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown kind {kind}")))?;
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("{name}: unsupported dtype {dtype}")));
        }
        let shape = (0..rank).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = take(&mut r, numel.checked_mul(8).ok_or_else(truncated)?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.insert(name, (kind, Tensor::new(shape, data)?));
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
    }

    let model = DrsNet::new(config, 0)?;
    for p in model.params() {
        let (kind, value) = tensors
            .remove(p.name())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name())))?;
        if kind != p.kind() || value.shape() != p.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: stored {:?} {:?}, model expects {:?} {:?}",
                p.name(),
                kind,
                value.shape(),
                p.kind(),
                p.shape()
            )));
        }
        p.set_value(value);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(model)
}

fn truncated() -> Error {
    Error::Checkpoint("truncated file".into())
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(truncated());
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| truncated())
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_len(r: &mut &[u8]) -> Result<usize> {
    usize::try_from(u64::from_le_bytes(read_array(r)?)).map_err(|_| truncated())
}
