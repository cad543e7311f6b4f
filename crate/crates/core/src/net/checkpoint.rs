//! Flat binary checkpoint format.
//!
//! ```text
//! b"IALSEG01"
//! repeated until EOF:
//!   u32  name length      (little-endian)
//!   [u8] name             (UTF-8)
//!   u8   dtype            (0 = f32, 1 = f64)
//!   u32  rank
//!   u64  dims[rank]
//!   payload               (little-endian scalars, row-major)
//! ```

use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"IALSEG01";

/// A tensor read from a checkpoint in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    fn to<T: Real>(&self) -> Tensor<T> {
        fn convert<S: Real, T: Real>(t: &Tensor<S>) -> Tensor<T> {
            if S::DTYPE != T::DTYPE {
                return t.cast();
            }
            // same precision: move the raw bytes so NaN payloads survive
            let mut bytes = Vec::with_capacity(t.len() * S::BYTES);
            t.data().iter().for_each(|&v| v.write_le(&mut bytes));
            let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
            Tensor::from_vec(t.shape(), data).expect("same shape")
        }
        match self {
            StoredTensor::F32(t) => convert(t),
            StoredTensor::F64(t) => convert(t),
        }
    }
}

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for p in store.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(T::DTYPE);
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Real>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let count: usize = shape.iter().product();
        let bytes = self.take(count.checked_mul(T::BYTES).ok_or_else(|| {
            Error::Checkpoint("tensor size overflow".into())
        })?)?;
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let dtype = r.take(1)?[0];
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {rank} for `{name}`")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let tensor = match dtype {
            0 => StoredTensor::F32(r.tensor(&shape)?),
            1 => StoredTensor::F64(r.tensor(&shape)?),
            other => return Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
        };
        records.push((name, tensor));
    }
    Ok(records)
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store))?;
    Ok(())
}

/// Overwrites every parameter of `store` from the checkpoint records.
/// Names and shapes must match exactly; precision is converted if needed.
pub fn restore<T: Real>(store: &mut ParamStore<T>, records: &[(String, StoredTensor)]) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, network has {}",
            records.len(),
            store.len()
        )));
    }
    for (name, tensor) in records {
        let slot = store
            .by_name_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}`: stored shape {:?}, expected {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor.to();
    }
    Ok(())
}

pub fn load_into<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    restore(store, &decode(&bytes)?)
}
