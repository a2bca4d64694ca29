//! Binary tensor-record files.
//!
//! Layout, all integers little-endian:
//! `"CGAF"`, version `u32`, record count `u32`, then per record: name length
//! `u32`, UTF-8 name, dtype `u8` (0 = f32, 1 = f64), ndim `u8`, dims as `u64`,
//! raw element data.

use std::fs;
use std::path::Path;

use diffcore::{AdamState, DType, Elem};

use crate::error::{Error, Result};
use crate::layers::ParamSet;

pub const MAGIC: &[u8; 4] = b"CGAF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Record {
    pub fn new<T: Elem>(name: impl Into<String>, dims: &[usize], values: &[T]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        Record {
            name: name.into(),
            dtype: T::DTYPE,
            dims: dims.to_vec(),
            bytes: T::to_le_bytes_vec(values),
        }
    }

    pub fn values<T: Elem>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "record `{}` holds {:?}, expected {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        Ok(self
            .bytes
            .chunks_exact(self.dtype.size_in_bytes())
            .map(T::from_le_chunk)
            .collect())
    }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype.code());
        out.push(r.dims.len() as u8);
        for &d in &r.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&r.bytes);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str, record: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated {what} in {record} at byte {}: need {n}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str, record: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what, record)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic", "header")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = cur.u32("version", "header")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32("record count", "header")?;
    let mut records = Vec::new();
    for i in 0..count {
        let label = format!("record #{i}");
        let name_len = cur.u32("name length", &label)? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name", &label)?)
            .map_err(|_| Error::Checkpoint(format!("{label}: name is not UTF-8")))?
            .to_string();
        let label = format!("record #{i} `{name}`");
        let head = cur.take(2, "dtype/ndim", &label)?;
        let dtype = DType::from_code(head[0])
            .ok_or_else(|| Error::Checkpoint(format!("{label}: unknown dtype code {}", head[0])))?;
        let ndim = head[1] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = u64::from_le_bytes(cur.take(8, "dims", &label)?.try_into().expect("8 bytes"));
            dims.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("{label}: dim {d} too large")))?);
        }
        let size = dims
            .iter()
            .try_fold(dtype.size_in_bytes(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{label}: size overflows")))?;
        let data = cur.take(size, "element data", &label)?.to_vec();
        records.push(Record { name, dtype, dims, bytes: data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - cur.pos
        )));
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    fs::write(path, encode(records)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Looks a record up by name.
pub fn find<'a>(records: &'a [Record], name: &str) -> Result<&'a Record> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))
}

/// Parameters and running statistics under `prefix/`.
pub fn param_records<T: Elem>(prefix: &str, ps: &ParamSet<T>) -> Vec<Record> {
    ps.records()
        .into_iter()
        .map(|(name, dims, values)| Record::new(format!("{prefix}/{name}"), &dims, &values))
        .collect()
}

pub fn load_params<T: Elem>(prefix: &str, ps: &mut ParamSet<T>, records: &[Record]) -> Result<()> {
    let lead = format!("{prefix}/");
    let mut arrays = Vec::new();
    for r in records.iter().filter(|r| r.name.starts_with(&lead)) {
        arrays.push((r.name[lead.len()..].to_string(), r.dims.clone(), r.values::<T>()?));
    }
    ps.load_records(&arrays)
}

/// Adam moments and step count under `prefix/`.
pub fn adam_records<T: Elem>(prefix: &str, adam: &AdamState<T>) -> Vec<Record> {
    let mut out = vec![Record::new(format!("{prefix}/step"), &[1], &[adam.step as f64])];
    for (i, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
        out.push(Record::new(format!("{prefix}/m{i}"), &[m.len()], m));
        out.push(Record::new(format!("{prefix}/v{i}"), &[v.len()], v));
    }
    out
}

pub fn load_adam<T: Elem>(prefix: &str, adam: &mut AdamState<T>, records: &[Record]) -> Result<()> {
    let step = find(records, &format!("{prefix}/step"))?.values::<f64>()?;
    adam.step = step[0] as u64;
    for i in 0..adam.m.len() {
        for (slot, key) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
            let vals = find(records, &format!("{prefix}/{key}{i}"))?.values::<T>()?;
            if vals.len() != slot.len() {
                return Err(Error::Checkpoint(format!("{prefix}/{key}{i}: size mismatch")));
            }
            *slot = vals;
        }
    }
    Ok(())
}

/// A `u64` split into four exactly representable `f64` chunks.
pub fn u64_record(name: &str, v: u64) -> Record {
    let parts: Vec<f64> = (0..4).map(|i| ((v >> (16 * i)) & 0xFFFF) as f64).collect();
    Record::new(name, &[4], &parts)
}

pub fn read_u64(records: &[Record], name: &str) -> Result<u64> {
    let parts = find(records, name)?.values::<f64>()?;
    if parts.len() != 4 || parts.iter().any(|&p| !(0.0..65536.0).contains(&p) || p.fract() != 0.0) {
        return Err(Error::Checkpoint(format!("`{name}` is not an encoded u64")));
    }
    Ok(parts.iter().enumerate().fold(0u64, |acc, (i, &p)| acc | ((p as u64) << (16 * i))))
}
