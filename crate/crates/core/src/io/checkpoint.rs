//! Named-tensor archive.
//!
//! Layout (little-endian): magic `FCFP`, `u32` version (1), `u32` tensor
//! count, then per tensor: `u16` name length, UTF-8 name, `u8` dtype
//! (0 = f32, 1 = f64), `u8` rank, `rank × u32` dims, raw payload.

use std::collections::BTreeSet;
use std::path::Path;

use autodiff::{DType, Element, ParamSet, Tensor};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FCFP";
pub const VERSION: u32 = 1;

/// One archived tensor; the payload stays in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl Entry {
    pub fn from_tensor<T: Element>(name: &str, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.data().len() * T::DTYPE.size_of());
        T::to_le_bytes_vec(t.data(), &mut payload);
        Entry {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            payload,
        }
    }

    pub fn to_tensor<T: Element>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` is {} but {} was requested",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        Ok(Tensor::new(self.shape.clone(), T::from_le_bytes_slice(&self.payload))?)
    }
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {}", e.name)))?;
        let rank = u8::try_from(e.shape.len()).map_err(|_| Error::Checkpoint(format!("rank too large: {}", e.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.dtype.code());
        out.push(rank);
        for &d in &e.shape {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("extent too large: {}", e.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&e.payload);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let code = r.u8("dtype")?;
        let dtype = DType::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown dtype {code} in `{name}`")))?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        if shape.contains(&0) {
            return Err(Error::Checkpoint(format!("zero extent in `{name}`")));
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * dtype.size_of(), "payload")?.to_vec();
        entries.push(Entry {
            name,
            dtype,
            shape,
            payload,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn params_to_bytes<T: Element>(params: &ParamSet<T>) -> Result<Vec<u8>> {
    let entries: Vec<Entry> = params.iter().map(|p| Entry::from_tensor(&p.name, &p.value)).collect();
    encode(&entries)
}

/// Replaces every parameter value from an archive whose name set, dtypes
/// and shapes match the registry exactly.
pub fn load_into<T: Element>(params: &mut ParamSet<T>, bytes: &[u8]) -> Result<()> {
    let entries = decode(bytes)?;
    let have: BTreeSet<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    if have.len() != entries.len() {
        return Err(Error::Checkpoint("duplicate tensor names".into()));
    }
    let want: BTreeSet<&str> = params.iter().map(|p| p.name.as_str()).collect();
    let missing: Vec<&str> = want.difference(&have).copied().collect();
    let extra: Vec<&str> = have.difference(&want).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Checkpoint(format!(
            "tensor names differ from the model: missing [{}], unexpected [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut values = Vec::with_capacity(entries.len());
    for e in &entries {
        let id = params.find(&e.name).unwrap();
        let t = e.to_tensor::<T>()?;
        if t.shape() != params.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "shape of `{}` is {:?}, model expects {:?}",
                e.name,
                t.shape(),
                params.value(id).shape()
            )));
        }
        values.push((id, t));
    }
    for (id, t) in values {
        params.get_mut(id).value = t;
    }
    Ok(())
}

pub fn save<T: Element>(params: &ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, params_to_bytes(params)?)?;
    Ok(())
}

pub fn load<T: Element>(params: &mut ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    load_into(params, &std::fs::read(path)?)
}
