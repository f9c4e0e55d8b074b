//! Named-tensor checkpoint archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CGCK" | version u16 | kind (u16 len + utf8)
//!        | meta count u32 | (key: u16 len + utf8, value: u32 len + utf8) × count
//!        | tensor count u32 | (name: u16 len + utf8, dtype u8, rank u8, extents u32 × rank, data) × count
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl NamedTensor {
    pub fn from_tensor<T: Element>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size());
        t.data().iter().for_each(|v| v.write_le(&mut bytes));
        NamedTensor {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    pub fn to_tensor<T: Element>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match self.dtype {
            DType::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|b| T::lit(f32::read_le(b) as f64))
                .collect(),
            DType::F64 => self
                .bytes
                .chunks_exact(8)
                .map(|b| T::lit(f64::read_le(b)))
                .collect(),
            DType::U8 => self.bytes.iter().map(|&b| T::lit(b as f64)).collect(),
        };
        Tensor::new(&self.shape, data).map_err(|e| Error::Checkpoint(format!("{}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn push<T: Element>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push(NamedTensor::from_tensor(name, t));
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?
            .to_tensor()
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key}")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let s = self.meta_str(key)?;
        s.parse()
            .map_err(|_| Error::Checkpoint(format!("metadata {key}={s} is malformed")))
    }

    /// Fails unless the stored tensor names are exactly `expected`.
    pub fn expect_names<'a>(
        &self,
        expected_kind: &str,
        expected: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        let want: BTreeSet<&str> = expected.into_iter().collect();
        let have: BTreeSet<&str> = self.tensors.iter().map(|t| t.name.as_str()).collect();
        let missing: Vec<&str> = want.difference(&have).copied().collect();
        let extra: Vec<&str> = have.difference(&want).copied().collect();
        if self.kind != expected_kind || !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Checkpoint(format!(
                "expected a {expected_kind} checkpoint, found {}; missing: [{}]; extra: [{}]",
                self.kind,
                summarize(&missing),
                summarize(&extra)
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_short(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_short(&mut out, k);
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_short(&mut out, &t.name);
            out.push(t.dtype as u8);
            out.push(t.shape.len() as u8);
            for &e in &t.shape {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected CGCK".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unknown checkpoint version {version}"
            )));
        }
        let kind = r.short_str()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.short_str()?;
            let n = r.u32()? as usize;
            let v = utf8(r.take(n)?)?;
            meta.insert(k, v);
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.short_str()?;
            let code = r.u8()?;
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype {code}")))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = r.take(n * dtype.size())?.to_vec();
            tensors.push(NamedTensor {
                name,
                dtype,
                shape,
                bytes: data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn summarize(names: &[&str]) -> String {
    const SHOW: usize = 8;
    let mut s = names
        .iter()
        .take(SHOW)
        .copied()
        .collect::<Vec<_>>()
        .join(", ");
    if names.len() > SHOW {
        s.push_str(&format!(", … {} more", names.len() - SHOW));
    }
    s
}

fn put_short(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn utf8(b: &[u8]) -> Result<String> {
    String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8 string".into()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn short_str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        utf8(self.take(n)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let mut c = Checkpoint::new("generator");
        c.meta.insert("step".into(), "12".into());
        c.push(
            "a",
            &Tensor::<f32>::from_f64(&[2, 2], &[1.5, -2.0, 0.1, 3.0]).unwrap(),
        );
        c.push("b", &Tensor::<f64>::from_f64(&[1], &[0.1]).unwrap());
        let bytes = c.encode();
        let d = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.meta_parse::<u64>("step").unwrap(), 12);
        assert_eq!(d.tensor::<f64>("b").unwrap().data(), &[0.1]);
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(d.expect_names("generator", ["a", "b"]).is_ok());
        let msg = d
            .expect_names("discriminator", ["a", "c"])
            .unwrap_err()
            .to_string();
        assert!(
            msg.contains("missing: [c]") && msg.contains("extra: [b]"),
            "{msg}"
        );
    }
}
