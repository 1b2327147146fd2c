//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PSYN" | version: u32 | header_len: u32 | header (UTF-8) | count: u32 | record*
//! record = path_len: u32 | path | dtype: u8 | rank: u32 | dims: u64*rank
//!          | byte_len: u64 | raw data
//! ```
//!
//! The header carries the model configuration as `key=value` lines so a
//! checkpoint can be rebuilt without outside knowledge.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::{Param, ParamSet};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"PSYN";
pub const FORMAT_VERSION: u32 = 1;

const MOMENT1: &str = "#adam_m";
const MOMENT2: &str = "#adam_v";
const STEP: &str = "#adam_step";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl Record {
    pub fn from_values<T: Element>(path: impl Into<String>, values: &[T], shape: &[usize]) -> Self {
        let mut data = Vec::with_capacity(values.len() * T::DTYPE.size());
        for &v in values {
            v.write_le(&mut data);
        }
        Record {
            path: path.into(),
            dtype: T::DTYPE,
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_tensor<T: Element>(path: impl Into<String>, t: &Tensor<T>) -> Self {
        Self::from_values(path, t.data(), t.shape())
    }

    pub fn from_u64(path: impl Into<String>, value: u64) -> Self {
        Record {
            path: path.into(),
            dtype: DType::U64,
            shape: Vec::new(),
            data: value.to_le_bytes().to_vec(),
        }
    }

    pub fn values<T: Element>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "{} stored as {}, requested {}",
                self.path,
                self.dtype.name(),
                T::DTYPE.name()
            )));
        }
        Ok(self.data.chunks_exact(T::DTYPE.size()).map(T::read_le).collect())
    }

    pub fn tensor<T: Element>(&self) -> Result<Tensor<T>> {
        Tensor::new(self.values()?, &self.shape)
    }

    pub fn as_u64(&self) -> Result<u64> {
        if self.dtype != DType::U64 || self.data.len() != 8 {
            return Err(Error::Checkpoint(format!("{} is not a u64 scalar", self.path)));
        }
        Ok(u64::from_le_bytes(self.data[..8].try_into().expect("8 bytes")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Checkpoint {
    pub header: String,
    pub records: Vec<Record>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn record(&self, path: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.path == path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.header);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            put_str(&mut out, &r.path);
            out.push(r.dtype.tag());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(r.data.len() as u64).to_le_bytes());
            out.extend_from_slice(&r.data);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Checkpoint("missing PSYN magic".into()));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header = c.string()?;
        let count = c.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let path = c.string()?;
            let tag = c.u8()?;
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| Error::Checkpoint(format!("{path}: unknown dtype tag {tag}")))?;
            let rank = c.u32()? as usize;
            let shape = (0..rank)
                .map(|_| c.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = c.u64()? as usize;
            let expected = shape.iter().product::<usize>() * dtype.size();
            if len != expected {
                return Err(Error::Checkpoint(format!(
                    "{path}: {len} bytes for shape {shape:?} of {}",
                    dtype.name()
                )));
            }
            let data = c.take(len)?.to_vec();
            records.push(Record {
                path,
                dtype,
                shape,
                data,
            });
        }
        if c.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - c.pos
            )));
        }
        Ok(Checkpoint { header, records })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

impl<T: Element> ParamSet<T> {
    /// Value, both Adam moments and the step count of every parameter.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.len() * 4);
        for (path, p) in self.iter() {
            let shape = p.value.shape();
            out.push(Record::from_tensor(path, &p.value));
            out.push(Record::from_values(format!("{path}{MOMENT1}"), &p.m, shape));
            out.push(Record::from_values(format!("{path}{MOMENT2}"), &p.v, shape));
            out.push(Record::from_u64(format!("{path}{STEP}"), p.step));
        }
        out
    }

    /// Rebuilds the parameters whose paths start with `prefix`.
    pub fn from_records(records: &[Record], prefix: &str) -> Result<Self> {
        let find = |path: &str| {
            records
                .iter()
                .find(|r| r.path == path)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {path}")))
        };
        let mut set = ParamSet::new();
        for r in records {
            if !r.path.starts_with(prefix) || r.path.contains('#') || r.path.contains("@") {
                continue;
            }
            let m = find(&format!("{}{MOMENT1}", r.path))?;
            let v = find(&format!("{}{MOMENT2}", r.path))?;
            let step = find(&format!("{}{STEP}", r.path))?.as_u64()?;
            set.insert_state(
                r.path.clone(),
                Param {
                    value: r.tensor()?,
                    m: m.values()?,
                    v: v.values()?,
                    step,
                },
            )?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{adam_step, AdamConfig};
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let ck = Checkpoint {
            header: "k=v".into(),
            records: vec![Record::from_values("a", &[1.0f32, 2.0], &[2])],
        };
        let bytes = ck.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn param_set_with_optimizer_state_roundtrips() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("gen/a/kernel", Tensor::from_f64(&[0.1, -0.2, 0.3], &[3]).unwrap()).unwrap();
        ps.insert("gen/b/bias", Tensor::from_f64(&[1.5], &[1]).unwrap()).unwrap();
        let grads = ps.grads(&ps.get("gen/a/kernel").unwrap().square().unwrap().sum(), false).unwrap();
        adam_step(&mut ps, &grads, &AdamConfig::default()).unwrap();
        let ck = Checkpoint {
            header: String::new(),
            records: ps.to_records(),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let restored = ParamSet::<f32>::from_records(&back.records, "gen/").unwrap();
        assert_eq!(restored.fingerprint(), ps.fingerprint());
        let (a, b) = (restored.param("gen/a/kernel").unwrap(), ps.param("gen/a/kernel").unwrap());
        assert_eq!(a.m, b.m);
        assert_eq!(a.v, b.v);
        assert_eq!(a.step, 1);
        assert_eq!(restored.param("gen/b/bias").unwrap().step, 1);
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    proptest! {
        #[test]
        fn bytes_roundtrip_bit_exact(
            header in "[a-z_=0-9\n]{0,40}",
            vals in proptest::collection::vec(any::<f64>(), 1..20),
            step in any::<u64>(),
        ) {
            let ck = Checkpoint {
                header,
                records: vec![
                    Record::from_values("x/w", &vals, &[vals.len()]),
                    Record::from_values("x/w32", &vals.iter().map(|&v| v as f32).collect::<Vec<_>>(), &[1, vals.len()]),
                    Record::from_u64("x/w#adam_step", step),
                ],
            };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            let restored: Vec<f64> = back.records[0].values().unwrap();
            prop_assert!(restored.iter().zip(&vals).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.records[2].as_u64().unwrap(), step);
        }
    }
}
