//! Named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"NRCK"
//! version u32 (= 1)
//! count   u32
//! count x entry:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8   (0 = f64, 1 = raw bytes)
//!   rank     u32, rank x u64 dims
//!   payload  f64 LE values, or bytes
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NRCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F64(Tensor),
    Bytes(Vec<u8>),
}

/// Ordered collection of named entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), Entry::F64(t)));
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, b: Vec<u8>) {
        self.entries.push((name.into(), Entry::Bytes(b)));
    }

    /// Every parameter of `store`, names prefixed with `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.entries() {
            self.push_tensor(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Entry::F64(t))) => Ok(t),
            Some(_) => Err(Error::format(format!("entry '{name}' is not a tensor"))),
            None => Err(Error::format(format!("missing entry '{name}'"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Entry::Bytes(b))) => Ok(b),
            Some(_) => Err(Error::format(format!("entry '{name}' is not a byte blob"))),
            None => Err(Error::format(format!("missing entry '{name}'"))),
        }
    }

    /// Overwrite the values of `store` from entries named `prefix + param name`.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = format!("{prefix}{}", store.name(id));
            let t = self.tensor(&name)?;
            let dst = store.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "load_store",
                    lhs: dst.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::F64(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                    for &d in t.shape() {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Bytes(b) => {
                    out.push(1);
                    out.extend_from_slice(&1u32.to_le_bytes());
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        out
    }

    pub fn from_bytes(mut buf: &[u8]) -> Result<Container> {
        let mut magic = [0u8; 4];
        buf.read_exact(&mut magic)
            .map_err(|_| Error::format("truncated header"))?;
        if &magic != MAGIC {
            return Err(Error::format("not a checkpoint container (bad magic)"));
        }
        let version = read_u32(&mut buf)?;
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported container version {version}"
            )));
        }
        let count = read_u32(&mut buf)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u32(&mut buf)? as usize;
            let name = String::from_utf8(take(&mut buf, len)?.to_vec())
                .map_err(|_| Error::format("entry name is not UTF-8"))?;
            let dtype = take(&mut buf, 1)?[0];
            let rank = read_u32(&mut buf)? as usize;
            if rank > 4 {
                return Err(Error::format(format!("entry '{name}' has rank {rank}")));
            }
            let dims: Vec<usize> = (0..rank)
                .map(|_| read_u64(&mut buf).map(|d| d as usize))
                .collect::<Result<_>>()?;
            let n: usize = dims.iter().product();
            let entry = match dtype {
                0 => {
                    let raw = take(&mut buf, n * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Entry::F64(Tensor::new(&dims, data)?)
                }
                1 => Entry::Bytes(take(&mut buf, n)?.to_vec()),
                other => return Err(Error::format(format!("unknown dtype {other}"))),
            };
            entries.push((name, entry));
        }
        if !buf.is_empty() {
            return Err(Error::format("trailing bytes after container"));
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Container> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::format("truncated container"));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn read_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(
        take(buf, 4)?.try_into().expect("4 bytes"),
    ))
}

fn read_u64(buf: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(
        take(buf, 8)?.try_into().expect("8 bytes"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
            blob in proptest::collection::vec(any::<u8>(), 0..20),
        ) {
            let mut c = Container::new();
            c.push_tensor("a.w", Tensor::from_vec(values.clone()));
            c.push_bytes("vocab", blob.clone());
            let back = Container::from_bytes(&c.to_bytes()).unwrap();
            prop_assert_eq!(back.tensor("a.w").unwrap().data(), &values[..]);
            prop_assert_eq!(back.bytes("vocab").unwrap(), &blob[..]);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"XXXX").is_err());
        let mut c = Container::new();
        c.push_tensor("x", Tensor::scalar(1.0));
        let mut bytes = c.to_bytes();
        bytes.pop();
        assert!(Container::from_bytes(&bytes).is_err());
    }
}
