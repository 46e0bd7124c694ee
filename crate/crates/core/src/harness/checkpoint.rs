//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian:
//! `MSMARLCK`, version `u32`, SHA-256 config hash (32 bytes), completed
//! epochs `u64`, config text (`u64` length + UTF-8), tensor count `u32`,
//! then per tensor: name (`u32` length + UTF-8), rank `u32`, dims as
//! `u64`, values as `f64`.

use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::policy::Policy;

pub const MAGIC: &[u8; 8] = b"MSMARLCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub epoch: u64,
    /// Resolved configuration the parameters were trained under.
    pub config_text: String,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        };
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str, wide: bool) -> Result<usize> {
        let n = if wide { self.u64(what)? } else { u64::from(self.u32(what)?) };
        let n = usize::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} length overflows")))?;
        if n > self.bytes.len() - self.at {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        Ok(n)
    }

    fn string(&mut self, what: &str, wide: bool) -> Result<String> {
        let n = self.len(what, wide)?;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, config_hash: [u8; 32], epoch: u64, config_text: String) -> Self {
        Checkpoint {
            version: VERSION,
            config_hash,
            epoch,
            config_text,
            tensors: policy
                .params()
                .iter()
                .map(|(name, t)| (name.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32, "config hash")?.try_into().expect("32 bytes");
        let epoch = r.u64("epoch")?;
        let config_text = r.string("config text", true)?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name", false)?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let d = r.u64("dimension")?;
                shape.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("`{name}` dimension overflows")))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` is larger than the file")))?;
            let raw = r.take(n * 8, &format!("values of `{name}`"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Checkpoint {
            version,
            config_hash,
            epoch,
            config_text,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }

    /// Installs the tensors into `policy`, checking every name and shape.
    pub fn apply(&self, policy: &mut Policy) -> Result<()> {
        for (name, _) in &self.tensors {
            if policy.params().id(name).is_none() {
                return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
            }
        }
        let mut store = ParamStore::new();
        for (name, current) in policy.params().iter() {
            let Some((_, t)) = self.tensors.iter().find(|(n, _)| n == name) else {
                return Err(Error::Checkpoint(format!("missing tensor `{name}`")));
            };
            if current.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, the model expects {:?}",
                    t.shape(),
                    current.shape()
                )));
            }
            store.register(name, t.clone())?;
        }
        policy.set_params(store)
    }
}

pub fn hex(hash: &[u8]) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
