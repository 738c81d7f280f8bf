//! `ednn` v1 checkpoints.
//!
//! ```text
//! "EDNN" | u16 version=1 | u32 n_tensors | tensor*
//! tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 data (LE)
//! optional optimiser section:
//!   "OPT1" | u64 step | f64 lr | f64 beta1 | f64 beta2 | f64 eps | u32 n | tensor*
//!   moments are named "m.<param>" and "v.<param>"
//! ```

use std::fs;
use std::path::Path;

use super::optim::AdamState;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{bail, Error, Result};

const MAGIC: &[u8; 4] = b"EDNN";
const OPT_TAG: &[u8; 4] = b"OPT1";
const VERSION: u16 = 1;

/// Optimiser state as stored on disk, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub moments: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerSnapshot>,
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let n = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank of `{name}` exceeds 255")))?;
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension of `{name}` exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

/// Serialises every tensor in `store` and, optionally, an Adam state.
pub fn encode_checkpoint(store: &ParamStore, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        put_tensor(&mut buf, &p.name, &p.value)?;
    }
    if let Some(s) = adam {
        buf.extend_from_slice(OPT_TAG);
        buf.extend_from_slice(&s.step_count.to_le_bytes());
        for v in [s.lr, s.beta1, s.beta2, s.eps] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(2 * s.params.len() as u32).to_le_bytes());
        for (k, &id) in s.params.iter().enumerate() {
            put_tensor(&mut buf, &format!("m.{}", store.name(id)), &s.first_moment[k])?;
            put_tensor(&mut buf, &format!("v.{}", store.name(id)), &s.second_moment[k])?;
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            bail!(Format, "checkpoint truncated at byte {} reading {what}", self.buf.len());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = u16::from_le_bytes(self.array("name length")?) as usize;
        let at = self.pos;
        let name = std::str::from_utf8(self.take(n, "name")?)
            .map_err(|_| Error::Format(format!("tensor name at byte {at} is not UTF-8")))?
            .to_string();
        let rank = self.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(self.array("dims")?) as usize);
        }
        let count: usize = shape.iter().product();
        let raw = self.take(count * 4, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if &r.array::<4>("magic")? != MAGIC {
        bail!(Format, "bad checkpoint magic at byte 0");
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != VERSION {
        bail!(Format, "unsupported checkpoint version {version} at byte 4");
    }
    let n = u32::from_le_bytes(r.array("tensor count")?);
    let tensors = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    let optimizer = if r.pos == buf.len() {
        None
    } else {
        let at = r.pos;
        if &r.array::<4>("section tag")? != OPT_TAG {
            bail!(Format, "unknown checkpoint section at byte {at}");
        }
        let step_count = u64::from_le_bytes(r.array("step")?);
        let mut f = [0.0; 4];
        for v in &mut f {
            *v = f64::from_le_bytes(r.array("hyperparameters")?);
        }
        let n = u32::from_le_bytes(r.array("moment count")?);
        let moments = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        Some(OptimizerSnapshot {
            step_count,
            lr: f[0],
            beta1: f[1],
            beta2: f[2],
            eps: f[3],
            moments,
        })
    };
    if r.pos != buf.len() {
        bail!(Format, "trailing bytes after byte {}", r.pos);
    }
    Ok(Checkpoint { tensors, optimizer })
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, adam: Option<&AdamState>) -> Result<()> {
    let buf = encode_checkpoint(store, adam)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl OptimizerSnapshot {
    /// Rebuilds an [`AdamState`] over the store's trainable parameters that
    /// have stored moments.
    pub fn restore(&self, store: &ParamStore) -> Result<AdamState> {
        let mut params = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for chunk in self.moments.chunks(2) {
            let [(mn, m), (vn, v)] = chunk else {
                bail!(Format, "odd number of optimiser moments");
            };
            let Some(name) = mn.strip_prefix("m.") else {
                bail!(Format, "unexpected moment name `{mn}`");
            };
            if vn.strip_prefix("v.") != Some(name) {
                bail!(Format, "moment `{vn}` does not pair with `{mn}`");
            }
            let Some(id) = store.find(name) else {
                bail!(Format, "optimiser moment for unknown parameter `{name}`");
            };
            if store.value(id).shape() != m.shape() || m.shape() != v.shape() {
                bail!(Shape, "optimiser moments for `{name}` do not match the parameter shape");
            }
            params.push(id);
            first.push(m.clone());
            second.push(v.clone());
        }
        Ok(AdamState {
            step_count: self.step_count,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            params,
            first_moment: first,
            second_moment: second,
        })
    }
}
