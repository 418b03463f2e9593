//! DGCK: a flat binary container of named `f32` tensors.
//!
//! ```text
//! "DGCK"  u32 version (=1)  u32 count
//! count x { u16 name_len  name (UTF-8)  u8 ndim  ndim x u32 dim  f32 payload }
//! ```
//! All integers and floats are little-endian. Entries are written in name
//! order.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::arch::WeightSet;
use crate::error::{Error, Result};
use crate::fid::GaussianStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DGCK";
pub const VERSION: u32 = 1;

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let mut items: Vec<(&str, &Tensor)> = entries.into_iter().collect();
    items.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        if t.rank() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor {name} has rank {}", t.rank())));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("tensor {name} extent {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap_or_default()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic: not a DGCK file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported DGCK version {version}")));
    }
    let count = r.u32("entry count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = u16::from_le_bytes([r.take(1, "name length")?[0], r.take(1, "name length")?[0]]) as usize;
        let name = core::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format(format!("entry {i} name is not UTF-8")))?
            .to_string();
        let ndim = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("entry {name} size overflows")))?;
        let raw = r.take(numel.checked_mul(4).unwrap_or(usize::MAX), "payload")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("entry {name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last entry", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn encode_weights(ws: &WeightSet) -> Result<Vec<u8>> {
    encode(ws.iter().map(|(n, t)| (n.as_str(), t)))
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightSet> {
    Ok(decode(bytes)?.into_iter().collect())
}

/// Stats are stored at `f32` precision as `mean [F]`, `cov [F, F]`, `n [1]`.
pub fn encode_stats(s: &GaussianStats) -> Result<Vec<u8>> {
    let f = s.dim();
    let mean = Tensor::new(&[f], s.mean.iter().map(|v| *v as f32).collect())?;
    let cov = Tensor::new(&[f, f], s.cov.iter().map(|v| *v as f32).collect())?;
    let n = Tensor::new(&[1], alloc::vec![s.n as f32])?;
    encode([("mean", &mean), ("cov", &cov), ("n", &n)])
}

pub fn decode_stats(bytes: &[u8]) -> Result<GaussianStats> {
    let entries = decode(bytes)?;
    let get = |k: &str| {
        entries
            .iter()
            .find(|(n, _)| n == k)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("stats blob lacks {k:?}")))
    };
    let mean: Vec<f64> = get("mean")?.data().iter().map(|v| *v as f64).collect();
    let cov: Vec<f64> = get("cov")?.data().iter().map(|v| *v as f64).collect();
    if cov.len() != mean.len() * mean.len() {
        return Err(Error::Format(format!("stats blob has {} means but {} covariances", mean.len(), cov.len())));
    }
    let n = get("n")?.data()[0] as usize;
    Ok(GaussianStats { mean, cov, n })
}
