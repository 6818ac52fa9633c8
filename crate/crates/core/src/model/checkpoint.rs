//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"NATPNCKP"  u32 version  u32 header_len  header (JSON)
//! u32 count    { u32 name_len  name  u8 group  u32 rows  u32 cols  f64 × rows·cols } × count
//! ```
//!
//! The header holds the model configuration, from which the parameter
//! layout is rebuilt on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NatPn, NatPnConfig};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NATPNCKP";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NatPnConfig,
}

pub fn to_bytes(model: &NatPn) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
    })
    .map_err(|e| Error::Contract(format!("checkpoint header: {e}")))?;
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let params = model.store.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.group.code());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Contract("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<NatPn> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Contract("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Contract(format!(
            "checkpoint version {version} not supported (expected {VERSION})"
        )));
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Contract(format!("checkpoint header: {e}")))?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Contract("parameter name is not UTF-8".into()))?;
        let code = r.take(1)?[0];
        let group = ParamGroup::from_code(code)
            .ok_or_else(|| Error::Contract(format!("unknown parameter group {code}")))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        store.add(name, group, Tensor::new(rows, cols, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Contract("trailing bytes after checkpoint".into()));
    }
    let mut model = NatPn::new(header.config, 0)?;
    if !model.store.same_layout(&store) {
        return Err(Error::Contract(
            "checkpoint tensors do not match the configured architecture".into(),
        ));
    }
    model.store = store;
    Ok(model)
}

pub fn save(model: &NatPn, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NatPn> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
