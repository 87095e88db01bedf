//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "GHRCKPT\0" | u32 version | u32 config_len | config JSON
//! u32 count | count × { u32 name_len | name | u64 rows | u64 cols
//!                       | u8 width (4 or 8) | u8 trainable | data }
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GHRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Configuration text and parameters read from a checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub config_json: String,
    pub params: ParamStore,
}

/// Serializes `params` at 8-byte width behind a header holding `config_json`.
pub fn encode_checkpoint(config_json: &str, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for id in params.ids() {
        let name = params.name(id);
        let value = params.value(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.cols() as u64).to_le_bytes());
        out.push(8);
        out.push(params.is_trainable(id) as u8);
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_len = cur.u32()? as usize;
    let config_json = cur.string(config_len)?;
    let count = cur.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = cur.string(name_len)?;
        let rows = cur.u64()? as usize;
        let cols = cur.u64()? as usize;
        let width = cur.u8()?;
        let trainable = match cur.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Checkpoint(format!("bad trainable flag {other}"))),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("shape overflow".into()))?;
        let data: Vec<f64> = match width {
            8 => cur
                .take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            4 => cur
                .take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            w => return Err(Error::Checkpoint(format!("unsupported element width {w}"))),
        };
        if params.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.add(&name, Tensor::from_vec(rows, cols, data)?, trainable);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(Checkpoint { version, config_json, params })
}

pub fn save_checkpoint(path: &Path, config_json: &str, params: &ParamStore) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(config_json, params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
