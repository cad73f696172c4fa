//! On-disk checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "OELM"
//!   format_version: u32
//!   spec block: u32 length, then that many bytes of TOML (the config-file
//!     serialization of the architecture, with the initialization scheme
//!     recorded as comment lines)
//!   tensor count: u32
//!   per tensor: u32 name length, name bytes, rows: u64, cols: u64,
//!     then rows*cols IEEE-754 32-bit values, row-major
//!   crc32 of every byte above: u32
//!
//! Values are stored in 32-bit regardless of the in-memory scalar type.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::plan::ModelSpec;
use crate::scalar::Scalar;

use super::{Checkpoint, FORMAT_VERSION};

const MAGIC: &[u8; 4] = b"OELM";

const INIT_NOTE: &str = "\
# init: normal(0, 0.02) truncated at 2 sigma; attention-out and FFN-down\n\
# projections scaled by 1/sqrt(2 * num_layers); norm gains start at 1\n";

fn spec_block(spec: &ModelSpec) -> Result<String> {
    let body = toml::to_string(spec)
        .map_err(|e| Error::Format(format!("cannot serialize architecture: {e}")))?;
    Ok(format!("{INIT_NOTE}{body}"))
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&ckpt.format_version.to_le_bytes());
    let spec_text = spec_block(&ckpt.spec)?;
    buf.extend_from_slice(&(spec_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(spec_text.as_bytes());
    buf.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, m) in &ckpt.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for &v in m.data() {
            buf.extend_from_slice(&v.into_f32().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint file is truncated".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Read and fully validate a checkpoint: checksum, magic, version, spec
/// parse, and an exact tensor census against the spec's derived plan.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::Format("checkpoint file is truncated".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let spec_len = r.u32()? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len)?)
        .map_err(|_| Error::Format("spec block is not UTF-8".into()))?;
    let spec: ModelSpec = toml::from_str(spec_text)
        .map_err(|e| Error::Format(format!("cannot parse embedded architecture: {e}")))?;
    spec.validate().map_err(|e| Error::Format(format!("embedded architecture invalid: {e}")))?;

    let tensor_count = r.u32()? as usize;
    let mut tensors = IndexMap::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("tensor {name}: dimension overflow")))?;
        let raw = r.take(count * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), Matrix::from_vec(rows, cols, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after final tensor".into()));
    }
    let ckpt = Checkpoint { spec, tensors, format_version: version };
    ckpt.validate_census()?;
    Ok(ckpt)
}
