//! Binary checkpoints.
//!
//! ```text
//! "BCKP"  u32 version  u32 config_len  config JSON
//! u32 tensor_count
//! per tensor: u32 name_len  name  u32 ndim  u32 dims[ndim]  f64 values (LE)
//! ```

use std::fs;
use std::path::Path;

use super::layers::{Conv2d, KERNEL};
use super::network::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn named_tensors(params: &ModelParams) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (name, c) in params.convs() {
        out.push(NamedTensor {
            name: format!("{name}.weight"),
            shape: vec![c.out_channels, c.in_channels, KERNEL, KERNEL],
            values: c.weight.clone(),
        });
        out.push(NamedTensor {
            name: format!("{name}.bias"),
            shape: vec![c.out_channels],
            values: c.bias.clone(),
        });
    }
    out
}

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&params.config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    let tensors = named_tensors(params);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "checkpoint is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, format!("config: {e}")))?;
    let mut params = ModelParams::init(config, 0).map_err(|e| Error::format(path, e.to_string()))?;
    let expected = named_tensors(&params);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(Error::format(
            path,
            format!("expected {} tensors, found {count}", expected.len()),
        ));
    }
    let mut convs: Vec<&mut Conv2d> = params.convs_mut();
    for (k, want) in expected.iter().enumerate() {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if name != want.name || shape != want.shape {
            return Err(Error::format(
                path,
                format!("tensor {k}: found {name} {shape:?}, expected {} {:?}", want.name, want.shape),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let conv = &mut convs[k / 2];
        let dst = if k % 2 == 0 { &mut conv.weight } else { &mut conv.bias };
        for (d, v) in dst.iter_mut().zip(values) {
            *d = v;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = ModelParams::init(ModelConfig::new(16, 24, 3), 42).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_damage() {
        let p = ModelParams::init(ModelConfig::new(8, 8, 1), 1).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        let path = Path::new("mem");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, path).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra, path).is_err());
    }
}
