//! `.dmap` raster files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DMAP"
//! 4       4     u32 height
//! 8       4     u32 width
//! 12      4     u32 reserved (0)
//! 16      4*h*w f32 values, row-major
//! ```
//!
//! Provenance lives in a JSON sidecar next to the raster (`<file>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DensityMap;
use crate::error::{Error, Result};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";
pub const DMAP_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmapSidecar {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_index: Option<usize>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_dmap(map: &DensityMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(DMAP_HEADER_LEN + 4 * map.values().len());
    buf.extend_from_slice(DMAP_MAGIC);
    buf.extend_from_slice(&(map.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &v in map.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_dmap(bytes: &[u8], path: &Path) -> Result<DensityMap> {
    if bytes.len() < DMAP_HEADER_LEN || &bytes[0..4] != DMAP_MAGIC {
        return Err(Error::format(path, "missing DMAP header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (height, width) = (word(4), word(8));
    let body = &bytes[DMAP_HEADER_LEN..];
    if body.len() != 4 * height * width {
        return Err(Error::format(
            path,
            format!("{height}x{width} raster needs {} bytes, found {}", 4 * height * width, body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DensityMap::from_vec(height, width, values).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes the raster and, when given, its provenance sidecar.
pub fn write_dmap(path: &Path, map: &DensityMap, sidecar: Option<&DmapSidecar>) -> Result<()> {
    fs::write(path, encode_dmap(map)).map_err(|e| Error::io(path, e))?;
    if let Some(meta) = sidecar {
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_vec_pretty(meta)?).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

/// Reads a raster and its sidecar if one exists.
pub fn read_dmap(path: &Path) -> Result<(DensityMap, Option<DmapSidecar>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let map = decode_dmap(&bytes, path)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let raw = fs::read(&side).map_err(|e| Error::io(&side, e))?;
        Some(serde_json::from_slice(&raw)?)
    } else {
        None
    };
    Ok((map, meta))
}
