use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::Grid;

pub const FGRID_MAGIC: &[u8; 4] = b"FGRD";
pub const FGRID_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 3 * 4;

/// Serialize a grid: magic, u16 version, u32 C/H/W, little-endian f32 data,
/// then (if the grid has one) the validity bitmask, LSB first, row-major.
pub fn encode_fgrid(g: &Grid) -> Vec<u8> {
    let (c, h, w) = g.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * c * h * w + (h * w).div_ceil(8));
    out.extend_from_slice(FGRID_MAGIC);
    out.extend_from_slice(&FGRID_VERSION.to_le_bytes());
    for dim in [c, h, w] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in g.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(valid) = g.valid() {
        let mut bytes = vec![0u8; valid.len().div_ceil(8)];
        for (i, _) in valid.iter().enumerate().filter(|(_, ok)| **ok) {
            bytes[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn decode_fgrid(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("fgrid: truncated header"));
    }
    if &bytes[..4] != FGRID_MAGIC {
        return Err(Error::format("fgrid: bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FGRID_VERSION {
        return Err(Error::format(format!("fgrid: unsupported version {version}")));
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(6), dim(10), dim(14));
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format("fgrid: dimensions overflow"))?;
    let data_end = n
        .checked_mul(4)
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format("fgrid: dimensions overflow"))?;
    let mask_len = (h * w).div_ceil(8);
    let has_mask = match bytes.len() {
        len if len == data_end => false,
        len if len == data_end + mask_len && mask_len > 0 => true,
        len if len < data_end => return Err(Error::format("fgrid: truncated data")),
        _ => return Err(Error::format("fgrid: unexpected trailing bytes")),
    };
    let data = bytes[HEADER_LEN..data_end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let grid = Grid::from_vec(c, h, w, data)?;
    if !has_mask {
        return Ok(grid);
    }
    let mask_bytes = &bytes[data_end..];
    let pad = mask_len * 8 - h * w;
    if pad > 0 && mask_bytes[mask_len - 1] >> (8 - pad) != 0 {
        return Err(Error::format("fgrid: nonzero padding bits in validity mask"));
    }
    let valid = (0..h * w)
        .map(|i| mask_bytes[i / 8] >> (i % 8) & 1 == 1)
        .collect();
    grid.with_valid(valid)
}

pub fn read_fgrid(path: impl AsRef<Path>) -> Result<Grid> {
    decode_fgrid(&std::fs::read(path)?)
}

pub fn write_fgrid(path: impl AsRef<Path>, g: &Grid) -> Result<()> {
    std::fs::write(path, encode_fgrid(g))?;
    Ok(())
}
