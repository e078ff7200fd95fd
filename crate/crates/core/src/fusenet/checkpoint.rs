//! Checkpoint container: magic, version, a TOML header describing the
//! network, then one length-prefixed fgrid blob (`1 x 1 x n`, f32) per
//! parameter array in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Parameters, Scalar, Tensor, UNetConfig};
use crate::error::{Error, Result};
use crate::features::FUSION_CHANNEL_ORDER;
use crate::fields::Grid;
use crate::kitti_io::{decode_fgrid, encode_fgrid};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    channel_order: String,
    input_normalization: String,
    parameter_count: usize,
    unet: UNetConfig,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_checkpoint<T: Scalar>(cfg: &UNetConfig, params: &Parameters<T>) -> Result<Vec<u8>> {
    params.check(cfg)?;
    let header = Header {
        dtype: "f32".into(),
        channel_order: FUSION_CHANNEL_ORDER.into(),
        input_normalization: "raw".into(),
        parameter_count: params.count(),
        unet: cfg.clone(),
        params: params
            .entries()
            .iter()
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::format(format!("checkpoint header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (_, t) in params.entries() {
        let g = Grid::from_vec(1, 1, t.len(), t.to_f64())?;
        let blob = encode_fgrid(&g);
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(UNetConfig, Parameters<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format("checkpoint header is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::format(format!("checkpoint header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::format(format!("unsupported checkpoint dtype `{}`", header.dtype)));
    }
    if header.channel_order != FUSION_CHANNEL_ORDER {
        return Err(Error::format("checkpoint was trained on a different input channel order"));
    }
    if header.input_normalization != "raw" {
        return Err(Error::format(format!(
            "unsupported input normalization `{}`",
            header.input_normalization
        )));
    }
    let mut entries = Vec::with_capacity(header.params.len());
    for p in &header.params {
        let n = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let g = decode_fgrid(r.take(n)?)?;
        let t = Tensor::from_f64(&p.shape, g.data())
            .map_err(|_| Error::format(format!("parameter `{}` does not match its shape", p.name)))?;
        entries.push((p.name.clone(), t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    let params = Parameters::from_entries(entries).map_err(|e| Error::format(e.to_string()))?;
    let expected = header.unet.parameter_count().map_err(|e| Error::format(e.to_string()))?;
    if params.count() != header.parameter_count || params.count() != expected {
        return Err(Error::format(format!(
            "checkpoint holds {} parameters, header says {}, config needs {expected}",
            params.count(),
            header.parameter_count
        )));
    }
    params.check(&header.unet).map_err(|e| Error::format(e.to_string()))?;
    Ok((header.unet, params))
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, cfg: &UNetConfig, params: &Parameters<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cfg, params)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(UNetConfig, Parameters<T>)> {
    decode_checkpoint(&std::fs::read(path)?)
}
