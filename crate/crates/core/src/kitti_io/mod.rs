//! KITTI disparity / optical-flow PNG codecs and the `fgrid` container.
//!
//! Disparity PNG: 16-bit grayscale, `d = stored / 256`, 0 marks invalid.
//! Flow PNG: 16-bit RGB, `u = (r - 2^15) / 64`, `v = (g - 2^15) / 64`,
//! `b > 0` marks valid.

mod fgrid;
mod png16;

pub use fgrid::{decode_fgrid, encode_fgrid, read_fgrid, write_fgrid, FGRID_MAGIC, FGRID_VERSION};
pub use png16::{
    decode_disparity_png, decode_flow_png, encode_disparity_png, encode_flow_png, read_disparity_png,
    read_flow_png, read_gray8_png, write_disparity_png, write_flow_png, write_gray8_png,
    write_rgb8_png,
};

use std::path::Path;

use crate::error::Result;
use crate::geometry::{SceneFlowField, Se3Field};

/// Orthonormality tolerance for SE(3) fields stored as 32-bit floats.
pub const SE3_IMPORT_TOLERANCE: f64 = 1e-4;

/// Read a 12-channel fgrid as an SE(3) field.
pub fn read_se3_field(path: impl AsRef<Path>) -> Result<Se3Field> {
    Se3Field::from_grid12(&read_fgrid(path)?, SE3_IMPORT_TOLERANCE)
}

pub fn write_se3_field(path: impl AsRef<Path>, field: &Se3Field) -> Result<()> {
    write_fgrid(path, &field.to_grid12())
}

/// Benchmark-style result set for one frame: `disp_0.png` (disparity at t),
/// `disp_1.png` (d' registered to t) and `flow.png`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub disp_0: crate::fields::Grid,
    pub disp_1: crate::fields::Grid,
    pub flow: SceneFlowField,
}

impl ResultSet {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_disparity_png(dir.join("disp_0.png"), &self.disp_0)?;
        write_disparity_png(dir.join("disp_1.png"), &self.disp_1)?;
        write_flow_png(dir.join("flow.png"), &self.flow)
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        for name in ["disp_0.png", "disp_1.png", "flow.png"] {
            if !dir.join(name).is_file() {
                return Err(crate::error::Error::usage(format!(
                    "missing result file `{}`",
                    dir.join(name).display()
                )));
            }
        }
        Ok(Self {
            disp_0: read_disparity_png(dir.join("disp_0.png"))?,
            disp_1: read_disparity_png(dir.join("disp_1.png"))?,
            flow: read_flow_png(dir.join("flow.png"))?,
        })
    }
}
