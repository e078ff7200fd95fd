use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectified pinhole stereo rig. Disparities are in pixels of this camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            baseline,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.baseline]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.baseline <= 0.0 {
            return Err(Error::usage(format!(
                "camera needs finite values with fx, fy, baseline > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Camera for a grid downsampled by `factor` (intrinsics divided, baseline kept).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx / factor,
            fy: self.fy / factor,
            cx: self.cx / factor,
            cy: self.cy / factor,
            baseline: self.baseline,
        }
    }

    /// Unproject a pixel with known disparity to a 3-D point in meters.
    pub fn backproject(&self, x: f64, y: f64, disparity: f64) -> Result<Vector3<f64>> {
        if !(disparity > 0.0) {
            return Err(Error::InvalidDepth(disparity));
        }
        let z = self.fx * self.baseline / disparity;
        Ok(Vector3::new(
            (x - self.cx) * z / self.fx,
            (y - self.cy) * z / self.fy,
            z,
        ))
    }

    /// Project a 3-D point, returning pixel coordinates and disparity.
    pub fn project(&self, p: &Vector3<f64>) -> Result<((f64, f64), f64)> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        let x = self.fx * p.x / p.z + self.cx;
        let y = self.fy * p.y / p.z + self.cy;
        Ok(((x, y), self.fx * self.baseline / p.z))
    }

    /// Disparity of a point at depth `z`.
    pub fn disparity_at(&self, z: f64) -> f64 {
        self.fx * self.baseline / z
    }

    /// Parse `key = value` lines with keys fx, fy, cx, cy and baseline.
    /// Blank lines and `#` comments are ignored.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 5] = [None; 5];
        const KEYS: [&str; 5] = ["fx", "fy", "cx", "cy", "baseline"];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(format!("camera config line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let idx = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::format(format!("camera config: unknown key `{key}`")))?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::format(format!("camera config: `{key}` is not a number"))
            })?;
            if vals[idx].replace(value).is_some() {
                return Err(Error::format(format!("camera config: duplicate key `{key}`")));
            }
        }
        let get = |i: usize| {
            vals[i].ok_or_else(|| Error::format(format!("camera config: missing `{}`", KEYS[i])))
        };
        Self::new(get(0)?, get(1)?, get(2)?, get(3)?, get(4)?)
    }

    pub fn to_config(&self) -> String {
        format!(
            "fx = {}\nfy = {}\ncx = {}\ncy = {}\nbaseline = {}\n",
            self.fx, self.fy, self.cx, self.cy, self.baseline
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_config(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_config())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backproject_principal_ray() {
        let cam = CameraModel::new(100.0, 100.0, 0.0, 0.0, 1.0).unwrap();
        let p = cam.backproject(0.0, 0.0, 100.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn backproject_offset_pixel() {
        let cam = CameraModel::new(100.0, 100.0, 50.0, 50.0, 0.5).unwrap();
        let p = cam.backproject(60.0, 50.0, 10.0).unwrap();
        assert!((p - Vector3::new(0.5, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn backproject_rejects_zero_disparity() {
        let cam = CameraModel::new(100.0, 100.0, 0.0, 0.0, 1.0).unwrap();
        assert!(matches!(cam.backproject(1.0, 1.0, 0.0), Err(Error::InvalidDepth(_))));
        assert!(matches!(cam.backproject(1.0, 1.0, -3.0), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn project_hand_value() {
        let cam = CameraModel::new(100.0, 100.0, 0.0, 0.0, 1.0).unwrap();
        let ((x, y), d) = cam.project(&Vector3::new(1.0, 0.0, 10.0)).unwrap();
        assert_eq!((x, y, d), (10.0, 0.0, 10.0));
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cam = CameraModel::new(721.5, 721.5, 609.6, 172.9, 0.54).unwrap();
        assert_eq!(CameraModel::parse_config(&cam.to_config()).unwrap(), cam);

        let text = "# kitti-like\nfx = 2\nfy=2\n cx = 1\ncy = 1\nbaseline = 0.5\n";
        assert_eq!(CameraModel::parse_config(text).unwrap().baseline, 0.5);
        assert!(CameraModel::parse_config("fx = 1\nfy = 1\ncx = 0\ncy = 0\n").is_err());
        assert!(CameraModel::parse_config("fx = 1\nfy = 1\ncx = 0\ncy = 0\nbaseline = -1\n").is_err());
        assert!(CameraModel::parse_config("focal = 1\n").is_err());
    }
}
