use std::str::FromStr;

use nalgebra::Vector3;

use super::{se3_exp, se3_invert, se3_log, CameraModel, Se3, Twist};
use crate::error::{Error, Result};
use crate::fields::Grid;

/// Per-pixel rigid motions in the reference camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Se3Field {
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` entries.
    pub transforms: Vec<Se3>,
}

/// Image-space scene flow `(u, v, delta_d)` with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub delta_d: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Se3Field {
    pub fn filled(width: usize, height: usize, t: Se3) -> Self {
        Self {
            width,
            height,
            transforms: vec![t; width * height],
        }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        Self::filled(width, height, Se3::identity())
    }

    pub fn from_transforms(width: usize, height: usize, transforms: Vec<Se3>) -> Result<Self> {
        if transforms.len() != width * height {
            return Err(Error::shape(format!(
                "SE(3) field has {} transforms, expected {width}x{height}",
                transforms.len()
            )));
        }
        Ok(Self {
            width,
            height,
            transforms,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &Se3 {
        &self.transforms[y * self.width + x]
    }

    /// Six-channel grid of twists `[v; omega]`.
    pub fn to_twist_grid(&self) -> Result<Grid> {
        let n = self.width * self.height;
        let mut data = vec![0.0; 6 * n];
        for (i, t) in self.transforms.iter().enumerate() {
            for (c, v) in se3_log(t)?.to_array().into_iter().enumerate() {
                data[c * n + i] = v;
            }
        }
        Grid::from_vec(6, self.height, self.width, data)
    }

    /// Twelve-channel interchange layout: rotation row-major, then translation.
    pub fn to_grid12(&self) -> Grid {
        let n = self.width * self.height;
        let mut data = vec![0.0; 12 * n];
        for (i, t) in self.transforms.iter().enumerate() {
            for (c, v) in t.to_array12().into_iter().enumerate() {
                data[c * n + i] = v;
            }
        }
        Grid::from_vec(12, self.height, self.width, data).expect("consistent length")
    }

    /// Import a 12-channel grid. Rotations must be orthonormal within `tol`
    /// and are then projected onto the nearest rotation.
    pub fn from_grid12(g: &Grid, tol: f64) -> Result<Self> {
        g.ensure_channels(12, "SE(3) field import")?;
        let (h, w) = (g.height(), g.width());
        let mut transforms = Vec::with_capacity(h * w);
        let mut buf = [0.0; 12];
        for y in 0..h {
            for x in 0..w {
                for (c, b) in buf.iter_mut().enumerate() {
                    *b = g.at(c, y, x);
                }
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::format(format!("non-finite transform at ({x}, {y})")));
                }
                let t = Se3::from_array12(&buf);
                let err = t.orthonormality_error();
                if err > tol {
                    return Err(Error::format(format!(
                        "rotation at ({x}, {y}) is not orthonormal (error {err:.3e})"
                    )));
                }
                transforms.push(t.reorthonormalize());
            }
        }
        Self::from_transforms(w, h, transforms)
    }

    pub fn max_abs_diff(&self, other: &Se3Field) -> f64 {
        self.transforms
            .iter()
            .zip(&other.transforms)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

impl SceneFlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            delta_d: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Three-channel grid `(u, v, delta_d)`; invalid pixels carry zeros.
    pub fn to_grid(&self) -> Grid {
        let n = self.len();
        let mut data = Vec::with_capacity(3 * n);
        for ch in [&self.u, &self.v, &self.delta_d] {
            data.extend(ch.iter().zip(&self.valid).map(|(&x, &ok)| if ok { x } else { 0.0 }));
        }
        Grid::from_vec(3, self.height, self.width, data)
            .expect("consistent length")
            .with_valid(self.valid.clone())
            .expect("consistent mask")
    }

    /// From a 2- or 3-channel grid; a missing third channel reads as zero.
    pub fn from_grid(g: &Grid) -> Result<Self> {
        if g.channels() != 2 && g.channels() != 3 {
            return Err(Error::shape(format!(
                "scene flow needs 2 or 3 channels, got {}",
                g.channels()
            )));
        }
        let n = g.height() * g.width();
        Ok(Self {
            width: g.width(),
            height: g.height(),
            u: g.channel(0).to_vec(),
            v: g.channel(1).to_vec(),
            delta_d: if g.channels() == 3 {
                g.channel(2).to_vec()
            } else {
                vec![0.0; n]
            },
            valid: g.valid_mask(),
        })
    }

    fn ensure_size(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::shape(format!(
                "{what}: flow is {}x{}, expected {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Scene flow induced by a per-pixel rigid motion acting on the
/// back-projected disparity map.
pub fn induced_scene_flow(
    field: &Se3Field,
    disp: &Grid,
    camera: &CameraModel,
) -> Result<SceneFlowField> {
    disp.ensure_channels(1, "induced_scene_flow disparity")?;
    disp.ensure_hw(field.height, field.width, "induced_scene_flow")?;
    let mut out = SceneFlowField::zeros(field.width, field.height);
    for y in 0..field.height {
        for x in 0..field.width {
            let i = y * field.width + x;
            let d = disp.at(0, y, x);
            let moved = disp
                .is_valid(y, x)
                .then(|| camera.backproject(x as f64, y as f64, d))
                .and_then(|p| p.ok())
                .map(|p| field.transforms[i].apply(&p))
                .and_then(|p| camera.project(&p).ok());
            match moved {
                Some(((px, py), d_new)) => {
                    out.u[i] = px - x as f64;
                    out.v[i] = py - y as f64;
                    out.delta_d[i] = d_new - d;
                }
                None => out.valid[i] = false,
            }
        }
    }
    Ok(out)
}

/// Per-pixel inverse of every transform.
pub fn invert_field(field: &Se3Field) -> Se3Field {
    Se3Field {
        width: field.width,
        height: field.height,
        transforms: field.transforms.iter().map(se3_invert).collect(),
    }
}

/// Scene flow parametrizations accepted by [`convert_parametrization`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    /// `(u, v, d')` with `d' = D^t + delta_d`.
    UvDPrime,
    /// `(u, v, delta_d)`, the native layout.
    UvDeltaD,
    /// 3-D motion vector of the back-projected point, in meters.
    Xyz,
}

impl FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uvd'" | "uvdprime" => Ok(Self::UvDPrime),
            "uvΔd" | "uvdd" | "uvdelta" => Ok(Self::UvDeltaD),
            "xyz" => Ok(Self::Xyz),
            other => Err(Error::usage(format!("unknown parametrization `{other}`"))),
        }
    }
}

/// Re-express scene flow in another parametrization. Pixels that are invalid
/// in the flow or the disparity, or whose `d'` is not positive for `Xyz`,
/// are zero and marked invalid.
pub fn convert_parametrization(
    flow: &SceneFlowField,
    disp_t: &Grid,
    camera: &CameraModel,
    target: Parametrization,
) -> Result<Grid> {
    disp_t.ensure_channels(1, "convert_parametrization disparity")?;
    flow.ensure_size(disp_t.width(), disp_t.height(), "convert_parametrization")?;
    let (w, h) = (flow.width, flow.height);
    let mut out = Grid::zeros(3, h, w);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !flow.valid[i] || !disp_t.is_valid(y, x) {
                continue;
            }
            let d = disp_t.at(0, y, x);
            let (u, v, dd) = (flow.u[i], flow.v[i], flow.delta_d[i]);
            let vals = match target {
                Parametrization::UvDeltaD => Some([u, v, dd]),
                Parametrization::UvDPrime => Some([u, v, d + dd]),
                Parametrization::Xyz => {
                    let p0 = camera.backproject(x as f64, y as f64, d);
                    let p1 = camera.backproject(x as f64 + u, y as f64 + v, d + dd);
                    match (p0, p1) {
                        (Ok(p0), Ok(p1)) => {
                            let m = p1 - p0;
                            Some([m.x, m.y, m.z])
                        }
                        _ => None,
                    }
                }
            };
            if let Some(vals) = vals {
                for (c, v) in vals.into_iter().enumerate() {
                    out.set(c, y, x, v);
                }
                valid[i] = true;
            }
        }
    }
    out.set_valid_mask(Some(valid))?;
    Ok(out)
}

/// Inverse of [`convert_parametrization`].
pub fn from_parametrization(
    g: &Grid,
    disp_t: &Grid,
    camera: &CameraModel,
    source: Parametrization,
) -> Result<SceneFlowField> {
    g.ensure_channels(3, "from_parametrization")?;
    disp_t.ensure_channels(1, "from_parametrization disparity")?;
    g.ensure_hw(disp_t.height(), disp_t.width(), "from_parametrization")?;
    let (h, w) = (g.height(), g.width());
    let mut out = SceneFlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d = disp_t.at(0, y, x);
            let (a, b, c) = (g.at(0, y, x), g.at(1, y, x), g.at(2, y, x));
            let vals = if !g.is_valid(y, x) || !disp_t.is_valid(y, x) {
                None
            } else {
                match source {
                    Parametrization::UvDeltaD => Some((a, b, c)),
                    Parametrization::UvDPrime => Some((a, b, c - d)),
                    Parametrization::Xyz => camera
                        .backproject(x as f64, y as f64, d)
                        .ok()
                        .map(|p| p + Vector3::new(a, b, c))
                        .and_then(|p| camera.project(&p).ok())
                        .map(|((px, py), d1)| (px - x as f64, py - y as f64, d1 - d)),
                }
            };
            match vals {
                Some((u, v, dd)) => {
                    out.u[i] = u;
                    out.v[i] = v;
                    out.delta_d[i] = dd;
                }
                None => out.valid[i] = false,
            }
        }
    }
    Ok(out)
}

/// Propagate an SE(3) field along an optical flow by bilinear splatting of
/// its twists. Targets average their weighted contributions; pixels that
/// receive nothing are identity. Splats leaving the frame are dropped.
pub fn forward_warp_lie(field: &Se3Field, flow: &SceneFlowField) -> Result<Se3Field> {
    flow.ensure_size(field.width, field.height, "forward_warp_lie")?;
    let (w, h) = (field.width, field.height);
    let mut acc = vec![[0.0f64; 6]; w * h];
    let mut weight = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !flow.valid[i] {
                continue;
            }
            let tx = x as f64 + flow.u[i];
            let ty = y as f64 + flow.v[i];
            if !tx.is_finite() || !ty.is_finite() {
                continue;
            }
            let twist = se3_log(&field.transforms[i])?.to_array();
            let (x0, y0) = (tx.floor(), ty.floor());
            let (fx, fy) = (tx - x0, ty - y0);
            let corners = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for (cx, cy, wgt) in corners {
                if wgt == 0.0 || cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
                    continue;
                }
                let j = cy as usize * w + cx as usize;
                for (a, t) in acc[j].iter_mut().zip(&twist) {
                    *a += wgt * t;
                }
                weight[j] += wgt;
            }
        }
    }
    let transforms = acc
        .iter()
        .zip(&weight)
        .map(|(a, &wsum)| {
            if wsum > 0.0 {
                let mean: Vec<f64> = a.iter().map(|v| v / wsum).collect();
                se3_exp(&Twist::from_slice(&mean))
            } else {
                Se3::identity()
            }
        })
        .collect();
    Se3Field::from_transforms(w, h, transforms)
}
