//! 8-bit renderings of flows, disparities, embeddings and error maps.

use crate::error::{Error, Result};
use crate::features::pca_rgb;
use crate::fields::Grid;
use crate::geometry::SceneFlowField;

/// Standard optical-flow color wheel (red, yellow, green, cyan, blue, magenta).
fn color_wheel() -> Vec<[f64; 3]> {
    let segments: [(usize, [f64; 3], [f64; 3]); 6] = [
        (15, [255.0, 0.0, 0.0], [255.0, 255.0, 0.0]),
        (6, [255.0, 255.0, 0.0], [0.0, 255.0, 0.0]),
        (4, [0.0, 255.0, 0.0], [0.0, 255.0, 255.0]),
        (11, [0.0, 255.0, 255.0], [0.0, 0.0, 255.0]),
        (13, [0.0, 0.0, 255.0], [255.0, 0.0, 255.0]),
        (6, [255.0, 0.0, 255.0], [255.0, 0.0, 0.0]),
    ];
    let mut wheel = Vec::new();
    for (n, from, to) in segments {
        for i in 0..n {
            let t = i as f64 / n as f64;
            wheel.push(std::array::from_fn(|c| from[c] + (to[c] - from[c]) * t));
        }
    }
    wheel
}

fn wheel_color(wheel: &[[f64; 3]], u: f64, v: f64) -> [u8; 3] {
    let rad = (u * u + v * v).sqrt();
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (angle + 1.0) / 2.0 * (wheel.len() - 1) as f64;
    let k0 = fk.floor() as usize % wheel.len();
    let k1 = (k0 + 1) % wheel.len();
    let f = fk - fk.floor();
    std::array::from_fn(|c| {
        let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
        let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
        (255.0 * col).round().clamp(0.0, 255.0) as u8
    })
}

/// Hue encodes direction, saturation magnitude relative to the largest
/// valid vector. Zero flow is white; invalid pixels are black.
pub fn flow_rgb(flow: &SceneFlowField) -> Vec<u8> {
    let wheel = color_wheel();
    let max = (0..flow.len())
        .filter(|&i| flow.valid[i])
        .map(|i| flow.u[i].hypot(flow.v[i]))
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    (0..flow.len())
        .flat_map(|i| {
            if flow.valid[i] {
                wheel_color(&wheel, flow.u[i] / scale, flow.v[i] / scale)
            } else {
                [0; 3]
            }
        })
        .collect()
}

/// Viridis over the valid disparity range; invalid pixels are black.
pub fn disparity_rgb(d: &Grid) -> Result<Vec<u8>> {
    d.ensure_channels(1, "disparity visualization")?;
    let valid = d.valid_mask();
    let vals = d.data();
    let (lo, hi) = vals
        .iter()
        .zip(&valid)
        .filter(|(_, &ok)| ok)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(vals
        .iter()
        .zip(&valid)
        .flat_map(|(&v, &ok)| {
            if ok {
                let c = colorous::VIRIDIS.eval_continuous(((v - lo) / span).clamp(0.0, 1.0));
                [c.r, c.g, c.b]
            } else {
                [0; 3]
            }
        })
        .collect())
}

/// Principal components of the embedding as 8-bit RGB.
pub fn embedding_rgb(emb: &Grid) -> Result<Vec<u8>> {
    let rgb = pca_rgb(emb)?;
    let n = rgb.height() * rgb.width();
    Ok((0..n)
        .flat_map(|i| std::array::from_fn::<u8, 3, _>(|c| (rgb.data()[c * n + i] * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect())
}

/// Outcome of a candidate relative to a reference, per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorState {
    BothInlier,
    /// Reference outlier, candidate inlier.
    Improved,
    /// Reference inlier, candidate outlier.
    Regressed,
    BothOutlier,
}

/// Grey, blue, red and yellow, in [`ErrorState`] order.
pub const ERROR_STATE_COLORS: [[u8; 3]; 4] = [[160, 160, 160], [40, 90, 230], [220, 40, 40], [240, 200, 40]];

impl ErrorState {
    pub fn of(reference_outlier: bool, candidate_outlier: bool) -> Self {
        match (reference_outlier, candidate_outlier) {
            (false, false) => ErrorState::BothInlier,
            (true, false) => ErrorState::Improved,
            (false, true) => ErrorState::Regressed,
            (true, true) => ErrorState::BothOutlier,
        }
    }

    pub fn color(self) -> [u8; 3] {
        ERROR_STATE_COLORS[self as usize]
    }
}

/// Four-state comparison map of two outlier masks.
pub fn error_state_rgb(reference: &[bool], candidate: &[bool]) -> Result<Vec<u8>> {
    if reference.len() != candidate.len() {
        return Err(Error::shape("error map: outlier masks differ in size"));
    }
    Ok(reference
        .iter()
        .zip(candidate)
        .flat_map(|(&r, &c)| ErrorState::of(r, c).color())
        .collect())
}
