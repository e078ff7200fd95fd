use super::Grid;
use crate::error::{Error, Result};
use crate::geometry::{se3_exp, Se3Field, Twist};

/// Resolution ratio between baseline outputs and full-resolution inputs.
pub const UPSAMPLE_FACTOR: usize = 8;

const SUBPIXELS: usize = UPSAMPLE_FACTOR * UPSAMPLE_FACTOR;
const NEIGHBORS: usize = 9;

/// Raw convex-upsampling logits for a low-resolution grid.
///
/// Channel `sub * 9 + k` holds the logit of neighbor `k` (row-major over the
/// 3x3 neighborhood, center `k = 4`) for subpixel `sub = sy * 8 + sx`.
/// Softmax over the 9 neighbors is applied at use time.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleMask {
    height: usize,
    width: usize,
    logits: Vec<f64>,
}

impl UpsampleMask {
    pub const CHANNELS: usize = SUBPIXELS * NEIGHBORS;

    pub fn from_logits(height: usize, width: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != Self::CHANNELS * height * width {
            return Err(Error::shape(format!(
                "upsampling mask needs {} logits for {height}x{width}, got {}",
                Self::CHANNELS * height * width,
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("upsampling mask contains non-finite logits"));
        }
        Ok(Self {
            height,
            width,
            logits,
        })
    }

    /// All-zero logits: every subpixel is the mean of its 3x3 neighborhood.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            logits: vec![0.0; Self::CHANNELS * height * width],
        }
    }

    /// Logits that put (numerically) all weight on the center neighbor.
    pub fn center(height: usize, width: usize) -> Self {
        let mut m = Self::uniform(height, width);
        for sub in 0..SUBPIXELS {
            for k in 0..NEIGHBORS {
                let v = if k == 4 { 0.0 } else { -1e4 };
                let start = (sub * NEIGHBORS + k) * height * width;
                m.logits[start..start + height * width].fill(v);
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    #[inline]
    fn logit(&self, sub: usize, k: usize, y: usize, x: usize) -> f64 {
        self.logits[((sub * NEIGHBORS + k) * self.height + y) * self.width + x]
    }

    pub fn set_logit(&mut self, sub: usize, k: usize, y: usize, x: usize, value: f64) {
        let i = ((sub * NEIGHBORS + k) * self.height + y) * self.width + x;
        self.logits[i] = value;
    }

    /// Softmax-normalized neighbor weights of one subpixel.
    pub fn weights(&self, sub: usize, y: usize, x: usize) -> [f64; NEIGHBORS] {
        let mut w = [0.0; NEIGHBORS];
        let mut peak = f64::NEG_INFINITY;
        for (k, slot) in w.iter_mut().enumerate() {
            *slot = self.logit(sub, k, y, x);
            peak = peak.max(*slot);
        }
        let mut total = 0.0;
        for slot in w.iter_mut() {
            *slot = (*slot - peak).exp();
            total += *slot;
        }
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    pub fn to_grid(&self) -> Grid {
        Grid::from_vec(Self::CHANNELS, self.height, self.width, self.logits.clone())
            .expect("mask length is consistent")
    }

    pub fn from_grid(g: &Grid) -> Result<Self> {
        g.ensure_channels(Self::CHANNELS, "upsampling mask")?;
        Self::from_logits(g.height(), g.width(), g.data().to_vec())
    }
}

/// 8x upsampling where each fine pixel is a convex combination of the 3x3
/// coarse neighborhood around its parent, with replicate padding.
pub fn convex_upsample(g: &Grid, mask: &UpsampleMask) -> Result<Grid> {
    g.ensure_hw(mask.height, mask.width, "convex_upsample")?;
    let (h, w) = (g.height(), g.width());
    let (oh, ow) = (h * UPSAMPLE_FACTOR, w * UPSAMPLE_FACTOR);
    let mut out = Grid::zeros(g.channels(), oh, ow);
    let track_valid = g.valid().is_some();
    let mut valid = vec![true; oh * ow];

    for y in 0..h {
        for x in 0..w {
            let mut neighbors = [(0usize, 0usize); NEIGHBORS];
            for (k, n) in neighbors.iter_mut().enumerate() {
                let ny = (y as i64 + k as i64 / 3 - 1).clamp(0, h as i64 - 1) as usize;
                let nx = (x as i64 + k as i64 % 3 - 1).clamp(0, w as i64 - 1) as usize;
                *n = (ny, nx);
            }
            for sub in 0..SUBPIXELS {
                let weights = mask.weights(sub, y, x);
                let oy = y * UPSAMPLE_FACTOR + sub / UPSAMPLE_FACTOR;
                let ox = x * UPSAMPLE_FACTOR + sub % UPSAMPLE_FACTOR;
                for c in 0..g.channels() {
                    let v: f64 = weights
                        .iter()
                        .zip(&neighbors)
                        .map(|(wgt, &(ny, nx))| wgt * g.at(c, ny, nx))
                        .sum();
                    out.set(c, oy, ox, v);
                }
                if track_valid {
                    valid[oy * ow + ox] = weights
                        .iter()
                        .zip(&neighbors)
                        .all(|(wgt, &(ny, nx))| *wgt == 0.0 || g.is_valid(ny, nx));
                }
            }
        }
    }
    if track_valid {
        out.set_valid_mask(Some(valid))?;
    }
    Ok(out)
}

/// Convex upsampling of an SE(3) field, averaging in the Lie algebra.
pub fn lie_upsample(field: &Se3Field, mask: &UpsampleMask) -> Result<Se3Field> {
    let twists = field.to_twist_grid()?;
    let up = convex_upsample(&twists, mask)?;
    let (h, w) = (up.height(), up.width());
    let mut transforms = Vec::with_capacity(h * w);
    let mut buf = [0.0; 6];
    for y in 0..h {
        for x in 0..w {
            for (c, b) in buf.iter_mut().enumerate() {
                *b = up.at(c, y, x);
            }
            transforms.push(se3_exp(&Twist::from_slice(&buf)));
        }
    }
    Se3Field::from_transforms(w, h, transforms)
}
