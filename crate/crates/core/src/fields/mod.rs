//! Dense grids, bilinear sampling, backward warping and 8x convex upsampling.

mod sample;
mod upsample;

pub(crate) use sample::bilinear_corners;
pub use sample::{backward_warp, bilinear_sample};
pub use upsample::{convex_upsample, lie_upsample, UpsampleMask, UPSAMPLE_FACTOR};

use crate::error::{Error, Result};

/// Row-major `C x H x W` field with an optional per-pixel validity mask.
///
/// Values are held in 64-bit floats; the on-disk container stores 32-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    valid: Option<Vec<bool>>,
}

impl Grid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
            valid: None,
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "grid data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            valid: None,
        })
    }

    /// Build a grid by evaluating `f(c, y, x)` everywhere.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
            valid: None,
        }
    }

    pub fn with_valid(mut self, valid: Vec<bool>) -> Result<Self> {
        self.set_valid_mask(Some(valid))?;
        Ok(self)
    }

    pub fn set_valid_mask(&mut self, valid: Option<Vec<bool>>) -> Result<()> {
        if let Some(v) = &valid {
            if v.len() != self.height * self.width {
                return Err(Error::shape(format!(
                    "validity mask has {} entries, expected {}",
                    v.len(),
                    self.height * self.width
                )));
            }
        }
        self.valid = valid;
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn valid(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    /// Validity of every pixel; all true when no mask is attached.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.valid
            .clone()
            .unwrap_or_else(|| vec![true; self.height * self.width])
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid
            .as_ref()
            .is_none_or(|v| v[y * self.width + x])
    }

    pub fn set_valid(&mut self, y: usize, x: usize, flag: bool) {
        let (h, w) = (self.height, self.width);
        let mask = self.valid.get_or_insert_with(|| vec![true; h * w]);
        mask[y * w + x] = flag;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Values of all channels at one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.at(c, y, x)).collect()
    }

    pub fn ensure_hw(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::shape(format!(
                "{what}: grid is {}x{}, expected {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn ensure_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.channels != channels {
            return Err(Error::shape(format!(
                "{what}: expected {channels} channels, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Stack grids along the channel axis; validity is the conjunction.
    pub fn concat(parts: &[&Grid]) -> Result<Grid> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("concat of zero grids"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut valid: Option<Vec<bool>> = None;
        let mut channels = 0;
        for g in parts {
            g.ensure_hw(h, w, "concat")?;
            data.extend_from_slice(&g.data);
            channels += g.channels;
            if let Some(m) = &g.valid {
                let acc = valid.get_or_insert_with(|| vec![true; h * w]);
                acc.iter_mut().zip(m).for_each(|(a, b)| *a &= *b);
            }
        }
        Ok(Grid {
            channels,
            height: h,
            width: w,
            data,
            valid,
        })
    }

    /// Copy of channels `start..end`, keeping the validity mask.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Grid> {
        if start > end || end > self.channels {
            return Err(Error::shape(format!(
                "channel range {start}..{end} outside 0..{}",
                self.channels
            )));
        }
        let n = self.height * self.width;
        Ok(Grid {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
            valid: self.valid.clone(),
        })
    }

    /// Every `factor`-th pixel starting at the origin.
    pub fn subsample(&self, factor: usize) -> Grid {
        let (h, w) = (self.height.div_ceil(factor), self.width.div_ceil(factor));
        let mut out = Grid::from_fn(self.channels, h, w, |c, y, x| {
            self.at(c, y * factor, x * factor)
        });
        if self.valid.is_some() {
            let mask = (0..h * w)
                .map(|i| self.is_valid((i / w) * factor, (i % w) * factor))
                .collect();
            out.valid = Some(mask);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Largest absolute difference over pixels valid in both grids.
    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        let n = self.height * self.width;
        let mut worst = 0.0f64;
        for c in 0..self.channels {
            for p in 0..n {
                let ok = self.valid.as_ref().is_none_or(|v| v[p])
                    && other.valid.as_ref().is_none_or(|v| v[p]);
                if ok {
                    worst = worst.max((self.data[c * n + p] - other.data[c * n + p]).abs());
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_slice_recover_parts() {
        let a = Grid::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let mut b = Grid::filled(1, 3, 4, 7.0);
        b.set_valid(1, 2, false);
        let cat = Grid::concat(&[&a, &b]).unwrap();
        assert_eq!(cat.channels(), 3);
        assert!(!cat.is_valid(1, 2));
        assert_eq!(cat.slice_channels(0, 2).unwrap().data(), a.data());
        assert_eq!(cat.slice_channels(2, 3).unwrap().data(), b.data());
        assert!(Grid::concat(&[&a, &Grid::zeros(1, 2, 4)]).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Grid::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(Grid::zeros(1, 2, 2).with_valid(vec![true; 3]).is_err());
    }

    #[test]
    fn subsample_picks_block_origins() {
        let g = Grid::from_fn(1, 16, 16, |_, y, x| (y * 16 + x) as f64);
        let s = g.subsample(8);
        assert_eq!(s.shape(), (1, 2, 2));
        assert_eq!(s.data(), &[0.0, 8.0, 128.0, 136.0]);
    }
}
