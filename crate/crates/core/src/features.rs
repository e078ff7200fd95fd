//! Guidance features for the fusion network and the 43-channel input layout.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fields::{backward_warp, bilinear_sample, Grid};
use crate::geometry::SceneFlowField;

/// Channels per motion direction: flow (3), embedding (16), correlation (1),
/// disparity residual (1).
pub const BRANCH_CHANNELS: usize = 21;
pub const EMBEDDING_CHANNELS: usize = 16;
/// `D^t` followed by the forward and the backward block.
pub const FUSION_CHANNELS: usize = 1 + 2 * BRANCH_CHANNELS;

/// Channel order of the fusion input, stored in checkpoints.
pub const FUSION_CHANNEL_ORDER: &str = "disp_t,\
fw.u,fw.v,fw.delta_d,fw.emb[0..16],fw.corr,fw.disp_res,\
bw.u,bw.v,bw.delta_d,bw.emb[0..16],bw.corr,bw.disp_res";

/// Matching cost `<A(x), B(x + flow(x))> / sqrt(C)`. Lookups that leave the
/// grid, or start from invalid flow, are zero and invalid.
pub fn correlation_lookup(feat_a: &Grid, feat_b: &Grid, flow: &SceneFlowField) -> Result<Grid> {
    if feat_a.shape() != feat_b.shape() {
        return Err(Error::shape(format!(
            "correlation_lookup: features {:?} vs {:?}",
            feat_a.shape(),
            feat_b.shape()
        )));
    }
    let (c, h, w) = feat_a.shape();
    if flow.width != w || flow.height != h {
        return Err(Error::shape("correlation_lookup: flow size differs from features"));
    }
    let norm = (c as f64).sqrt();
    let mut out = Grid::zeros(1, h, w);
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !flow.valid[i] || !feat_a.is_valid(y, x) {
                continue;
            }
            let (b, inside) = bilinear_sample(feat_b, x as f64 + flow.u[i], y as f64 + flow.v[i]);
            if !inside {
                continue;
            }
            let dot: f64 = b.iter().enumerate().map(|(k, bv)| feat_a.at(k, y, x) * bv).sum();
            out.set(0, y, x, dot / norm);
            valid[i] = true;
        }
    }
    out.set_valid_mask(Some(valid))?;
    Ok(out)
}

/// `W(d_target, flow) - d_prime`: zero wherever the flow and `d_prime`
/// describe the scene correctly and the pixel stays visible.
pub fn disparity_residual(d_target: &Grid, flow: &SceneFlowField, d_prime: &Grid) -> Result<Grid> {
    d_target.ensure_channels(1, "disparity_residual target")?;
    d_prime.ensure_channels(1, "disparity_residual d'")?;
    d_prime.ensure_hw(d_target.height(), d_target.width(), "disparity_residual")?;
    let warped = backward_warp(d_target, flow)?;
    let (h, w) = (warped.height(), warped.width());
    let mut out = Grid::zeros(1, h, w);
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if warped.is_valid(y, x) && d_prime.is_valid(y, x) {
                out.set(0, y, x, warped.at(0, y, x) - d_prime.at(0, y, x));
                valid[y * w + x] = true;
            }
        }
    }
    out.set_valid_mask(Some(valid))?;
    Ok(out)
}

/// Per-pixel L2 distance between the warped other image and the reference.
pub fn brightness_constancy_error(img_t: &Grid, img_other: &Grid, flow: &SceneFlowField) -> Result<Grid> {
    img_t.ensure_channels(3, "brightness_constancy_error reference")?;
    img_other.ensure_channels(3, "brightness_constancy_error other")?;
    img_other.ensure_hw(img_t.height(), img_t.width(), "brightness_constancy_error")?;
    let warped = backward_warp(img_other, flow)?;
    let (h, w) = (img_t.height(), img_t.width());
    let mut out = Grid::zeros(1, h, w);
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if warped.is_valid(y, x) && img_t.is_valid(y, x) {
                let sq: f64 = (0..3)
                    .map(|c| (warped.at(c, y, x) - img_t.at(c, y, x)).powi(2))
                    .sum();
                out.set(0, y, x, sq.sqrt());
                valid[y * w + x] = true;
            }
        }
    }
    out.set_valid_mask(Some(valid))?;
    Ok(out)
}

/// Project an embedding field onto its top three principal components and
/// scale each to `[0, 1]`. Components beyond the covariance rank are 0.5.
/// Each component is oriented so its largest-magnitude loading is positive.
pub fn pca_rgb(emb: &Grid) -> Result<Grid> {
    let (c, h, w) = emb.shape();
    let pixels: Vec<usize> = (0..h * w).filter(|&i| emb.is_valid(i / w, i % w)).collect();
    if pixels.len() < 3 {
        return Err(Error::Degenerate(format!(
            "pca_rgb needs at least 3 pixels, got {}",
            pixels.len()
        )));
    }
    let n = pixels.len() as f64;
    let mean: Vec<f64> = (0..c)
        .map(|k| pixels.iter().map(|&i| emb.channel(k)[i]).sum::<f64>() / n)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(c, c);
    for &i in &pixels {
        for a in 0..c {
            let da = emb.channel(a)[i] - mean[a];
            for b in a..c {
                cov[(a, b)] += da * (emb.channel(b)[i] - mean[b]);
            }
        }
    }
    for a in 0..c {
        for b in a..c {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order.first().map_or(0.0, |&k| eig.eigenvalues[k]);

    let mut out = Grid::filled(3, h, w, 0.5);
    for (slot, &k) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[k];
        if !(top > 1e-20 && lambda > 1e-10 * top) {
            continue;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = axis
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, v)| if v.abs() > best.1.abs() { (j, v) } else { best });
        if lead.1 < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        let scores: Vec<f64> = (0..h * w)
            .map(|i| (0..c).map(|j| (emb.channel(j)[i] - mean[j]) * axis[j]).sum())
            .collect();
        let (lo, hi) = pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(scores[i]), hi.max(scores[i])));
        if hi > lo {
            let dst = out.channel_mut(slot);
            for (d, s) in dst.iter_mut().zip(&scores) {
                *d = ((s - lo) / (hi - lo)).clamp(0.0, 1.0);
            }
        }
    }
    if let Some(v) = emb.valid() {
        out.set_valid_mask(Some(v.to_vec()))?;
    }
    Ok(out)
}

/// Inputs describing one motion direction at full resolution.
#[derive(Debug, Clone)]
pub struct BranchFeatures {
    /// `(u, v, delta_d)`.
    pub flow: Grid,
    pub embedding: Grid,
    pub correlation: Grid,
    pub disparity_residual: Grid,
}

impl BranchFeatures {
    fn parts(&self) -> [(&Grid, usize, &'static str); 4] {
        [
            (&self.flow, 3, "flow"),
            (&self.embedding, EMBEDDING_CHANNELS, "embedding"),
            (&self.correlation, 1, "correlation"),
            (&self.disparity_residual, 1, "disparity residual"),
        ]
    }
}

/// Dense 43-channel network input plus the combined validity of its sources.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub grid: Grid,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl FusionInput {
    fn block_start(dir: Direction) -> usize {
        match dir {
            Direction::Forward => 1,
            Direction::Backward => 1 + BRANCH_CHANNELS,
        }
    }

    pub fn disparity(&self) -> Grid {
        self.grid.slice_channels(0, 1).expect("channel 0 exists")
    }

    /// `(u, v, delta_d)` channels of one direction.
    pub fn flow(&self, dir: Direction) -> Grid {
        let s = Self::block_start(dir);
        self.grid.slice_channels(s, s + 3).expect("flow block exists")
    }

    /// Recover the (zero-filled) features of one direction.
    pub fn branch(&self, dir: Direction) -> BranchFeatures {
        let s = Self::block_start(dir);
        let sl = |a: usize, b: usize| self.grid.slice_channels(s + a, s + b).expect("block exists");
        BranchFeatures {
            flow: sl(0, 3),
            embedding: sl(3, 3 + EMBEDDING_CHANNELS),
            correlation: sl(19, 20),
            disparity_residual: sl(20, 21),
        }
    }
}

fn zero_filled(g: &Grid) -> Grid {
    let mut out = g.clone();
    if let Some(valid) = g.valid().map(|v| v.to_vec()) {
        let n = g.height() * g.width();
        for c in 0..g.channels() {
            let ch = out.channel_mut(c);
            for p in 0..n {
                if !valid[p] {
                    ch[p] = 0.0;
                }
            }
        }
    }
    out.set_valid_mask(None).expect("clearing a mask cannot fail");
    out
}

/// Concatenate `D^t`, the forward block and the backward block.
pub fn assemble_fusion_input(
    d_t: &Grid,
    fw: &BranchFeatures,
    bw: &BranchFeatures,
) -> Result<FusionInput> {
    d_t.ensure_channels(1, "fusion input disparity")?;
    let (h, w) = (d_t.height(), d_t.width());
    let mut sources: Vec<&Grid> = vec![d_t];
    for (branch, tag) in [(fw, "forward"), (bw, "backward")] {
        for (g, channels, what) in branch.parts() {
            g.ensure_channels(channels, &format!("{tag} {what}"))?;
            g.ensure_hw(h, w, &format!("{tag} {what}"))?;
            sources.push(g);
        }
    }
    let mut valid = vec![true; h * w];
    for g in &sources {
        if let Some(v) = g.valid() {
            valid.iter_mut().zip(v).for_each(|(a, b)| *a &= *b);
        }
    }
    let filled: Vec<Grid> = sources.iter().map(|g| zero_filled(g)).collect();
    let refs: Vec<&Grid> = filled.iter().collect();
    let grid = Grid::concat(&refs)?;
    debug_assert_eq!(grid.channels(), FUSION_CHANNELS);
    Ok(FusionInput { grid, valid })
}
