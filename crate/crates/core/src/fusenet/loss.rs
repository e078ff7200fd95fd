use serde::{Deserialize, Serialize};

use super::{Graph, NodeId, Scalar};
use crate::error::{Error, Result};
use crate::fields::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon: f64,
    pub gamma: f64,
    /// Weight of the disparity term.
    pub alpha: f64,
    /// Weight of the per-iteration baseline loss in the total.
    pub mu: f64,
    pub r3d_decay: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            gamma: 0.4,
            alpha: 2.0,
            mu: 0.1,
            r3d_decay: 0.8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::usage(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::usage(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        for (name, v) in [("alpha", self.alpha), ("mu", self.mu), ("r3d_decay", self.r3d_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::usage(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check_plane(len: usize, n: usize, what: &str) -> Result<()> {
    if len != n {
        return Err(Error::shape(format!("{what}: expected {n} values, got {len}")));
    }
    Ok(())
}

/// Value and gradient of the fusion loss over planar `(u, v, delta_d)`
/// predictions against `(u, v, d')` targets.
pub(crate) fn fuse_terms<T: Scalar>(
    pred: &[T],
    gt: &[f64],
    d_t: &[f64],
    valid: &[bool],
    cfg: &LossConfig,
) -> Result<(T, Vec<T>)> {
    cfg.validate()?;
    let n = valid.len();
    check_plane(pred.len(), 3 * n, "fusion loss prediction")?;
    check_plane(gt.len(), 3 * n, "fusion loss target")?;
    check_plane(d_t.len(), n, "fusion loss disparity")?;
    if !valid.iter().any(|&v| v) {
        return Err(Error::Degenerate("fusion loss over an empty valid set".into()));
    }
    let c = |v: f64| T::from_f64_lossy(v);
    let (alpha, eps, gamma) = (c(cfg.alpha), c(cfg.epsilon), c(cfg.gamma));
    let mut total = T::zero();
    let mut grad = vec![T::zero(); 3 * n];
    for p in (0..n).filter(|&p| valid[p]) {
        let eu = pred[p] - c(gt[p]);
        let ev = pred[n + p] - c(gt[n + p]);
        let ed = c(d_t[p]) + pred[2 * n + p] - c(gt[2 * n + p]);
        let s = alpha * ed.abs() + eu.abs() + ev.abs() + eps;
        total += s.powf(gamma);
        let k = gamma * s.powf(gamma - T::one());
        grad[p] = k * sign(eu);
        grad[n + p] = k * sign(ev);
        grad[2 * n + p] = k * alpha * sign(ed);
    }
    Ok((total, grad))
}

/// Mean over valid pixels of the summed absolute `(u, v, delta_d)` error.
pub(crate) fn l1_terms<T: Scalar>(pred: &[T], gt: &[f64], valid: &[bool]) -> Result<(T, Vec<T>)> {
    let n = valid.len();
    check_plane(pred.len(), 3 * n, "L1 prediction")?;
    check_plane(gt.len(), 3 * n, "L1 target")?;
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::Degenerate("L1 loss over an empty valid set".into()));
    }
    let inv = T::one() / T::from_usize(count).expect("count fits");
    let mut total = T::zero();
    let mut grad = vec![T::zero(); 3 * n];
    for c in 0..3 {
        for p in (0..n).filter(|&p| valid[p]) {
            let e = pred[c * n + p] - T::from_f64_lossy(gt[c * n + p]);
            total += e.abs();
            grad[c * n + p] = sign(e) * inv;
        }
    }
    Ok((total * inv, grad))
}

fn three_channel(g: &Grid, h: usize, w: usize, what: &str) -> Result<()> {
    g.ensure_channels(3, what)?;
    g.ensure_hw(h, w, what)
}

/// Robust sublinear loss `sum (alpha |d' - d'_gt| + |u - u_gt| + |v - v_gt| + eps)^gamma`
/// over valid pixels, with `d' = d_t + delta_d`.
///
/// `pred` holds `(u, v, delta_d)`, `gt` holds `(u, v, d')`.
pub fn loss_fuse(pred: &Grid, gt: &Grid, d_t: &Grid, valid: &[bool], cfg: &LossConfig) -> Result<f64> {
    let (h, w) = (pred.height(), pred.width());
    three_channel(pred, h, w, "fusion loss prediction")?;
    three_channel(gt, h, w, "fusion loss target")?;
    d_t.ensure_channels(1, "fusion loss disparity")?;
    d_t.ensure_hw(h, w, "fusion loss disparity")?;
    fuse_terms(pred.data(), gt.data(), d_t.data(), valid, cfg).map(|(v, _)| v)
}

/// Weighted sum of per-iteration mean L1 errors; the last of `n` iterations
/// has weight 1, iteration `i` has weight `decay^(n - 1 - i)`.
///
/// `gt` holds `(u, v, delta_d)`.
pub fn loss_r3d(iter_preds: &[Grid], gt: &Grid, valid: &[bool], cfg: &LossConfig) -> Result<f64> {
    if iter_preds.is_empty() {
        return Err(Error::usage("per-iteration loss needs at least one prediction"));
    }
    let (h, w) = (gt.height(), gt.width());
    three_channel(gt, h, w, "per-iteration loss target")?;
    let n = iter_preds.len();
    let mut total = 0.0;
    for (i, p) in iter_preds.iter().enumerate() {
        three_channel(p, h, w, "per-iteration prediction")?;
        let (l, _) = l1_terms(p.data(), gt.data(), valid)?;
        total += cfg.r3d_decay.powi((n - 1 - i) as i32) * l;
    }
    Ok(total)
}

pub fn total_loss(fuse: f64, r3d: f64, cfg: &LossConfig) -> f64 {
    fuse + cfg.mu * r3d
}

impl<T: Scalar> Graph<T> {
    /// Differentiable [`loss_fuse`] on a `3 x H x W` node.
    pub fn fuse_loss(
        &mut self,
        pred: NodeId,
        gt: &Grid,
        d_t: &Grid,
        valid: &[bool],
        cfg: &LossConfig,
    ) -> Result<NodeId> {
        let (value, grad) = fuse_terms(self.value(pred).data(), gt.data(), d_t.data(), valid, cfg)?;
        Ok(self.reduce(pred, value, grad))
    }

    /// Differentiable mean L1 error of a `3 x H x W` node against `(u, v, delta_d)`.
    pub fn l1_loss(&mut self, pred: NodeId, gt: &Grid, valid: &[bool]) -> Result<NodeId> {
        let (value, grad) = l1_terms(self.value(pred).data(), gt.data(), valid)?;
        Ok(self.reduce(pred, value, grad))
    }
}
