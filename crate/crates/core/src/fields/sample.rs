use super::Grid;
use crate::error::Result;
use crate::geometry::SceneFlowField;

/// Coordinates this close to an integer are treated as integral, so that
/// round-off in otherwise exact motions cannot leak weight onto neighbors.
pub(crate) const SNAP_TOLERANCE: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_TOLERANCE {
        r
    } else {
        v
    }
}

/// Corner pixels and weights of a bilinear lookup.
///
/// Corners carrying zero weight may lie outside the grid; their indices are
/// clamped. Returns `None` if a corner with nonzero weight is outside.
pub(crate) fn bilinear_corners(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
) -> Option<[(usize, usize, f64); 4]> {
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    let (x, y) = (snap(x), snap(y));
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let weights = [
        (xi, yi, (1.0 - fx) * (1.0 - fy)),
        (xi + 1, yi, fx * (1.0 - fy)),
        (xi, yi + 1, (1.0 - fx) * fy),
        (xi + 1, yi + 1, fx * fy),
    ];
    let mut out = [(0usize, 0usize, 0.0f64); 4];
    for (slot, &(cx, cy, wgt)) in out.iter_mut().zip(&weights) {
        let inside = cx >= 0 && cy >= 0 && (cx as usize) < width && (cy as usize) < height;
        if !inside {
            if wgt != 0.0 {
                return None;
            }
            let cx = cx.clamp(0, width as i64 - 1) as usize;
            let cy = cy.clamp(0, height as i64 - 1) as usize;
            *slot = (cx, cy, 0.0);
        } else {
            *slot = (cx as usize, cy as usize, wgt);
        }
    }
    Some(out)
}

/// Bilinear lookup of every channel at subpixel `(x, y)`.
///
/// The flag is false when a contributing corner lies outside
/// `[0, W-1] x [0, H-1]`; values are then taken with border clamping.
pub fn bilinear_sample(g: &Grid, x: f64, y: f64) -> (Vec<f64>, bool) {
    match bilinear_corners(x, y, g.width(), g.height()) {
        Some(corners) => (interpolate(g, &corners), true),
        None => {
            let cx = if x.is_finite() { x.clamp(0.0, (g.width() - 1) as f64) } else { 0.0 };
            let cy = if y.is_finite() { y.clamp(0.0, (g.height() - 1) as f64) } else { 0.0 };
            let corners = bilinear_corners(cx, cy, g.width(), g.height())
                .expect("clamped coordinates are inside");
            (interpolate(g, &corners), false)
        }
    }
}

fn interpolate(g: &Grid, corners: &[(usize, usize, f64); 4]) -> Vec<f64> {
    (0..g.channels())
        .map(|c| {
            corners
                .iter()
                .filter(|k| k.2 != 0.0)
                .map(|&(x, y, w)| w * g.at(c, y, x))
                .sum()
        })
        .collect()
}

/// Sample `g` at `p + flow(p)` for every pixel `p`, registering it to the
/// flow's reference frame.
///
/// Output pixels are invalid where the flow is invalid, the lookup leaves the
/// grid, or a contributing source pixel is itself invalid.
pub fn backward_warp(g: &Grid, flow: &SceneFlowField) -> Result<Grid> {
    g.ensure_hw(flow.height, flow.width, "backward_warp")?;
    let (h, w) = (g.height(), g.width());
    let mut out = Grid::zeros(g.channels(), h, w);
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !flow.valid[i] {
                continue;
            }
            let sx = x as f64 + flow.u[i];
            let sy = y as f64 + flow.v[i];
            let Some(corners) = bilinear_corners(sx, sy, w, h) else {
                continue;
            };
            if corners.iter().any(|&(cx, cy, wgt)| wgt != 0.0 && !g.is_valid(cy, cx)) {
                continue;
            }
            for (c, v) in interpolate(g, &corners).into_iter().enumerate() {
                out.set(c, y, x, v);
            }
            valid[i] = true;
        }
    }
    out.set_valid_mask(Some(valid))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Grid {
        Grid::from_fn(1, h, w, |_, _, x| x as f64)
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let g = Grid::from_fn(2, 3, 4, |c, y, x| (c * 12 + y * 4 + x) as f64);
        let (v, ok) = bilinear_sample(&g, 3.0, 2.0);
        assert!(ok);
        assert_eq!(v, vec![11.0, 23.0]);
    }

    #[test]
    fn midpoint_averages() {
        let g = ramp(2, 1);
        assert_eq!(bilinear_sample(&g, 0.5, 0.0), (vec![0.5], true));
    }

    #[test]
    fn outside_is_flagged() {
        let g = ramp(4, 4);
        assert!(!bilinear_sample(&g, -0.5, 0.0).1);
        assert!(!bilinear_sample(&g, 3.5, 1.0).1);
        assert!(!bilinear_sample(&g, f64::NAN, 1.0).1);
        assert!(bilinear_sample(&g, 3.0, 3.0).1);
    }

    #[test]
    fn near_integer_coordinates_snap() {
        let g = ramp(4, 1);
        assert_eq!(bilinear_sample(&g, -1e-15, 0.0), (vec![0.0], true));
        assert_eq!(bilinear_sample(&g, 3.0 + 1e-13, 0.0), (vec![3.0], true));
        assert!(!bilinear_sample(&g, -1e-6, 0.0).1);
    }

    #[test]
    fn zero_flow_is_identity() {
        let g = Grid::from_fn(3, 5, 6, |c, y, x| (c as f64) * 0.5 + (y * x) as f64);
        let flow = SceneFlowField::zeros(6, 5);
        let out = backward_warp(&g, &flow).unwrap();
        assert_eq!(out.data(), g.data());
        assert!(out.valid_mask().iter().all(|&v| v));
    }

    #[test]
    fn unit_shift_on_ramp() {
        let (w, h) = (6, 3);
        let g = ramp(w, h);
        let mut flow = SceneFlowField::zeros(w, h);
        flow.u.iter_mut().for_each(|u| *u = 1.0);
        let out = backward_warp(&g, &flow).unwrap();
        for y in 0..h {
            for x in 0..w {
                if x + 2 <= w {
                    assert!(out.is_valid(y, x));
                    assert_eq!(out.at(0, y, x), x as f64 + 1.0);
                } else {
                    assert!(!out.is_valid(y, x));
                }
            }
        }
    }

    #[test]
    fn invalid_sources_propagate() {
        let mut g = ramp(4, 4);
        g.set_valid(1, 2, false);
        let mut flow = SceneFlowField::zeros(4, 4);
        flow.u[4 + 1] = 0.5; // pixel (1,1) samples between x=1 and x=2
        flow.valid[0] = false;
        let out = backward_warp(&g, &flow).unwrap();
        assert!(!out.is_valid(1, 1));
        assert!(!out.is_valid(1, 2));
        assert!(!out.is_valid(0, 0));
        assert!(out.is_valid(0, 1));
    }

    #[test]
    fn shape_mismatch() {
        assert!(backward_warp(&ramp(4, 4), &SceneFlowField::zeros(5, 4)).is_err());
    }
}
