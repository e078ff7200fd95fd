//! KITTI scene flow outlier rates (D1, D2, Fl, SF) per region.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::Grid;
use crate::kitti_io::ResultSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierKind {
    /// One-channel disparity, absolute error.
    Disparity,
    /// Two leading channels `(u, v)`, end-point error.
    Flow,
}

/// A pixel is an outlier iff its error exceeds `abs` pixels and `rel`
/// times the ground-truth magnitude. `abs = None` disables the absolute test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierThresholds {
    pub abs: Option<f64>,
    pub rel: f64,
}

impl Default for OutlierThresholds {
    fn default() -> Self {
        Self {
            abs: Some(3.0),
            rel: 0.05,
        }
    }
}

impl OutlierThresholds {
    pub fn is_outlier(&self, err: f64, gt_magnitude: f64) -> bool {
        if err.is_nan() {
            return true;
        }
        self.abs.is_none_or(|a| err > a) && err > self.rel * gt_magnitude
    }
}

pub fn outlier_map(est: &Grid, gt: &Grid, kind: OutlierKind, valid: &[bool]) -> Result<Vec<bool>> {
    outlier_map_with(est, gt, kind, valid, &OutlierThresholds::default())
}

/// Per-pixel outlier flags; pixels outside `valid` are never outliers.
pub fn outlier_map_with(
    est: &Grid,
    gt: &Grid,
    kind: OutlierKind,
    valid: &[bool],
    thresholds: &OutlierThresholds,
) -> Result<Vec<bool>> {
    let (h, w) = (gt.height(), gt.width());
    est.ensure_hw(h, w, "outlier_map estimate")?;
    if valid.len() != h * w {
        return Err(Error::shape("outlier_map: validity mask size"));
    }
    let need = match kind {
        OutlierKind::Disparity => 1,
        OutlierKind::Flow => 2,
    };
    if est.channels() < need || gt.channels() < need {
        return Err(Error::shape(format!("outlier_map: need {need} channels")));
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !valid[i] {
                continue;
            }
            let (err, mag) = match kind {
                OutlierKind::Disparity => {
                    let g = gt.at(0, y, x);
                    ((est.at(0, y, x) - g).abs(), g.abs())
                }
                OutlierKind::Flow => {
                    let (gu, gv) = (gt.at(0, y, x), gt.at(1, y, x));
                    let (du, dv) = (est.at(0, y, x) - gu, est.at(1, y, x) - gv);
                    (du.hypot(dv), gu.hypot(gv))
                }
            };
            out[i] = thresholds.is_outlier(err, mag);
        }
    }
    Ok(out)
}

/// Ground-truth availability and the independently-moving-object region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub width: usize,
    pub height: usize,
    pub valid: Vec<bool>,
    pub foreground: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, valid: Vec<bool>, foreground: Vec<bool>) -> Result<Self> {
        if valid.len() != width * height || foreground.len() != width * height {
            return Err(Error::shape("region mask size"));
        }
        if foreground.iter().zip(&valid).any(|(&f, &v)| f && !v) {
            return Err(Error::usage("foreground must be a subset of valid pixels"));
        }
        Ok(Self {
            width,
            height,
            valid,
            foreground,
        })
    }

    /// All pixels valid, none foreground.
    pub fn all_background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            valid: vec![true; width * height],
            foreground: vec![false; width * height],
        }
    }

    /// Foreground from an object map (nonzero = foreground), clipped to `valid`.
    pub fn from_object_map(valid: Vec<bool>, object_map: &Grid) -> Result<Self> {
        let (h, w) = (object_map.height(), object_map.width());
        let foreground = object_map
            .channel(0)
            .iter()
            .zip(&valid)
            .map(|(&o, &v)| v && o != 0.0)
            .collect();
        Self::new(w, h, valid, foreground)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    D1,
    D2,
    Fl,
    Sf,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::D1, Metric::D2, Metric::Fl, Metric::Sf];

    pub fn name(self) -> &'static str {
        match self {
            Metric::D1 => "D1",
            Metric::D2 => "D2",
            Metric::Fl => "Fl",
            Metric::Sf => "SF",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Background,
    Foreground,
    All,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Background, Region::Foreground, Region::All];

    pub fn name(self) -> &'static str {
        match self {
            Region::Background => "bg",
            Region::Foreground => "fg",
            Region::All => "all",
        }
    }
}

/// Outlier counts and rates (percent); `None` for an empty region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "serialize_rates")]
    rates: [[Option<f64>; 3]; 4],
    #[serde(skip)]
    counts: [[(usize, usize); 3]; 4],
}

fn serialize_rates<S: serde::Serializer>(
    rates: &[[Option<f64>; 3]; 4],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(4))?;
    for (m, row) in Metric::ALL.iter().zip(rates) {
        let inner: std::collections::BTreeMap<&str, Option<f64>> = Region::ALL
            .iter()
            .zip(row)
            .map(|(r, v)| (r.name(), *v))
            .collect();
        map.serialize_entry(m.name(), &inner)?;
    }
    map.end()
}

impl MetricsReport {
    pub fn rate(&self, metric: Metric, region: Region) -> Option<f64> {
        self.rates[metric as usize][region as usize]
    }

    /// `(outliers, evaluated pixels)`.
    pub fn count(&self, metric: Metric, region: Region) -> (usize, usize) {
        self.counts[metric as usize][region as usize]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in Metric::ALL {
            for r in Region::ALL {
                match self.rate(m, r) {
                    Some(v) => writeln!(f, "{} {} {:.2}", m.name(), r.name(), v)?,
                    None => writeln!(f, "{} {} n/a", m.name(), r.name())?,
                }
            }
        }
        Ok(())
    }
}

/// Outlier rates of an estimate against ground truth.
///
/// Both sets register `disp_1` to the reference frame. Each metric is
/// evaluated where the region mask and the corresponding ground truth are
/// valid; SF requires all three. Invalid estimates count as outliers.
pub fn kitti_metrics(est: &ResultSet, gt: &ResultSet, masks: &RegionMask) -> Result<MetricsReport> {
    kitti_metrics_with(est, gt, masks, &OutlierThresholds::default())
}

pub fn kitti_metrics_with(
    est: &ResultSet,
    gt: &ResultSet,
    masks: &RegionMask,
    thresholds: &OutlierThresholds,
) -> Result<MetricsReport> {
    let (w, h) = (masks.width, masks.height);
    for g in [&est.disp_0, &est.disp_1, &gt.disp_0, &gt.disp_1] {
        g.ensure_hw(h, w, "kitti_metrics")?;
    }
    if est.flow.width != w || est.flow.height != h || gt.flow.width != w || gt.flow.height != h {
        return Err(Error::shape("kitti_metrics: flow size"));
    }
    let n = w * h;
    let gt_valid = [
        gt.disp_0.valid_mask(),
        gt.disp_1.valid_mask(),
        gt.flow.valid.clone(),
    ];
    let est_valid = [
        est.disp_0.valid_mask(),
        est.disp_1.valid_mask(),
        est.flow.valid.clone(),
    ];
    let eval_mask: Vec<Vec<bool>> = gt_valid
        .iter()
        .map(|v| v.iter().zip(&masks.valid).map(|(a, b)| *a && *b).collect())
        .collect();
    let est_flow = est.flow.to_grid();
    let gt_flow = gt.flow.to_grid();
    let raw = [
        outlier_map_with(&est.disp_0, &gt.disp_0, OutlierKind::Disparity, &eval_mask[0], thresholds)?,
        outlier_map_with(&est.disp_1, &gt.disp_1, OutlierKind::Disparity, &eval_mask[1], thresholds)?,
        outlier_map_with(&est_flow, &gt_flow, OutlierKind::Flow, &eval_mask[2], thresholds)?,
    ];
    let outliers: Vec<Vec<bool>> = (0..3)
        .map(|k| {
            (0..n)
                .map(|i| eval_mask[k][i] && (raw[k][i] || !est_valid[k][i]))
                .collect()
        })
        .collect();

    let mut counts = [[(0usize, 0usize); 3]; 4];
    for i in 0..n {
        let regions = [!masks.foreground[i], masks.foreground[i], true];
        for (k, flags) in outliers.iter().enumerate() {
            if eval_mask[k][i] {
                for (r, _) in regions.iter().enumerate().filter(|(_, in_r)| **in_r) {
                    counts[k][r].1 += 1;
                    counts[k][r].0 += flags[i] as usize;
                }
            }
        }
        if (0..3).all(|k| eval_mask[k][i]) {
            let sf = (0..3).any(|k| outliers[k][i]);
            for (r, _) in regions.iter().enumerate().filter(|(_, in_r)| **in_r) {
                counts[3][r].1 += 1;
                counts[3][r].0 += sf as usize;
            }
        }
    }
    let mut rates = [[None; 3]; 4];
    for (row, crow) in rates.iter_mut().zip(&counts) {
        for (slot, &(bad, total)) in row.iter_mut().zip(crow) {
            *slot = (total > 0).then(|| 100.0 * bad as f64 / total as f64);
        }
    }
    Ok(MetricsReport { rates, counts })
}
