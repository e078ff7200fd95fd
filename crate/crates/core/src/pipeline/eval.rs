use std::path::Path;

use crate::error::Result;
use crate::fields::Grid;
use crate::kitti_io::{read_gray8_png, ResultSet};
use crate::metrics::{kitti_metrics, MetricsReport, RegionMask};

/// 8-bit object map; nonzero marks foreground.
pub fn read_foreground_map(path: impl AsRef<Path>) -> Result<Grid> {
    read_gray8_png(path)
}

/// Outlier rates of the result set in `est` against the one in `gt`.
/// Without an object map every pixel counts as background.
pub fn evaluate_dirs(est: impl AsRef<Path>, gt: impl AsRef<Path>, fg_map: Option<&Path>) -> Result<MetricsReport> {
    let est = ResultSet::read(est)?;
    let gt = ResultSet::read(gt)?;
    let (w, h) = (gt.disp_0.width(), gt.disp_0.height());
    let masks = match fg_map {
        Some(p) => {
            let map = read_foreground_map(p)?;
            map.ensure_hw(h, w, "foreground map")?;
            RegionMask::from_object_map(vec![true; w * h], &map)?
        }
        None => RegionMask::all_background(w, h),
    };
    kitti_metrics(&est, &gt, &masks)
}
