//! Fusion pipeline: coarse baseline exports in, fused full-resolution
//! scene flow out; plus toy training, evaluation and visualization.

mod eval;
mod train;
mod viz;

pub use eval::{evaluate_dirs, read_foreground_map};
pub use train::{load_dataset, train_toy, write_loss_log, TrainConfig, TrainOutcome, TrainSample};
pub use viz::{
    disparity_rgb, embedding_rgb, error_state_rgb, flow_rgb, ErrorState, ERROR_STATE_COLORS,
};

use std::path::Path;

use crate::error::{Error, Result, StageExt};
use crate::features::{assemble_fusion_input, correlation_lookup, disparity_residual, BranchFeatures, FusionInput};
use crate::fields::{convex_upsample, lie_upsample, Grid, UpsampleMask, UPSAMPLE_FACTOR};
use crate::fusenet::{unet_forward, Parameters, UNetConfig};
use crate::geometry::{induced_scene_flow, invert_field, CameraModel, SceneFlowField, Se3Field};
use crate::kitti_io::{read_fgrid, read_se3_field, write_fgrid, write_se3_field, ResultSet};
pub use crate::synth::BaselineExports;

/// File names of one sample's fusion inputs.
pub mod files {
    pub const CAMERA: &str = "camera.cfg";
    /// Disparities at t-1, t, t+1.
    pub const DISPARITIES: [&str; 3] = ["disp_prev.fgrid", "disp_t.fgrid", "disp_next.fgrid"];
    pub const SE3_FW: &str = "se3_fw.fgrid";
    pub const SE3_BW: &str = "se3_bw.fgrid";
    pub const EMB_FW: &str = "emb_fw.fgrid";
    pub const EMB_BW: &str = "emb_bw.fgrid";
    pub const MASK_FW: &str = "mask_fw.fgrid";
    pub const MASK_BW: &str = "mask_bw.fgrid";
    /// Feature maps of t-1, t, t+1.
    pub const FEATURES: [&str; 3] = ["feat_prev.fgrid", "feat_t.fgrid", "feat_next.fgrid"];
}

/// Everything the fusion consumes for one reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInputs {
    pub camera: CameraModel,
    /// Full-resolution disparities at t-1, t, t+1.
    pub disparities: [Grid; 3],
    pub baseline: BaselineExports,
}

fn require(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(Error::usage(format!("missing input `{}`", p.display())));
    }
    Ok(p)
}

impl FusionInputs {
    /// Writes every input except the camera, which lives in its own config.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (g, name) in self.disparities.iter().zip(files::DISPARITIES) {
            write_fgrid(dir.join(name), g)?;
        }
        let b = &self.baseline;
        write_se3_field(dir.join(files::SE3_FW), &b.se3_fw)?;
        write_se3_field(dir.join(files::SE3_BW), &b.se3_bw)?;
        write_fgrid(dir.join(files::EMB_FW), &b.emb_fw)?;
        write_fgrid(dir.join(files::EMB_BW), &b.emb_bw)?;
        write_fgrid(dir.join(files::MASK_FW), &b.mask_fw.to_grid())?;
        write_fgrid(dir.join(files::MASK_BW), &b.mask_bw.to_grid())?;
        for (g, name) in b.features.iter().zip(files::FEATURES) {
            write_fgrid(dir.join(name), g)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, camera: CameraModel) -> Result<Self> {
        let dir = dir.as_ref();
        let grid = |name: &str| read_fgrid(require(dir, name)?);
        let se3 = |name: &str| read_se3_field(require(dir, name)?);
        let mask = |name: &str| UpsampleMask::from_grid(&grid(name)?);
        Ok(Self {
            camera,
            disparities: [grid(files::DISPARITIES[0])?, grid(files::DISPARITIES[1])?, grid(files::DISPARITIES[2])?],
            baseline: BaselineExports {
                se3_fw: se3(files::SE3_FW)?,
                se3_bw: se3(files::SE3_BW)?,
                emb_fw: grid(files::EMB_FW)?,
                emb_bw: grid(files::EMB_BW)?,
                mask_fw: mask(files::MASK_FW)?,
                mask_bw: mask(files::MASK_BW)?,
                features: [grid(files::FEATURES[0])?, grid(files::FEATURES[1])?, grid(files::FEATURES[2])?],
            },
        })
    }

    pub fn width(&self) -> usize {
        self.disparities[1].width()
    }

    pub fn height(&self) -> usize {
        self.disparities[1].height()
    }

    fn check(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let f = UPSAMPLE_FACTOR;
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("image size {w}x{h} is not a positive multiple of {f}")));
        }
        let (lh, lw) = (h / f, w / f);
        for (g, name) in self.disparities.iter().zip(files::DISPARITIES) {
            g.ensure_channels(1, name)?;
            g.ensure_hw(h, w, name)?;
        }
        let b = &self.baseline;
        for (fld, name) in [(&b.se3_fw, files::SE3_FW), (&b.se3_bw, files::SE3_BW)] {
            if (fld.height, fld.width) != (lh, lw) {
                return Err(Error::shape(format!("{name} is {}x{}, expected {lw}x{lh}", fld.width, fld.height)));
            }
        }
        for (m, name) in [(&b.mask_fw, files::MASK_FW), (&b.mask_bw, files::MASK_BW)] {
            if (m.height(), m.width()) != (lh, lw) {
                return Err(Error::shape(format!("{name} does not match the coarse grid")));
            }
        }
        for (g, name) in [(&b.emb_fw, files::EMB_FW), (&b.emb_bw, files::EMB_BW)] {
            g.ensure_channels(crate::features::EMBEDDING_CHANNELS, name)?;
            g.ensure_hw(lh, lw, name)?;
        }
        let c = b.features[1].channels();
        for (g, name) in b.features.iter().zip(files::FEATURES) {
            g.ensure_channels(c, name)?;
            g.ensure_hw(lh, lw, name)?;
        }
        Ok(())
    }
}

/// Camera of the coarse grid whose pixel `(x, y)` covers fine pixels
/// `8x .. 8x + 7`.
pub fn coarse_camera(cam: &CameraModel) -> CameraModel {
    let f = UPSAMPLE_FACTOR as f64;
    let offset = (f - 1.0) / 2.0;
    CameraModel {
        fx: cam.fx / f,
        fy: cam.fy / f,
        cx: (cam.cx - offset) / f,
        cy: (cam.cy - offset) / f,
        baseline: cam.baseline,
    }
}

/// Block-mean disparity in coarse pixels; invalid if any fine pixel is.
pub fn coarse_disparity(d: &Grid) -> Grid {
    let f = UPSAMPLE_FACTOR;
    let (h, w) = (d.height() / f, d.width() / f);
    let mut out = Grid::zeros(1, h, w);
    let mut valid = vec![true; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    s += d.at(0, y * f + dy, x * f + dx);
                    valid[y * w + x] &= d.is_valid(y * f + dy, x * f + dx);
                }
            }
            out.set(0, y, x, s / (f * f) as f64 / f as f64);
        }
    }
    out.set_valid_mask(Some(valid)).expect("mask size");
    out
}

/// `D^t + delta_d`, valid where both are.
pub fn d_prime(d_t: &Grid, flow: &SceneFlowField) -> Grid {
    let mut out = d_t.clone();
    let mut valid = d_t.valid_mask();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += flow.delta_d[i];
        valid[i] &= flow.valid[i];
    }
    out.set_valid_mask(Some(valid)).expect("mask size");
    out
}

/// Intermediate products of steps 2 to 6.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: FusionInput,
    /// Upsampled forward baseline motion and its scene flow.
    pub se3_fw: Se3Field,
    pub flow_fw: SceneFlowField,
    /// Inverted upsampled backward motion and its scene flow.
    pub se3_bw_inverted: Se3Field,
    pub flow_bw: SceneFlowField,
}

/// Runs every parameter-free stage up to the 43-channel network input.
pub fn prepare(inputs: &FusionInputs) -> Result<Prepared> {
    inputs.check().stage("validate")?;
    let cam = &inputs.camera;
    let [d_prev, d_t, d_next] = &inputs.disparities;
    let b = &inputs.baseline;

    // step 2: one correlation value per coarse pixel along the baseline flow
    let (corr_fw, corr_bw) = (|| {
        let cam_lo = coarse_camera(cam);
        let d_lo = coarse_disparity(d_t);
        let lo_fw = induced_scene_flow(&b.se3_fw, &d_lo, &cam_lo)?;
        let lo_bw = induced_scene_flow(&b.se3_bw, &d_lo, &cam_lo)?;
        Ok::<_, Error>((
            correlation_lookup(&b.features[1], &b.features[2], &lo_fw)?,
            correlation_lookup(&b.features[1], &b.features[0], &lo_bw)?,
        ))
    })()
    .stage("correlation")?;

    // step 3: joint convex upsampling with each instance's mask
    let (se3_fw, se3_bw, emb_fw, emb_bw, corr_fw, corr_bw) = (|| {
        Ok::<_, Error>((
            lie_upsample(&b.se3_fw, &b.mask_fw)?,
            lie_upsample(&b.se3_bw, &b.mask_bw)?,
            convex_upsample(&b.emb_fw, &b.mask_fw)?,
            convex_upsample(&b.emb_bw, &b.mask_bw)?,
            convex_upsample(&corr_fw, &b.mask_fw)?,
            convex_upsample(&corr_bw, &b.mask_bw)?,
        ))
    })()
    .stage("upsample")?;

    // step 4: disparity residuals against the neighbouring frames
    let (flow_fw, res_fw, res_bw) = (|| {
        let flow_fw = induced_scene_flow(&se3_fw, d_t, cam)?;
        let flow_bw_raw = induced_scene_flow(&se3_bw, d_t, cam)?;
        let res_fw = disparity_residual(d_next, &flow_fw, &d_prime(d_t, &flow_fw))?;
        let res_bw = disparity_residual(d_prev, &flow_bw_raw, &d_prime(d_t, &flow_bw_raw))?;
        Ok::<_, Error>((flow_fw, res_fw, res_bw))
    })()
    .stage("residuals")?;

    // step 5: backward-to-forward by inverting the motion
    let se3_bw_inverted = invert_field(&se3_bw);
    let flow_bw = induced_scene_flow(&se3_bw_inverted, d_t, cam).stage("invert")?;

    // step 6
    let fw = BranchFeatures {
        flow: flow_fw.to_grid(),
        embedding: emb_fw,
        correlation: corr_fw,
        disparity_residual: res_fw,
    };
    let bw = BranchFeatures {
        flow: flow_bw.to_grid(),
        embedding: emb_bw,
        correlation: corr_bw,
        disparity_residual: res_bw,
    };
    let input = assemble_fusion_input(d_t, &fw, &bw).stage("assemble")?;
    Ok(Prepared {
        input,
        se3_fw,
        flow_fw,
        se3_bw_inverted,
        flow_bw,
    })
}

pub enum FusionMode<'a> {
    Network {
        cfg: &'a UNetConfig,
        params: &'a Parameters<f32>,
    },
    /// Emit the upsampled forward branch unfused.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub disparity: Grid,
    pub flow: SceneFlowField,
    /// `D^t + delta_d`, registered to frame t.
    pub d_prime: Grid,
}

impl FusionOutput {
    pub fn to_result_set(&self) -> ResultSet {
        ResultSet {
            disp_0: self.disparity.clone(),
            disp_1: self.d_prime.clone(),
            flow: self.flow.clone(),
        }
    }
}

/// Steps 2 to 7 for one reference frame.
pub fn run_fusion(inputs: &FusionInputs, mode: FusionMode<'_>) -> Result<FusionOutput> {
    let prepared = prepare(inputs)?;
    let d_t = &inputs.disparities[1];
    let flow = match mode {
        FusionMode::Passthrough => prepared.flow_fw,
        FusionMode::Network { cfg, params } => {
            let out = unet_forward(cfg, params, &prepared.input).stage("fusion")?;
            let mut flow = SceneFlowField::from_grid(&out).stage("fusion")?;
            flow.valid = d_t.valid_mask();
            flow
        }
    };
    Ok(FusionOutput {
        disparity: d_t.clone(),
        d_prime: d_prime(d_t, &flow),
        flow,
    })
}
