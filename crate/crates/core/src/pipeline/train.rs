use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{prepare, FusionInputs};
use crate::error::{Error, Result};
use crate::features::FusionInput;
use crate::fields::Grid;
use crate::fusenet::{
    grid_to_tensor, init_params, loss_r3d, unet_graph, Adam, Graph, LossConfig, Parameters, UNetConfig,
};
use crate::geometry::{CameraModel, SceneFlowField};
use crate::kitti_io::read_fgrid;
use crate::synth::SampleFiles;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub unet: UNetConfig,
    pub loss: LossConfig,
    /// Constant Adam learning rate.
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            unet: UNetConfig::default(),
            loss: LossConfig::default(),
            lr: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format(format!("training config: {e}")))?;
        cfg.unet.validate()?;
        cfg.loss.validate()?;
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(Error::usage(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        Ok(cfg)
    }
}

/// One prepared training example.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub name: String,
    pub input: FusionInput,
    /// Ground truth `(u, v, d')`.
    pub target: Grid,
    pub d_t: Grid,
    pub valid: Vec<bool>,
    /// Per-iteration baseline loss of the upsampled forward estimate.
    pub r3d: f64,
}

impl TrainSample {
    pub fn new(name: String, inputs: &FusionInputs, gt_fw: &SceneFlowField, loss: &LossConfig) -> Result<Self> {
        let prepared = prepare(inputs)?;
        let d_t = inputs.disparities[1].clone();
        let n = d_t.height() * d_t.width();
        if gt_fw.width != d_t.width() || gt_fw.height != d_t.height() {
            return Err(Error::shape(format!("{name}: ground truth size differs from the inputs")));
        }
        let valid: Vec<bool> = (0..n).map(|i| gt_fw.valid[i] && d_t.valid_mask()[i]).collect();
        let gt_grid = gt_fw.to_grid();
        let mut target = gt_grid.clone();
        for (t, d) in target.channel_mut(2).iter_mut().zip(d_t.data()) {
            *t += d;
        }
        target.set_valid_mask(None)?;
        let r3d = loss_r3d(&[prepared.flow_fw.to_grid()], &gt_grid, &valid, loss)?;
        Ok(Self {
            name,
            input: prepared.input,
            target,
            d_t,
            valid,
            r3d,
        })
    }
}

fn sample_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::usage(format!("dataset directory `{}` does not exist", dir.display())));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SampleFiles::CAMERA).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Loads and prepares every sample directory under `dir`, in name order.
pub fn load_dataset(dir: impl AsRef<Path>, loss: &LossConfig) -> Result<Vec<TrainSample>> {
    let dirs = sample_dirs(dir.as_ref())?;
    if dirs.is_empty() {
        return Err(Error::usage(format!("no samples in `{}`", dir.as_ref().display())));
    }
    dirs.par_iter()
        .map(|d| {
            let camera = CameraModel::load(d.join(SampleFiles::CAMERA))?;
            let inputs = FusionInputs::load(d, camera)?;
            let gt = SceneFlowField::from_grid(&read_fgrid(d.join(SampleFiles::GT_FLOW_FW))?)?;
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            TrainSample::new(name, &inputs, &gt, loss)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters<f32>,
    /// Total loss before each update.
    pub losses: Vec<f64>,
}

/// Batch-1 Adam training visiting samples cyclically in order.
pub fn train_toy(samples: &[TrainSample], cfg: &TrainConfig, steps: usize, seed: u64) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::usage("training needs at least one sample"));
    }
    cfg.loss.validate()?;
    let mut params: Parameters<f32> = init_params(&cfg.unet, seed)?;
    let mut adam = Adam::new(cfg.lr);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let s = &samples[step % samples.len()];
        let mut g = Graph::<f32>::new();
        let ids = params.bind(&mut g);
        let x = g.input(grid_to_tensor(&s.input.grid));
        let y = unet_graph(&mut g, &cfg.unet, &ids, x)?;
        let fuse = g.fuse_loss(y, &s.target, &s.d_t, &s.valid, &cfg.loss)?;
        let total = g.shift(fuse, cfg.loss.mu * s.r3d);
        losses.push(g.value(total).item()? as f64);
        let grads = g.backward(total)?;
        let gs: Vec<Vec<f32>> = ids
            .iter()
            .zip(params.entries())
            .map(|(&id, (_, t))| grads.get_or_zeros(id, t.len()))
            .collect();
        adam.step(params.tensors_mut(), &gs)?;
    }
    Ok(TrainOutcome { params, losses })
}

/// `step<TAB>loss` lines.
pub fn write_loss_log(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let mut text = String::from("step\tloss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{i}\t{l:.9e}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}
