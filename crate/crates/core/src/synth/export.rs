use std::path::Path;

use rayon::prelude::*;

use super::{generate_sample, GeneratedSample, GeneratorConfig, SyntheticSample};
use crate::error::Result;
use crate::fields::Grid;
use crate::kitti_io::{write_fgrid, write_gray8_png, write_rgb8_png, write_se3_field, ResultSet};
use crate::pipeline::{d_prime, FusionInputs};

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Names of the ground-truth files written next to the fusion inputs.
pub struct SampleFiles;

impl SampleFiles {
    pub const CAMERA: &'static str = "camera.cfg";
    pub const SCENE: &'static str = "scene.toml";
    /// RGB at t-1, t, t+1.
    pub const IMAGES: [&'static str; 3] = ["image_prev.fgrid", "image_t.fgrid", "image_next.fgrid"];
    pub const IMAGE_PNGS: [&'static str; 3] = ["image_prev.png", "image_t.png", "image_next.png"];
    pub const GT_SE3_FW: &'static str = "gt_se3_fw.fgrid";
    pub const GT_SE3_BW: &'static str = "gt_se3_bw.fgrid";
    pub const GT_FLOW_FW: &'static str = "gt_flow_fw.fgrid";
    pub const GT_FLOW_BW: &'static str = "gt_flow_bw.fgrid";
    pub const OCCLUSION_FW: &'static str = "occ_fw.png";
    pub const OCCLUSION_BW: &'static str = "occ_bw.png";
    /// Surface index per pixel, background 0.
    pub const OBJECTS: &'static str = "objects.png";
    /// Result set of the ground truth in benchmark layout.
    pub const GT_DIR: &'static str = "gt";
    pub const CORRUPTED: &'static str = "corrupted.png";
}

fn mask_png(path: &Path, w: usize, h: usize, mask: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_gray8_png(path, w, h, &bytes)
}

fn rgb8(image: &Grid) -> Vec<u8> {
    let n = image.height() * image.width();
    (0..n)
        .flat_map(|i| std::array::from_fn::<u8, 3, _>(|c| (image.data()[c * n + i] * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect()
}

impl SyntheticSample {
    pub fn fusion_inputs(&self) -> FusionInputs {
        FusionInputs {
            camera: self.camera,
            disparities: self.disparities.clone(),
            baseline: self.baseline.clone(),
        }
    }

    /// Benchmark-layout ground truth: `D^t`, `d'` and forward flow.
    pub fn gt_result_set(&self) -> ResultSet {
        let d_t = &self.disparities[1];
        ResultSet {
            disp_0: d_t.clone(),
            disp_1: d_prime(d_t, &self.gt_flow_fw),
            flow: self.gt_flow_fw.clone(),
        }
    }
}

/// Writes fusion inputs, camera, ground truth and previews of one sample.
pub fn write_sample(dir: impl AsRef<Path>, g: &GeneratedSample) -> Result<()> {
    let dir = dir.as_ref();
    let s = &g.sample;
    let (w, h) = (s.width(), s.height());
    s.fusion_inputs().save(dir)?;
    s.camera.save(dir.join(SampleFiles::CAMERA))?;
    std::fs::write(dir.join(SampleFiles::SCENE), g.spec.to_toml()?)?;
    for ((img, name), png) in s.images.iter().zip(SampleFiles::IMAGES).zip(SampleFiles::IMAGE_PNGS) {
        write_fgrid(dir.join(name), img)?;
        write_rgb8_png(dir.join(png), w, h, &rgb8(img))?;
    }
    write_se3_field(dir.join(SampleFiles::GT_SE3_FW), &s.gt_se3_fw)?;
    write_se3_field(dir.join(SampleFiles::GT_SE3_BW), &s.gt_se3_bw)?;
    write_fgrid(dir.join(SampleFiles::GT_FLOW_FW), &s.gt_flow_fw.to_grid())?;
    write_fgrid(dir.join(SampleFiles::GT_FLOW_BW), &s.gt_flow_bw.to_grid())?;
    mask_png(&dir.join(SampleFiles::OCCLUSION_FW), w, h, &s.occlusion_fw)?;
    mask_png(&dir.join(SampleFiles::OCCLUSION_BW), w, h, &s.occlusion_bw)?;
    let objects: Vec<u8> = s.object_map.iter().map(|&o| o.min(255) as u8).collect();
    write_gray8_png(dir.join(SampleFiles::OBJECTS), w, h, &objects)?;
    s.gt_result_set().write(dir.join(SampleFiles::GT_DIR))?;
    if let Some(c) = &g.corrupted {
        mask_png(&dir.join(SampleFiles::CORRUPTED), w, h, c)?;
    }
    Ok(())
}

/// Generates every sample of `cfg` into `out/sample_NNN` and writes a manifest.
pub fn write_dataset(out: impl AsRef<Path>, cfg: &GeneratorConfig, seed: u64) -> Result<Vec<String>> {
    cfg.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;
    let names: Vec<String> = (0..cfg.sample_count()).map(|i| format!("sample_{i:03}")).collect();
    names
        .par_iter()
        .enumerate()
        .try_for_each(|(i, name)| write_sample(out.join(name), &generate_sample(cfg, seed, i)?))?;
    let mut manifest = format!("seed {seed}\nsamples {}\n", names.len());
    for name in &names {
        manifest.push_str(name);
        manifest.push('\n');
    }
    std::fs::write(out.join(MANIFEST_NAME), manifest)?;
    Ok(names)
}
