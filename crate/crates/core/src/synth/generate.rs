use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    corrupt_se3_region, render_scene, BackgroundSpec, Corruption, MaskKind, MotionSpec, ObjectSpec, SceneSpec,
    SyntheticSample,
};
use crate::error::{Error, Result};
use crate::fields::UPSAMPLE_FACTOR;
use crate::geometry::CameraModel;

/// Damage applied to the forward baseline's coarse SE(3) export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    pub damage: Corruption,
    /// Corrupt every coarse block containing a forward-occluded pixel.
    #[serde(default = "yes")]
    pub occluded_blocks: bool,
    /// Additionally corrupt one random rectangle of 2 to 3 blocks per side.
    #[serde(default = "yes")]
    pub random_rect: bool,
}

fn yes() -> bool {
    true
}

/// Random scene distribution; also the `synth` command's spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub samples: usize,
    pub width: usize,
    pub height: usize,
    pub camera: CameraModel,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Snap object rectangles to the 8-pixel block grid.
    pub block_aligned: bool,
    /// Backward motion is the exact inverse of the forward motion.
    pub constant_motion: bool,
    pub object_depth: [f64; 2],
    pub background_depth: [f64; 2],
    /// Bound on the x/y/z translation of objects per interval, meters.
    pub max_translation: f64,
    /// Bound on each rotation component of objects per interval, radians.
    pub max_rotation: f64,
    /// Bound on each translation component of the background per interval.
    pub background_translation: f64,
    pub embedding_noise: f64,
    pub mask: MaskKind,
    pub feature_channels: usize,
    pub corruption: Option<CorruptionConfig>,
    /// Explicit scenes rendered instead of random ones when non-empty.
    pub scenes: Vec<SceneSpec>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            width: 64,
            height: 64,
            camera: CameraModel {
                fx: 60.0,
                fy: 60.0,
                cx: 31.5,
                cy: 31.5,
                baseline: 0.5,
            },
            min_objects: 1,
            max_objects: 3,
            block_aligned: true,
            constant_motion: true,
            object_depth: [5.0, 12.0],
            background_depth: [25.0, 40.0],
            max_translation: 0.5,
            max_rotation: 0.03,
            background_translation: 0.3,
            embedding_noise: 0.05,
            mask: MaskKind::Object,
            feature_channels: 32,
            corruption: None,
            scenes: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format(format!("synth spec: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let f = UPSAMPLE_FACTOR;
        if self.width < 2 * f || self.height < 2 * f || self.width % f != 0 || self.height % f != 0 {
            return Err(Error::Spec(format!(
                "image size {}x{} must be a multiple of {f} and at least {}",
                self.width,
                self.height,
                2 * f
            )));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Spec("min_objects exceeds max_objects".into()));
        }
        for (name, [lo, hi]) in [("object_depth", self.object_depth), ("background_depth", self.background_depth)] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Spec(format!("{name} must be an increasing positive range")));
            }
        }
        if self.object_depth[1] >= self.background_depth[0] {
            return Err(Error::Spec("objects must lie in front of the background".into()));
        }
        self.camera.validate().map_err(|e| Error::Spec(e.to_string()))
    }

    /// Number of samples this config produces.
    pub fn sample_count(&self) -> usize {
        if self.scenes.is_empty() {
            self.samples
        } else {
            self.scenes.len()
        }
    }
}

fn range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sym(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..bound)
    } else {
        0.0
    }
}

fn motion(rng: &mut ChaCha8Rng, translation: f64, rotation: f64, constant: bool) -> MotionSpec {
    let draw = |rng: &mut ChaCha8Rng| -> [f64; 6] {
        std::array::from_fn(|i| if i < 3 { sym(rng, translation) } else { sym(rng, rotation) })
    };
    let forward = draw(rng);
    let backward = (!constant).then(|| draw(rng));
    MotionSpec { forward, backward }
}

fn span(rng: &mut ChaCha8Rng, size: usize, aligned: bool) -> (usize, usize) {
    let f = UPSAMPLE_FACTOR;
    if aligned {
        let blocks = size / f;
        let len = rng.random_range(1..=(blocks / 2).max(1));
        let start = rng.random_range(0..=blocks - len);
        (start * f, (start + len) * f)
    } else {
        let len = rng.random_range(4..=(size / 2).max(4));
        let start = rng.random_range(0..=size - len);
        (start, start + len)
    }
}

/// Random scene from `cfg`, fully determined by `seed`.
pub fn generate_spec(cfg: &GeneratorConfig, seed: u64) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let background = BackgroundSpec {
        depth: range(&mut rng, cfg.background_depth),
        motion: motion(&mut rng, cfg.background_translation, cfg.max_rotation / 2.0, cfg.constant_motion),
    };
    let objects = (0..n)
        .map(|_| {
            let (x0, x1) = span(&mut rng, cfg.width, cfg.block_aligned);
            let (y0, y1) = span(&mut rng, cfg.height, cfg.block_aligned);
            ObjectSpec {
                x0,
                y0,
                x1,
                y1,
                depth: range(&mut rng, cfg.object_depth),
                motion: motion(&mut rng, cfg.max_translation, cfg.max_rotation, cfg.constant_motion),
            }
        })
        .collect();
    Ok(SceneSpec {
        width: cfg.width,
        height: cfg.height,
        camera: cfg.camera,
        background,
        objects,
        texture_seed: rng.random(),
        embedding_noise: cfg.embedding_noise,
        mask: cfg.mask,
        feature_channels: cfg.feature_channels,
    })
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub spec: SceneSpec,
    pub sample: SyntheticSample,
    /// Full-resolution pixels whose forward baseline export was corrupted.
    pub corrupted: Option<Vec<bool>>,
}

/// Coarse blocks to corrupt: blocks with forward-occluded pixels plus an
/// optional random rectangle.
fn corruption_blocks(cfg: &CorruptionConfig, sample: &SyntheticSample, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let f = UPSAMPLE_FACTOR;
    let (w, h) = (sample.width(), sample.height());
    let (lw, lh) = (w / f, h / f);
    let mut blocks = vec![false; lw * lh];
    if cfg.occluded_blocks {
        for (i, _) in sample.occlusion_fw.iter().enumerate().filter(|(_, &o)| o) {
            blocks[(i / w / f) * lw + (i % w) / f] = true;
        }
    }
    if cfg.random_rect {
        let bw = rng.random_range(2..=3.min(lw));
        let bh = rng.random_range(2..=3.min(lh));
        let x0 = rng.random_range(0..=lw - bw);
        let y0 = rng.random_range(0..=lh - bh);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                blocks[y * lw + x] = true;
            }
        }
    }
    blocks
}

/// Sample `index` of the set described by `cfg` under `seed`.
pub fn generate_sample(cfg: &GeneratorConfig, seed: u64, index: usize) -> Result<GeneratedSample> {
    let sample_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
    let spec = match cfg.scenes.get(index) {
        Some(s) => s.clone(),
        None if cfg.scenes.is_empty() => generate_spec(cfg, sample_seed)?,
        None => return Err(Error::usage(format!("no scene {index} in the spec file"))),
    };
    let mut sample = render_scene(&spec)?;
    let mut corrupted = None;
    if let Some(cc) = &cfg.corruption {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed ^ 0xC0FF_EE00);
        let blocks = corruption_blocks(cc, &sample, &mut rng);
        sample.baseline.se3_fw = corrupt_se3_region(&sample.baseline.se3_fw, &blocks, &cc.damage, rng.random())?;
        let f = UPSAMPLE_FACTOR;
        let (w, h) = (sample.width(), sample.height());
        corrupted = Some((0..w * h).map(|i| blocks[(i / w / f) * (w / f) + (i % w) / f]).collect());
    }
    Ok(GeneratedSample {
        spec,
        sample,
        corrupted,
    })
}
