use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{MaskKind, SceneSpec};
use crate::error::{Error, Result};
use crate::features::EMBEDDING_CHANNELS;
use crate::fields::{bilinear_corners, Grid, UpsampleMask, UPSAMPLE_FACTOR};
use crate::geometry::{
    induced_scene_flow, se3_exp, CameraModel, SceneFlowField, Se3, Se3Field, Twist,
};

const TEXTURE_WAVES: usize = 6;
const STREAM_EMBEDDING: u64 = 1 << 20;
const STREAM_NOISE_FW: u64 = 2 << 20;
const STREAM_NOISE_BW: u64 = 3 << 20;
const STREAM_FEATURES: u64 = 4 << 20;

/// Coarse outputs a two-frame baseline would export, at 1/8 resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineExports {
    /// `t -> t+1`.
    pub se3_fw: Se3Field,
    /// `t -> t-1`.
    pub se3_bw: Se3Field,
    pub emb_fw: Grid,
    pub emb_bw: Grid,
    pub mask_fw: UpsampleMask,
    pub mask_bw: UpsampleMask,
    /// Feature maps of frames t-1, t, t+1.
    pub features: [Grid; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub camera: CameraModel,
    /// RGB at t-1, t, t+1.
    pub images: [Grid; 3],
    /// Disparity at t-1, t, t+1, invalid where no surface is hit.
    pub disparities: [Grid; 3],
    pub gt_se3_fw: Se3Field,
    pub gt_se3_bw: Se3Field,
    pub gt_flow_fw: SceneFlowField,
    pub gt_flow_bw: SceneFlowField,
    /// True where the forward target is hidden or out of frame.
    pub occlusion_fw: Vec<bool>,
    pub occlusion_bw: Vec<bool>,
    /// Surface index per pixel at t: 0 is the background, `i + 1` object `i`.
    pub object_map: Vec<u16>,
    pub baseline: BaselineExports,
}

impl SyntheticSample {
    pub fn width(&self) -> usize {
        self.gt_se3_fw.width
    }

    pub fn height(&self) -> usize {
        self.gt_se3_fw.height
    }

    /// Object map as a one-channel grid (for region masks).
    pub fn object_grid(&self) -> Grid {
        Grid::from_vec(
            1,
            self.height(),
            self.width(),
            self.object_map.iter().map(|&o| o as f64).collect(),
        )
        .expect("object map matches the image size")
    }
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

/// Band-limited RGB pattern on one surface, in its time-t pixel coordinates.
struct Texture {
    waves: [Vec<Wave>; 3],
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut channel = || {
            (0..TEXTURE_WAVES)
                .map(|_| {
                    let r = rng.random_range(0.03..0.2);
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    Wave {
                        fx: r * a.cos(),
                        fy: r * a.sin(),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                        amp: rng.random_range(0.3..1.0),
                    }
                })
                .collect::<Vec<_>>()
        };
        Self {
            waves: [channel(), channel(), channel()],
        }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (o, waves) in out.iter_mut().zip(&self.waves) {
            let total: f64 = waves.iter().map(|w| w.amp).sum();
            let s: f64 = waves
                .iter()
                .map(|w| w.amp * (std::f64::consts::TAU * (w.fx * x + w.fy * y) + w.phase).sin())
                .sum();
            *o = 0.5 + 0.5 * s / total;
        }
        out
    }
}

/// Plane `Z = depth` at time t, optionally bounded to a pixel rectangle.
struct Surface {
    depth: f64,
    rect: Option<[f64; 4]>,
    fw: Se3,
    bw: Se3,
    texture: Texture,
}

struct Hit {
    surface: usize,
    z: f64,
    color: [f64; 3],
}

fn ray(cam: &CameraModel, x: f64, y: f64) -> Vector3<f64> {
    Vector3::new((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0)
}

/// Nearest surface along the ray of pixel `(x, y)` after each surface has
/// moved by its transform (`None` selects time t).
fn trace(cam: &CameraModel, surfaces: &[Surface], motion: Option<fn(&Surface) -> &Se3>, x: f64, y: f64) -> Option<Hit> {
    let r = ray(cam, x, y);
    let mut best: Option<Hit> = None;
    for (k, s) in surfaces.iter().enumerate() {
        // point on the moved plane: P' = depth_scale * r with R^T (P' - t) on Z = depth
        let (z, p) = match motion {
            None => (s.depth, r * s.depth),
            Some(pick) => {
                let m = pick(s);
                let rt: Matrix3<f64> = m.rotation.transpose();
                let q = rt * r;
                let c = rt * m.translation;
                if q.z <= 1e-12 {
                    continue;
                }
                let z = (s.depth + c.z) / q.z;
                if !(z > 0.0) {
                    continue;
                }
                (z, q * z - c)
            }
        };
        let xt = cam.fx * p.x / p.z + cam.cx;
        let yt = cam.fy * p.y / p.z + cam.cy;
        if let Some([x0, y0, x1, y1]) = s.rect {
            if !(xt >= x0 && xt < x1 && yt >= y0 && yt < y1) {
                continue;
            }
        }
        if best.as_ref().is_none_or(|b| z < b.z) {
            best = Some(Hit {
                surface: k,
                z,
                color: s.texture.color(xt, yt),
            });
        }
    }
    best
}

struct Frame {
    image: Grid,
    disparity: Grid,
    surface: Vec<Option<usize>>,
}

fn render_frame(spec: &SceneSpec, surfaces: &[Surface], motion: Option<fn(&Surface) -> &Se3>) -> Frame {
    let (w, h) = (spec.width, spec.height);
    let mut image = Grid::zeros(3, h, w);
    let mut disparity = Grid::zeros(1, h, w);
    let mut valid = vec![false; w * h];
    let mut surface = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(hit) = trace(&spec.camera, surfaces, motion, x as f64, y as f64) {
                let i = y * w + x;
                for (c, v) in hit.color.iter().enumerate() {
                    image.set(c, y, x, *v);
                }
                disparity.set(0, y, x, spec.camera.disparity_at(hit.z));
                valid[i] = true;
                surface[i] = Some(hit.surface);
            }
        }
    }
    disparity.set_valid_mask(Some(valid)).expect("mask size");
    Frame {
        image,
        disparity,
        surface,
    }
}

/// Pixels whose moved position is out of frame or lands (through any
/// bilinear corner with nonzero weight) on a different surface.
fn occlusion(flow: &SceneFlowField, own: &[Option<usize>], target: &[Option<usize>]) -> Vec<bool> {
    let (w, h) = (flow.width, flow.height);
    (0..w * h)
        .map(|i| {
            if !flow.valid[i] {
                return true;
            }
            let (x, y) = ((i % w) as f64 + flow.u[i], (i / w) as f64 + flow.v[i]);
            match bilinear_corners(x, y, w, h) {
                None => true,
                Some(corners) => corners
                    .iter()
                    .any(|&(cx, cy, wgt)| wgt != 0.0 && target[cy * w + cx] != own[i]),
            }
        })
        .collect()
}

/// Per-block mean over `factor x factor` blocks, per channel.
pub fn block_mean(g: &Grid, factor: usize) -> Grid {
    let (h, w) = (g.height() / factor, g.width() / factor);
    let norm = (factor * factor) as f64;
    Grid::from_fn(g.channels(), h, w, |c, y, x| {
        let mut s = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                s += g.at(c, y * factor + dy, x * factor + dx);
            }
        }
        s / norm
    })
}

/// Per-block `exp(mean(log T))`.
pub fn block_lie_mean(field: &Se3Field, factor: usize) -> Result<Se3Field> {
    let twists = block_mean(&field.to_twist_grid()?, factor);
    let (h, w) = (twists.height(), twists.width());
    let transforms = (0..h * w)
        .map(|i| se3_exp(&Twist::from_slice(&twists.pixel(i / w, i % w))))
        .collect();
    Se3Field::from_transforms(w, h, transforms)
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn embeddings(spec: &SceneSpec, surface: &[Option<usize>], vectors: &[Vec<f64>], stream: u64) -> Grid {
    let (w, h) = (spec.width, spec.height);
    let mut rng = rng_stream(spec.texture_seed, stream);
    let mut g = Grid::zeros(EMBEDDING_CHANNELS, h, w);
    for c in 0..EMBEDDING_CHANNELS {
        for i in 0..w * h {
            let base = surface[i].map_or(0.0, |k| vectors[k][c]);
            let noise: f64 = StandardNormal.sample(&mut rng);
            g.channel_mut(c)[i] = base + spec.embedding_noise * noise;
        }
    }
    g
}

/// Fixed random lift of RGB into `channels` feature channels.
fn features(image: &Grid, lift: &[[f64; 4]]) -> Grid {
    let (h, w) = (image.height(), image.width());
    Grid::from_fn(lift.len(), h, w, |c, y, x| {
        let a = &lift[c];
        let s = a[0] * (image.at(0, y, x) - 0.5) + a[1] * (image.at(1, y, x) - 0.5) + a[2] * (image.at(2, y, x) - 0.5) + a[3];
        (4.0 * s).tanh()
    })
}

/// Most frequent surface of each coarse block (ties to the lower index).
fn block_surfaces(surface: &[Option<usize>], w: usize, h: usize) -> Vec<usize> {
    let f = UPSAMPLE_FACTOR;
    let (lw, lh) = (w / f, h / f);
    let mut out = vec![0; lw * lh];
    for by in 0..lh {
        for bx in 0..lw {
            let mut counts = std::collections::BTreeMap::new();
            for dy in 0..f {
                for dx in 0..f {
                    if let Some(s) = surface[(by * f + dy) * w + bx * f + dx] {
                        *counts.entry(s).or_insert(0usize) += 1;
                    }
                }
            }
            let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
            out[by * lw + bx] = best.map_or(0, |(&s, _)| s);
        }
    }
    out
}

fn object_mask(surface: &[Option<usize>], w: usize, h: usize) -> UpsampleMask {
    let f = UPSAMPLE_FACTOR;
    let (lw, lh) = (w / f, h / f);
    let blocks = block_surfaces(surface, w, h);
    let mut mask = UpsampleMask::uniform(lh, lw);
    for y in 0..lh {
        for x in 0..lw {
            for sub in 0..f * f {
                let own = surface[(y * f + sub / f) * w + x * f + sub % f];
                for k in 0..9 {
                    let ny = (y as i64 + k as i64 / 3 - 1).clamp(0, lh as i64 - 1) as usize;
                    let nx = (x as i64 + k as i64 % 3 - 1).clamp(0, lw as i64 - 1) as usize;
                    if own != Some(blocks[ny * lw + nx]) {
                        mask.set_logit(sub, k, y, x, -1e4);
                    }
                }
            }
        }
    }
    mask
}

/// Renders the three frames, ground truth and emulated baseline exports.
pub fn render_scene(spec: &SceneSpec) -> Result<SyntheticSample> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut surfaces = Vec::with_capacity(spec.objects.len() + 1);
    surfaces.push(Surface {
        depth: spec.background.depth,
        rect: None,
        fw: spec.background.motion.forward_se3(),
        bw: spec.background.motion.backward_se3(),
        texture: Texture::new(&mut rng_stream(spec.texture_seed, 0)),
    });
    for (i, o) in spec.objects.iter().enumerate() {
        surfaces.push(Surface {
            depth: o.depth,
            rect: Some([o.x0 as f64 - 0.5, o.y0 as f64 - 0.5, o.x1 as f64 - 0.5, o.y1 as f64 - 0.5]),
            fw: o.motion.forward_se3(),
            bw: o.motion.backward_se3(),
            texture: Texture::new(&mut rng_stream(spec.texture_seed, i as u64 + 1)),
        });
    }

    let now = render_frame(spec, &surfaces, None);
    let prev = render_frame(spec, &surfaces, Some(|s| &s.bw));
    let next = render_frame(spec, &surfaces, Some(|s| &s.fw));
    if now.surface.iter().any(Option::is_none) {
        return Err(Error::Spec("reference frame has pixels without a surface".into()));
    }
    let own = |i: usize| now.surface[i].expect("reference frame fully covered");

    let gt_se3_fw = Se3Field::from_transforms(w, h, (0..w * h).map(|i| surfaces[own(i)].fw).collect())?;
    let gt_se3_bw = Se3Field::from_transforms(w, h, (0..w * h).map(|i| surfaces[own(i)].bw).collect())?;
    let gt_flow_fw = induced_scene_flow(&gt_se3_fw, &now.disparity, &spec.camera)?;
    let gt_flow_bw = induced_scene_flow(&gt_se3_bw, &now.disparity, &spec.camera)?;
    let occlusion_fw = occlusion(&gt_flow_fw, &now.surface, &next.surface);
    let occlusion_bw = occlusion(&gt_flow_bw, &now.surface, &prev.surface);

    let vectors: Vec<Vec<f64>> = (0..surfaces.len())
        .map(|k| unit_vector(&mut rng_stream(spec.texture_seed, STREAM_EMBEDDING + k as u64), EMBEDDING_CHANNELS))
        .collect();
    let f = UPSAMPLE_FACTOR;
    let mut lift_rng = rng_stream(spec.texture_seed, STREAM_FEATURES);
    let lift: Vec<[f64; 4]> = (0..spec.feature_channels)
        .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut lift_rng)))
        .collect();
    let mask = match spec.mask {
        MaskKind::Uniform => UpsampleMask::uniform(h / f, w / f),
        MaskKind::Object => object_mask(&now.surface, w, h),
    };
    let baseline = BaselineExports {
        se3_fw: block_lie_mean(&gt_se3_fw, f)?,
        se3_bw: block_lie_mean(&gt_se3_bw, f)?,
        emb_fw: block_mean(&embeddings(spec, &now.surface, &vectors, STREAM_NOISE_FW), f),
        emb_bw: block_mean(&embeddings(spec, &now.surface, &vectors, STREAM_NOISE_BW), f),
        mask_fw: mask.clone(),
        mask_bw: mask,
        features: [&prev, &now, &next].map(|fr| block_mean(&features(&fr.image, &lift), f)),
    };

    Ok(SyntheticSample {
        camera: spec.camera,
        object_map: (0..w * h).map(|i| own(i) as u16).collect(),
        images: [prev.image, now.image, next.image],
        disparities: [prev.disparity, now.disparity, next.disparity],
        gt_se3_fw,
        gt_se3_bw,
        gt_flow_fw,
        gt_flow_bw,
        occlusion_fw,
        occlusion_bw,
        baseline,
    })
}
