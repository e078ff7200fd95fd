use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::features::{FusionInput, FUSION_CHANNELS};
use crate::fields::Grid;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InBetween {
    None,
    One,
    Two,
    /// Two convolutions with an identity shortcut around the pair.
    ResBlock,
}

impl InBetween {
    fn convs(self) -> usize {
        match self {
            InBetween::None => 0,
            InBetween::One => 1,
            InBetween::Two | InBetween::ResBlock => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    Add,
    Concat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub levels: usize,
    pub base_channels: Vec<usize>,
    pub in_between: InBetween,
    pub skip_mode: SkipMode,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: vec![64, 128, 256],
            in_between: InBetween::One,
            skip_mode: SkipMode::Add,
            in_channels: FUSION_CHANNELS,
            out_channels: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { stride: usize },
    /// 4x4, stride 2, padding 1.
    ConvTranspose,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn kernel(&self) -> usize {
        match self.kind {
            LayerKind::Conv { .. } => 3,
            LayerKind::ConvTranspose => 4,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let k = self.kernel();
        match self.kind {
            LayerKind::Conv { .. } => vec![self.out_channels, self.in_channels, k, k],
            LayerKind::ConvTranspose => vec![self.in_channels, self.out_channels, k, k],
        }
    }

    /// Number of inputs feeding each output value.
    pub fn fan_in(&self) -> usize {
        let k = self.kernel();
        match self.kind {
            LayerKind::Conv { .. } => self.in_channels * k * k,
            // stride 2: each output sees half the kernel taps along each axis
            LayerKind::ConvTranspose => self.in_channels * (k / 2) * (k / 2),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::usage(format!("U-Net needs at least 2 levels, got {}", self.levels)));
        }
        if self.base_channels.len() != self.levels {
            return Err(Error::usage(format!(
                "{} levels but {} channel widths",
                self.levels,
                self.base_channels.len()
            )));
        }
        if self.base_channels[0] == 0 || self.base_channels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::usage(format!(
                "channel widths must be positive and strictly increasing, got {:?}",
                self.base_channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::usage("input and output channel counts must be positive"));
        }
        Ok(())
    }

    /// Config with the given widths and defaults otherwise.
    pub fn with_widths(widths: &[usize]) -> Self {
        Self {
            levels: widths.len(),
            base_channels: widths.to_vec(),
            ..Self::default()
        }
    }

    /// Every learnable layer, in parameter order.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let c = &self.base_channels;
        let l = self.levels;
        let mut out = Vec::new();
        let mut push = |name: String, kind, cin, cout| {
            out.push(LayerSpec {
                name,
                kind,
                in_channels: cin,
                out_channels: cout,
            })
        };
        let conv = LayerKind::Conv { stride: 1 };
        for lvl in 0..l {
            let cin = if lvl == 0 { self.in_channels } else { c[lvl - 1] };
            push(format!("enc{lvl}.conv"), conv, cin, c[lvl]);
            for j in 0..self.in_between.convs() {
                push(format!("enc{lvl}.mid{j}"), conv, c[lvl], c[lvl]);
            }
            if lvl + 1 < l {
                push(format!("enc{lvl}.down"), LayerKind::Conv { stride: 2 }, c[lvl], c[lvl]);
            }
        }
        for lvl in (0..l - 1).rev() {
            push(format!("dec{lvl}.up"), LayerKind::ConvTranspose, c[lvl + 1], c[lvl]);
            let cin = match self.skip_mode {
                SkipMode::Add => c[lvl],
                SkipMode::Concat => 2 * c[lvl],
            };
            push(format!("dec{lvl}.conv"), conv, cin, c[lvl]);
            for j in 0..self.in_between.convs() {
                push(format!("dec{lvl}.mid{j}"), conv, c[lvl], c[lvl]);
            }
        }
        push("out".into(), conv, c[0], self.out_channels);
        Ok(out)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.layers()?.iter().map(LayerSpec::parameter_count).sum())
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// Named, ordered weight and bias arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Parameters<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::usage(format!("duplicate parameter name `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Checks names and shapes against the layers of `cfg`.
    pub fn check(&self, cfg: &UNetConfig) -> Result<()> {
        let expected = expected_shapes(cfg)?;
        if expected.len() != self.entries.len() {
            return Err(Error::shape(format!(
                "config expects {} arrays, got {}",
                expected.len(),
                self.entries.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&self.entries) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::shape(format!(
                    "expected `{en}` {es:?}, got `{n}` {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Adds every array to `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.entries.iter().map(|(_, t)| g.param(t.clone())).collect()
    }
}

fn expected_shapes(cfg: &UNetConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for layer in cfg.layers()? {
        out.push((format!("{}.weight", layer.name), layer.weight_shape()));
        out.push((format!("{}.bias", layer.name), vec![layer.out_channels]));
    }
    Ok(out)
}

/// He-normal weights (variance `2 / fan_in`) and zero biases.
pub fn init_params<T: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<Parameters<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for layer in cfg.layers()? {
        let shape = layer.weight_shape();
        let std = (2.0 / layer.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let w: Vec<T> = (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
        entries.push((format!("{}.weight", layer.name), Tensor::from_vec(&shape, w)?));
        entries.push((
            format!("{}.bias", layer.name),
            Tensor::zeros(&[layer.out_channels]),
        ));
    }
    Parameters::from_entries(entries)
}

struct Net<'a, T> {
    g: &'a mut Graph<T>,
    layers: HashMap<String, (NodeId, NodeId, LayerKind)>,
}

impl<T: Scalar> Net<'_, T> {
    fn layer(&mut self, name: &str, x: NodeId, act: bool) -> Result<NodeId> {
        let (w, b, kind) = *self
            .layers
            .get(name)
            .ok_or_else(|| Error::usage(format!("missing layer `{name}`")))?;
        let y = match kind {
            LayerKind::Conv { stride } => self.g.conv2d(x, w, b, stride, 1)?,
            LayerKind::ConvTranspose => self.g.conv_transpose2d(x, w, b, 2, 1)?,
        };
        Ok(if act { self.g.leaky_relu(y, LEAKY_SLOPE) } else { y })
    }

    fn in_between(&mut self, prefix: &str, x: NodeId, mode: InBetween) -> Result<NodeId> {
        match mode {
            InBetween::None => Ok(x),
            InBetween::One => self.layer(&format!("{prefix}.mid0"), x, true),
            InBetween::Two => {
                let y = self.layer(&format!("{prefix}.mid0"), x, true)?;
                self.layer(&format!("{prefix}.mid1"), y, true)
            }
            InBetween::ResBlock => {
                let y = self.layer(&format!("{prefix}.mid0"), x, true)?;
                let y = self.layer(&format!("{prefix}.mid1"), y, false)?;
                let s = self.g.add(x, y)?;
                Ok(self.g.leaky_relu(s, LEAKY_SLOPE))
            }
        }
    }
}

/// Builds the network on `g` from parameter nodes bound in the order of
/// [`Parameters::bind`]. `input` must be `in_channels x H x W`.
pub fn unet_graph<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &UNetConfig,
    params: &[NodeId],
    input: NodeId,
) -> Result<NodeId> {
    let specs = cfg.layers()?;
    if params.len() != 2 * specs.len() {
        return Err(Error::shape(format!(
            "config expects {} parameter arrays, got {}",
            2 * specs.len(),
            params.len()
        )));
    }
    for (layer, pair) in specs.iter().zip(params.chunks(2)) {
        let (ws, bs) = (g.value(pair[0]).shape(), g.value(pair[1]).shape());
        if ws != layer.weight_shape().as_slice() || bs != [layer.out_channels] {
            return Err(Error::shape(format!("parameter shapes of `{}` do not match the config", layer.name)));
        }
    }
    let shape = g.value(input).shape().to_vec();
    let m = cfg.size_multiple();
    match shape.as_slice() {
        [c, h, w] if *c == cfg.in_channels && h % m == 0 && w % m == 0 && *h > 0 && *w > 0 => {}
        _ => {
            return Err(Error::shape(format!(
                "U-Net input must be {} x H x W with H, W positive multiples of {m}, got {shape:?}",
                cfg.in_channels
            )))
        }
    }
    let layers = specs
        .iter()
        .zip(params.chunks(2))
        .map(|(s, p)| (s.name.clone(), (p[0], p[1], s.kind)))
        .collect();
    let mut net = Net { g, layers };
    let mut x = input;
    let mut skips = Vec::new();
    for lvl in 0..cfg.levels {
        x = net.layer(&format!("enc{lvl}.conv"), x, true)?;
        x = net.in_between(&format!("enc{lvl}"), x, cfg.in_between)?;
        if lvl + 1 < cfg.levels {
            skips.push(x);
            x = net.layer(&format!("enc{lvl}.down"), x, true)?;
        }
    }
    for lvl in (0..cfg.levels - 1).rev() {
        x = net.layer(&format!("dec{lvl}.up"), x, true)?;
        let skip = skips.pop().expect("one skip per level");
        x = match cfg.skip_mode {
            SkipMode::Add => net.g.add(x, skip)?,
            SkipMode::Concat => net.g.concat(x, skip)?,
        };
        x = net.layer(&format!("dec{lvl}.conv"), x, true)?;
        x = net.in_between(&format!("dec{lvl}"), x, cfg.in_between)?;
    }
    net.layer("out", x, false)
}

pub fn grid_to_tensor<T: Scalar>(g: &Grid) -> Tensor<T> {
    Tensor::from_f64(&[g.channels(), g.height(), g.width()], g.data()).expect("grid shape")
}

/// Runs the network on a fusion input, returning `(u, v, delta_d)`.
pub fn unet_forward<T: Scalar>(cfg: &UNetConfig, params: &Parameters<T>, input: &FusionInput) -> Result<Grid> {
    params.check(cfg)?;
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.entries().iter().map(|(_, t)| g.input(t.clone())).collect();
    let x = g.input(grid_to_tensor(&input.grid));
    let y = unet_graph(&mut g, cfg, &ids, x)?;
    let out = g.value(y);
    Grid::from_vec(out.shape()[0], out.shape()[1], out.shape()[2], out.to_f64())
}
