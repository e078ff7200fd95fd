#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfuse_core::fusenet::{init_params, unet_graph, Graph, InBetween, LossConfig, NodeId, SkipMode, Tensor, UNetConfig};
use sfuse_core::Grid;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-1, -0.1] u [0.1, 1]`, away from activation kinks.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Builds the graph with every tensor as a parameter and reduces the output
/// to a scalar by a fixed random projection.
fn evaluate<F>(build: &F, leaves: &[Tensor<f64>], projection: &mut Option<Vec<f64>>) -> (Graph<f64>, Vec<NodeId>, NodeId)
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids);
    let n = g.value(out).len();
    let w = projection.get_or_insert_with(|| {
        let mut r = rng(n as u64);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    });
    let root = g.dot(out, w).unwrap();
    (g, ids, root)
}

/// Worst disagreement between analytic gradients and central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    /// Max over elements of `|a - n| / max(|a|, |n|)`.
    pub elementwise: f64,
    /// Max over leaves of `||a - n|| / ||n||`.
    pub per_tensor: f64,
    /// Probes whose step crossed an activation kink, where the difference
    /// quotient does not approximate the derivative.
    pub kink_crossings: usize,
}

pub fn gradient_errors<F>(build: F, leaves: Vec<Tensor<f64>>) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let mut projection = None;
    let (g, ids, root) = evaluate(&build, &leaves, &mut projection);
    let pattern = g.activation_pattern();
    let grads = g.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(&leaves)
        .map(|(&id, t)| grads.get_or_zeros(id, t.len()))
        .collect();

    let mut report = GradReport {
        elementwise: 0.0,
        per_tensor: 0.0,
        kink_crossings: 0,
    };
    let mut probe = leaves.clone();
    for (l, leaf) in leaves.iter().enumerate() {
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for i in 0..leaf.len() {
            let x = leaf.data()[i];
            let mut crossed = false;
            let mut f = |v: f64| {
                probe[l].data_mut()[i] = v;
                let (g, _, root) = evaluate(&build, &probe, &mut projection);
                crossed |= g.activation_pattern() != pattern;
                g.value(root).item().unwrap()
            };
            let numeric = (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP);
            probe[l].data_mut()[i] = x;
            report.kink_crossings += crossed as usize;
            let a = analytic[l][i];
            let scale = a.abs().max(numeric.abs());
            if scale > 0.0 {
                report.elementwise = report.elementwise.max((a - numeric).abs() / scale);
            }
            diff2 += (a - numeric).powi(2);
            norm2 += numeric * numeric;
        }
        if norm2 > 0.0 {
            report.per_tensor = report.per_tensor.max((diff2 / norm2).sqrt());
        } else if diff2 > 0.0 {
            report.per_tensor = f64::INFINITY;
        }
    }
    report
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn ensure(cond: bool, what: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn rows(v: &serde_json::Value) -> Vec<serde_json::Value> {
    v.as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().cloned().unwrap_or_else(|| vec![r.clone()]))
        .collect()
}

fn floats(v: &serde_json::Value) -> Vec<f64> {
    rows(v).iter().map(|x| x.as_f64().unwrap()).collect()
}

fn bools(v: &serde_json::Value) -> Vec<bool> {
    rows(v).iter().map(|x| x.as_bool().unwrap()).collect()
}

/// Decodes the golden files against the values their generator recorded,
/// then checks that re-encoding preserves every stored sample and bit.
pub fn check_golden_files() -> Result<String, String> {
    use sfuse_core::kitti_io::*;
    let dir = golden_dir();
    let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let expected: serde_json::Value =
        serde_json::from_slice(&read("expected.json")?).map_err(|e| e.to_string())?;
    let err = |e: sfuse_core::Error| e.to_string();

    let disp_bytes = read("disp.png")?;
    let disp = decode_disparity_png(&disp_bytes).map_err(err)?;
    ensure(disp.data() == floats(&expected["disp"]).as_slice(), "disparity values")?;
    ensure(disp.valid_mask() == bools(&expected["disp_valid"]), "disparity validity")?;
    let again = encode_disparity_png(&disp).map_err(err)?;
    ensure(decode_disparity_png(&again).map_err(err)? == disp, "disparity re-encode")?;
    ensure(encode_disparity_png(&decode_disparity_png(&again).map_err(err)?).map_err(err)? == again, "disparity rewrite bytes")?;

    let flow_bytes = read("flow.png")?;
    let flow = decode_flow_png(&flow_bytes).map_err(err)?;
    ensure(flow.u == floats(&expected["flow_u"]), "flow u")?;
    ensure(flow.v == floats(&expected["flow_v"]), "flow v")?;
    ensure(flow.valid == bools(&expected["flow_valid"]), "flow validity")?;
    let again = encode_flow_png(&flow).map_err(err)?;
    ensure(decode_flow_png(&again).map_err(err)? == flow, "flow re-encode")?;

    let grid_bytes = read("grid.fgrid")?;
    let grid = decode_fgrid(&grid_bytes).map_err(err)?;
    ensure(grid.shape() == (2, 2, 3), "fgrid shape")?;
    let want = floats(&expected["grid"]);
    ensure(
        grid.data().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()),
        "fgrid values",
    )?;
    ensure(grid.valid_mask() == bools(&expected["grid_valid"]), "fgrid validity")?;
    ensure(encode_fgrid(&grid) == grid_bytes, "fgrid bytes")?;
    Ok("disp.png, flow.png, grid.fgrid".into())
}

pub fn target(seed: u64, h: usize, w: usize) -> (Grid, Grid, Vec<bool>) {
    let mut r = rng(seed);
    let gt = random_tensor(&mut r, &[3, h, w]).to_f64();
    let d = random_tensor(&mut r, &[1, h, w]).to_f64();
    let mut valid = vec![true; h * w];
    valid[1] = false;
    (
        Grid::from_vec(3, h, w, gt).unwrap(),
        Grid::from_vec(1, h, w, d.iter().map(|v| v.abs() + 0.5).collect()).unwrap(),
        valid,
    )
}

/// Widths 4/8/16 on an 8 x 8 input, differentiated through the fusion loss
/// with respect to every parameter and the input.
pub fn tiny_unet_report(in_between: InBetween, skip: SkipMode) -> GradReport {
    let cfg = UNetConfig {
        in_between,
        skip_mode: skip,
        ..UNetConfig::with_widths(&[4, 8, 16])
    };
    let params = init_params::<f64>(&cfg, 6).unwrap();
    let (h, w) = (8, 8);
    let input = random_tensor(&mut rng(7), &[cfg.in_channels, h, w]);
    let (gt, d_t, valid) = target(8, h, w);
    let loss = LossConfig::default();
    let mut leaves: Vec<_> = params.entries().iter().map(|(_, t)| t.clone()).collect();
    leaves.push(input);
    gradient_errors(
        |g, ids| {
            let (x, weights) = ids.split_last().unwrap();
            let y = unet_graph(g, &cfg, weights, *x).unwrap();
            g.fuse_loss(y, &gt, &d_t, &valid, &loss).unwrap()
        },
        leaves,
    )
}
