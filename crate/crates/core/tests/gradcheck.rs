mod common;

use common::{gradient_errors, random_tensor, rng, target, tiny_unet_report, MAX_REL_ERROR};
use sfuse_core::fusenet::{Graph, InBetween, LossConfig, NodeId, SkipMode, Tensor};

fn max_relative_error<F>(build: F, leaves: Vec<Tensor<f64>>) -> f64
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    gradient_errors(build, leaves).elementwise
}

fn assert_close(name: &str, err: f64) {
    assert!(err < MAX_REL_ERROR, "{name}: relative error {err:e}");
}

#[test]
fn conv2d_matches_finite_differences() {
    let mut r = rng(1);
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)] {
        let leaves = vec![
            random_tensor(&mut r, &[2, 5, 6]),
            random_tensor(&mut r, &[3, 2, k, k]),
            random_tensor(&mut r, &[3]),
        ];
        let err = max_relative_error(|g, ids| g.conv2d(ids[0], ids[1], ids[2], stride, pad).unwrap(), leaves);
        assert_close(&format!("conv2d stride {stride} pad {pad} k {k}"), err);
    }
}

#[test]
fn conv_transpose2d_matches_finite_differences() {
    let mut r = rng(2);
    for (stride, pad, k) in [(2, 0, 2), (2, 1, 4), (1, 1, 3)] {
        let leaves = vec![
            random_tensor(&mut r, &[3, 3, 4]),
            random_tensor(&mut r, &[3, 2, k, k]),
            random_tensor(&mut r, &[2]),
        ];
        let err = max_relative_error(
            |g, ids| g.conv_transpose2d(ids[0], ids[1], ids[2], stride, pad).unwrap(),
            leaves,
        );
        assert_close(&format!("conv_transpose2d stride {stride} pad {pad} k {k}"), err);
    }
}

#[test]
fn pointwise_ops_match_finite_differences() {
    let mut r = rng(3);
    let a = random_tensor(&mut r, &[2, 3, 3]);
    let b = random_tensor(&mut r, &[2, 3, 3]);
    let c = random_tensor(&mut r, &[1, 3, 3]);
    assert_close("leaky_relu", max_relative_error(|g, ids| g.leaky_relu(ids[0], 0.1), vec![a.clone()]));
    assert_close(
        "leaky_relu chain",
        max_relative_error(
            |g, ids| {
                let h = g.leaky_relu(ids[0], 0.1);
                let h = g.add(h, ids[1]).unwrap();
                let h = g.shift(h, 0.05);
                g.leaky_relu(h, 0.2)
            },
            vec![a.clone(), b.clone()],
        ),
    );
    assert_close("add", max_relative_error(|g, ids| g.add(ids[0], ids[1]).unwrap(), vec![a.clone(), b.clone()]));
    assert_close("concat", max_relative_error(|g, ids| g.concat(ids[0], ids[1]).unwrap(), vec![a.clone(), c]));
    assert_close("scale", max_relative_error(|g, ids| g.scale(ids[0], -2.5), vec![a.clone()]));
    assert_close("shift", max_relative_error(|g, ids| g.shift(ids[0], 0.75), vec![a.clone()]));
    assert_close(
        "dot",
        max_relative_error(|g, ids| g.dot(ids[0], &[0.5, -1.0, 2.0, 0.25, 1.5, -0.75]).unwrap(), vec![random_tensor(&mut r, &[6])]),
    );
}

#[test]
fn losses_match_finite_differences() {
    let (gt, d_t, valid) = target(4, 3, 4);
    let cfg = LossConfig::default();
    let pred = random_tensor(&mut rng(5), &[3, 3, 4]);
    assert_close(
        "fuse_loss",
        max_relative_error(|g, ids| g.fuse_loss(ids[0], &gt, &d_t, &valid, &cfg).unwrap(), vec![pred.clone()]),
    );
    assert_close(
        "l1_loss",
        max_relative_error(|g, ids| g.l1_loss(ids[0], &gt, &valid).unwrap(), vec![pred]),
    );
}

fn check_tiny_unet(in_between: InBetween, skip: SkipMode) {
    let report = tiny_unet_report(in_between, skip);
    // Entries below ~1e-5 sit at the difference quotient's round-off floor,
    // so the tolerance applies per parameter tensor.
    assert_eq!(report.kink_crossings, 0, "seed puts a pre-activation within one step of a kink");
    assert_close(&format!("unet {in_between:?}/{skip:?}"), report.per_tensor);
}

#[test]
fn tiny_unet_matches_finite_differences() {
    check_tiny_unet(InBetween::One, SkipMode::Add);
}

#[test]
fn tiny_unet_variants_match_finite_differences() {
    check_tiny_unet(InBetween::ResBlock, SkipMode::Concat);
    check_tiny_unet(InBetween::None, SkipMode::Add);
}
