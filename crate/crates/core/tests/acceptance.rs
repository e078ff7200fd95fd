//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gradient_errors, random_tensor, tiny_unet_report, MAX_REL_ERROR};
use sfuse_core::features::{disparity_residual, FUSION_CHANNELS};
use sfuse_core::fusenet::{
    init_params, loss_fuse, total_loss, InBetween, LossConfig, SkipMode, UNetConfig,
};
use sfuse_core::geometry::{invert_field, se3_compose, se3_exp, se3_invert, se3_log};
use sfuse_core::kitti_io::{read_gray8_png, ResultSet};
use sfuse_core::metrics::{kitti_metrics, Metric, Region, RegionMask};
use sfuse_core::pipeline::{
    d_prime, load_dataset, prepare, run_fusion, train_toy, FusionInputs, FusionMode, TrainConfig,
};
use sfuse_core::synth::{generate_sample, write_dataset, GeneratorConfig, SampleFiles, SyntheticSample};
use sfuse_core::{CameraModel, Grid, SceneFlowField, Twist};

type Outcome = Result<String, String>;

enum Status {
    Pass,
    Fail,
    Declared,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, || format!("took {:.1} s, limit {:.0} s", t.as_secs_f64(), limit.as_secs_f64()))
}

fn config_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn samples(cfg: &GeneratorConfig, seed: u64) -> Vec<SyntheticSample> {
    (0..cfg.sample_count())
        .map(|i| generate_sample(cfg, seed, i).expect("sample renders").sample)
        .collect()
}

fn parameter_counts() -> Outcome {
    let start = Instant::now();
    let variant = |levels: &[usize], in_between, skip_mode| UNetConfig {
        in_between,
        skip_mode,
        ..UNetConfig::with_widths(levels)
    };
    let cases = [
        ("3 levels", UNetConfig::default(), 2_379_267),
        ("2 levels", variant(&[64, 128], InBetween::One, SkipMode::Add), 526_851),
        ("4 levels", variant(&[64, 128, 256, 512], InBetween::One, SkipMode::Add), 9_786_883),
        ("no in-between", variant(&[64, 128, 256], InBetween::None, SkipMode::Add), 1_420_163),
        ("two in-between", variant(&[64, 128, 256], InBetween::Two, SkipMode::Add), 3_338_371),
        ("resblock", variant(&[64, 128, 256], InBetween::ResBlock, SkipMode::Add), 3_338_371),
        ("concat", variant(&[64, 128, 256], InBetween::One, SkipMode::Concat), 2_563_587),
    ];
    for (name, cfg, want) in &cases {
        let declared = cfg.parameter_count().map_err(|e| e.to_string())?;
        check(declared == *want, || format!("{name}: {declared} != {want}"))?;
        let built = init_params::<f32>(cfg, 0).map_err(|e| e.to_string())?.count();
        check(built == *want, || format!("{name}: initialized {built} != {want}"))?;
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!("{} configurations exact", cases.len()))
}

fn channel_contract() -> Outcome {
    let s = generate_sample(&GeneratorConfig::default(), 1, 0).map_err(|e| e.to_string())?.sample;
    let p = prepare(&s.fusion_inputs()).map_err(|e| e.to_string())?;
    let c = p.input.grid.channels();
    check(c == 43 && FUSION_CHANNELS == 43, || format!("{c} channels"))?;
    Ok("43 channels".into())
}

fn random_twist(rng: &mut ChaCha8Rng) -> Twist {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    // Mix tiny, moderate and near-pi angles.
    let angle = match rng.random_range(0..3) {
        0 => rng.random_range(0.0..1e-6),
        1 => rng.random_range(0.0..2.0),
        _ => rng.random_range(2.0..3.0),
    };
    let v = Vector3::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    );
    Twist::new(v, axis * angle)
}

fn geometry_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cam = CameraModel::new(721.5, 721.5, 609.6, 172.9, 0.54).map_err(|e| e.to_string())?;
    let cases = 10_000;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (xa, xb, xc) = (random_twist(&mut rng), random_twist(&mut rng), random_twist(&mut rng));
        let (a, b, c) = (se3_exp(&xa), se3_exp(&xb), se3_exp(&xc));
        let back = se3_log(&a).map_err(|e| e.to_string())?;
        let log_err = (back.v - xa.v).amax().max((back.omega - xa.omega).amax());
        let inv_err = se3_compose(&a, &se3_invert(&a)).max_abs_diff(&sfuse_core::Se3::identity());
        let anti = se3_invert(&se3_compose(&a, &b)).max_abs_diff(&se3_compose(&se3_invert(&b), &se3_invert(&a)));
        let assoc = se3_compose(&se3_compose(&a, &b), &c).max_abs_diff(&se3_compose(&a, &se3_compose(&b, &c)));
        let x = rng.random_range(0.0..1242.0);
        let y = rng.random_range(0.0..375.0);
        let d = rng.random_range(1.0..200.0);
        let p = cam.backproject(x, y, d).map_err(|e| e.to_string())?;
        let ((px, py), pd) = cam.project(&p).map_err(|e| e.to_string())?;
        let proj = (px - x).abs().max((py - y).abs()).max((pd - d).abs());
        for (name, e) in [("log", log_err), ("inverse", inv_err), ("anti", anti), ("assoc", assoc), ("projection", proj)] {
            check(e <= 1e-9, || format!("{name} error {e:e}"))?;
        }
        worst = worst.max(log_err).max(inv_err).max(anti).max(assoc).max(proj);
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("{cases} cases, max error {worst:.1e}"))
}

fn max_flow_error(est: &SceneFlowField, gt: &SceneFlowField, occluded: &[bool]) -> f64 {
    (0..gt.len())
        .filter(|&i| !occluded[i] && gt.valid[i])
        .map(|i| {
            let e = (est.u[i] - gt.u[i]).abs().max((est.v[i] - gt.v[i]).abs());
            if est.valid[i] { e } else { f64::INFINITY }
        })
        .fold(0.0, f64::max)
}

fn constant_motion_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = GeneratorConfig::default();
    let set = samples(&cfg, 21);
    check(set.len() >= 20 && cfg.constant_motion, || "needs 20 constant-motion scenes".into())?;
    let (mut inv_worst, mut flow_worst) = (0.0f64, 0.0f64);
    for (i, s) in set.iter().enumerate() {
        let e = invert_field(&s.gt_se3_bw).max_abs_diff(&s.gt_se3_fw);
        check(e <= 1e-9, || format!("scene {i}: inverted backward differs by {e:e}"))?;
        inv_worst = inv_worst.max(e);
        let p = prepare(&s.fusion_inputs()).map_err(|e| e.to_string())?;
        let fw = max_flow_error(&p.flow_fw, &s.gt_flow_fw, &s.occlusion_fw);
        let bw = max_flow_error(&p.flow_bw, &s.gt_flow_fw, &s.occlusion_bw);
        check(fw <= 1e-3 && bw <= 1e-3, || format!("scene {i}: flow error fw {fw:e} bw {bw:e} px"))?;
        flow_worst = flow_worst.max(fw).max(bw);
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("{} scenes, matrix error {inv_worst:.1e}, flow error {flow_worst:.1e} px", set.len()))
}

fn residual_property() -> Outcome {
    let toy = GeneratorConfig::from_toml(&std::fs::read_to_string(config_path("toy_synth.toml")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let free = GeneratorConfig {
        constant_motion: false,
        block_aligned: false,
        ..GeneratorConfig::default()
    };
    let mut scenes = 0;
    let mut occluded = 0;
    for (cfg, seed) in [(GeneratorConfig::default(), 21), (toy, 7), (free, 5)] {
        for (i, s) in samples(&cfg, seed).iter().enumerate() {
            let d_t = &s.disparities[1];
            for (flow, occ, other) in [
                (&s.gt_flow_fw, &s.occlusion_fw, &s.disparities[2]),
                (&s.gt_flow_bw, &s.occlusion_bw, &s.disparities[0]),
            ] {
                let r = disparity_residual(other, flow, &d_prime(d_t, flow)).map_err(|e| e.to_string())?;
                for p in 0..flow.len() {
                    let (y, x) = (p / flow.width, p % flow.width);
                    let holds = r.is_valid(y, x) && r.at(0, y, x).abs() <= 1e-6;
                    check(holds != occ[p], || format!("scene {i} (seed {seed}) pixel ({x}, {y})"))?;
                    occluded += occ[p] as usize;
                }
            }
            scenes += 1;
        }
    }
    Ok(format!("{scenes} scenes, {occluded} occluded pixels predicted exactly"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(11);
    let mut worst = 0.0f64;
    let mut record = |name: &str, e: f64| {
        worst = worst.max(e);
        check(e < MAX_REL_ERROR, || format!("{name}: {e:e}"))
    };
    let x = random_tensor(&mut rng, &[2, 6, 6]);
    let y = random_tensor(&mut rng, &[2, 6, 6]);
    let w = random_tensor(&mut rng, &[3, 2, 3, 3]);
    let wt = random_tensor(&mut rng, &[2, 3, 2, 2]);
    let b = random_tensor(&mut rng, &[3]);
    let e = |build: &dyn Fn(&mut _, &[_]) -> _, leaves: Vec<_>| gradient_errors(build, leaves).elementwise;
    record("conv2d", e(&|g, i| g.conv2d(i[0], i[1], i[2], 1, 1).unwrap(), vec![x.clone(), w.clone(), b.clone()]))?;
    record("conv2d stride 2", e(&|g, i| g.conv2d(i[0], i[1], i[2], 2, 1).unwrap(), vec![x.clone(), w, b.clone()]))?;
    record("conv_transpose2d", e(&|g, i| g.conv_transpose2d(i[0], i[1], i[2], 2, 0).unwrap(), vec![x.clone(), wt, b]))?;
    record("leaky_relu", e(&|g, i| g.leaky_relu(i[0], 0.1), vec![x.clone()]))?;
    record("add", e(&|g, i| g.add(i[0], i[1]).unwrap(), vec![x.clone(), y.clone()]))?;
    record("concat", e(&|g, i| g.concat(i[0], i[1]).unwrap(), vec![x.clone(), y]))?;
    record("scale", e(&|g, i| g.scale(i[0], 1.7), vec![x.clone()]))?;
    record("shift", e(&|g, i| g.shift(i[0], -0.3), vec![x]))?;

    let (h, wd) = (8, 8);
    let gt = Grid::from_vec(3, h, wd, random_tensor(&mut rng, &[3, h, wd]).to_f64()).unwrap();
    let d_t = Grid::from_fn(1, h, wd, |_, y, x| 1.0 + 0.1 * (x + y) as f64);
    let valid = vec![true; h * wd];
    let loss = LossConfig::default();
    let pred = random_tensor(&mut rng, &[3, h, wd]);
    record("fuse_loss", e(&|g, i| g.fuse_loss(i[0], &gt, &d_t, &valid, &loss).unwrap(), vec![pred.clone()]))?;
    record("l1_loss", e(&|g, i| g.l1_loss(i[0], &gt, &valid).unwrap(), vec![pred]))?;

    let report = tiny_unet_report(InBetween::One, SkipMode::Add);
    let unet = report.per_tensor;
    let crossings = report.kink_crossings;
    check(crossings == 0, || format!("{crossings} probes crossed an activation kink"))?;
    check(unet < MAX_REL_ERROR, || format!("tiny U-Net: {unet:e} per tensor"))?;
    within(Duration::from_secs(120), start)?;
    Ok(format!("primitives {worst:.1e} elementwise, tiny U-Net {unet:.1e} per tensor"))
}

fn loss_values() -> Outcome {
    let cfg = LossConfig::default();
    check(
        (cfg.epsilon, cfg.gamma, cfg.alpha, cfg.mu) == (0.01, 0.4, 2.0, 0.1),
        || format!("constants {cfg:?}"),
    )?;
    let px = |u: f64, v: f64, w: f64| Grid::from_vec(3, 1, 1, vec![u, v, w]).unwrap();
    let cases = [
        (px(1.0, 2.0, 0.5), px(1.0, 2.0, 10.5), 10.0, 0.15849),
        (px(2.0, 0.0, 0.0), px(1.0, 0.0, 5.0), 5.0, 1.00399),
        (px(0.0, 0.0, 1.0), px(0.0, 0.0, 5.0), 5.0, 1.32215),
    ];
    for (pred, gt, d, want) in &cases {
        let got = loss_fuse(pred, gt, &Grid::filled(1, 1, 1, *d), &[true], &cfg).map_err(|e| e.to_string())?;
        check((got - want).abs() <= 1e-5, || format!("{got} != {want}"))?;
    }
    let t = total_loss(1.32215, 2.0, &cfg);
    check((t - 1.52215).abs() < 1e-12, || format!("total {t}"))?;
    Ok("0.15849 / 1.00399 / 1.32215, total = fuse + 0.1 r3d".into())
}

fn read_mask(path: &Path) -> Result<Vec<bool>, String> {
    Ok(read_gray8_png(path).map_err(|e| e.to_string())?.data().iter().map(|&v| v > 0.0).collect())
}

fn toy_training() -> Outcome {
    let start = Instant::now();
    let read = |n: &str| std::fs::read_to_string(config_path(n)).map_err(|e| e.to_string());
    let gen = GeneratorConfig::from_toml(&read("toy_synth.toml")?).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::from_toml(&read("toy_train.toml")?).map_err(|e| e.to_string())?;
    let steps = 2000;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let names = write_dataset(tmp.path(), &gen, 7).map_err(|e| e.to_string())?;
    let data = load_dataset(tmp.path(), &cfg.loss).map_err(|e| e.to_string())?;
    let out = train_toy(&data, &cfg, steps, 1).map_err(|e| e.to_string())?;

    let (mut corrupted, mut fused, mut total) = (0, 0, 0);
    for name in &names {
        let dir = tmp.path().join(name);
        let cam = CameraModel::load(dir.join(SampleFiles::CAMERA)).map_err(|e| e.to_string())?;
        let inputs = FusionInputs::load(&dir, cam).map_err(|e| e.to_string())?;
        let gt = ResultSet::read(dir.join(SampleFiles::GT_DIR)).map_err(|e| e.to_string())?;
        let region = read_mask(&dir.join(SampleFiles::CORRUPTED))?;
        let mask = RegionMask::new(inputs.width(), inputs.height(), region, vec![false; gt.flow.len()])
            .map_err(|e| e.to_string())?;
        let sf = |mode| -> Result<(usize, usize), String> {
            let est = run_fusion(&inputs, mode).map_err(|e| e.to_string())?.to_result_set();
            Ok(kitti_metrics(&est, &gt, &mask).map_err(|e| e.to_string())?.count(Metric::Sf, Region::All))
        };
        let (c, n) = sf(FusionMode::Passthrough)?;
        let (f, _) = sf(FusionMode::Network { cfg: &cfg.unet, params: &out.params })?;
        corrupted += c;
        fused += f;
        total += n;
    }
    let rate = |k: usize| 100.0 * k as f64 / total.max(1) as f64;
    let windows: Vec<f64> = out.losses.chunks(100).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    let (first, last) = (windows[0], windows[windows.len() - 1]);
    let rises = windows.windows(2).filter(|p| p[1] > p[0]).count();
    let summary = format!(
        "SF in corrupted region {:.2}% -> {:.2}% (ratio {:.3}), loss window {first:.1} -> {last:.1} ({rises} of {} window transitions rise), {:.0} s",
        rate(corrupted),
        rate(fused),
        fused as f64 / corrupted.max(1) as f64,
        windows.len() - 1,
        start.elapsed().as_secs_f64()
    );
    check(corrupted > 0 && 5 * fused <= corrupted, || summary.clone())?;
    check(last <= first, || summary.clone())?;
    within(Duration::from_secs(30 * 60), start)?;
    Ok(summary)
}

fn format_round_trips() -> Outcome {
    common::check_golden_files()
}

fn metrics_suite() -> Outcome {
    let (w, h) = (4, 1);
    let disp = |v: &[f64]| Grid::from_vec(1, h, w, v.to_vec()).unwrap();
    let gt = ResultSet {
        disp_0: disp(&[10.0; 4]),
        disp_1: disp(&[10.0; 4]),
        flow: SceneFlowField::zeros(w, h),
    };
    let mut est = gt.clone();
    est.disp_1 = disp(&[20.0, 10.0, 10.0, 10.0]);
    est.flow.u[1] = 10.0;
    let r = kitti_metrics(&est, &gt, &RegionMask::all_background(w, h)).map_err(|e| e.to_string())?;
    let got: Vec<f64> = Metric::ALL.iter().map(|&m| r.rate(m, Region::All).unwrap()).collect();
    check(got == [0.0, 25.0, 25.0, 50.0], || format!("hand case {got:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let trials = 500;
    for t in 0..trials {
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let n = w * h;
        let mut field = |scale: f64, base: f64| {
            Grid::from_vec(1, h, w, (0..n).map(|_| base + rng.random_range(0.0..scale)).collect()).unwrap()
        };
        let gt_d0 = field(50.0, 1.0);
        let gt_d1 = field(50.0, 1.0);
        let (est_d0, est_d1) = (field(60.0, 0.5), field(60.0, 0.5));
        // Dense ground truth, so every metric sees the same pixels; the
        // estimate may have holes.
        let mut flow = |s: f64, holes: f64| {
            let mut f = SceneFlowField::zeros(w, h);
            for i in 0..n {
                f.u[i] = rng.random_range(-s..s);
                f.v[i] = rng.random_range(-s..s);
                f.valid[i] = !rng.random_bool(holes);
            }
            f
        };
        let gt = ResultSet { disp_0: gt_d0, disp_1: gt_d1, flow: flow(40.0, 0.0) };
        let est = ResultSet { disp_0: est_d0, disp_1: est_d1, flow: flow(45.0, 0.1) };
        let fg: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let r = kitti_metrics(&est, &gt, &RegionMask::new(w, h, vec![true; n], fg).unwrap()).map_err(|e| e.to_string())?;
        for region in Region::ALL {
            let rate = |m| r.rate(m, region).unwrap_or(0.0);
            let m = rate(Metric::D1).max(rate(Metric::D2)).max(rate(Metric::Fl));
            check(rate(Metric::Sf) >= m, || format!("trial {t}: SF {} < {m}", rate(Metric::Sf)))?;
        }
    }
    Ok(format!("D1 0.00 D2 25.00 Fl 25.00 SF 50.00; SF >= max on {trials} random sets"))
}

fn main() {
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("parameter counts", parameter_counts),
        ("43-channel input", channel_contract),
        ("SE(3) and projection identities", geometry_suite),
        ("constant-motion oracle", constant_motion_oracle),
        ("disparity residual property", residual_property),
        ("gradient checks", gradient_checks),
        ("loss values", loss_values),
        ("toy fusion training", toy_training),
        ("format round trips", format_round_trips),
        ("outlier metrics", metrics_suite),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let (status, detail) = match std::panic::catch_unwind(run) {
            Ok(Ok(d)) => (Status::Pass, d),
            Ok(Err(d)) => (Status::Fail, d),
            Err(_) => (Status::Fail, "panicked".to_string()),
        };
        report(i + 1, name, &status, &detail);
        failed += matches!(status, Status::Fail) as usize;
    }
    report(
        11,
        "benchmark tables",
        &Status::Declared,
        "full-benchmark numbers need KITTI training of the real baseline; not reproduced, criteria 1-10 substitute",
    );
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn report(n: usize, name: &str, status: &Status, detail: &str) {
    let tag = match status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Declared => "DECLARED",
    };
    println!("criterion {n:>2} {tag:<8} {name}: {detail}");
}
