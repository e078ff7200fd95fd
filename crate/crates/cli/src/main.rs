use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sfuse_core::fusenet::{load_checkpoint, save_checkpoint, Parameters, UNetConfig};
use sfuse_core::kitti_io::{read_disparity_png, read_fgrid, read_flow_png, write_rgb8_png};
use sfuse_core::pipeline::{
    disparity_rgb, embedding_rgb, error_state_rgb, evaluate_dirs, flow_rgb, load_dataset, run_fusion, train_toy,
    write_loss_log, FusionInputs, FusionMode, TrainConfig,
};
use sfuse_core::synth::{write_dataset, GeneratorConfig, MANIFEST_NAME};
use sfuse_core::{CameraModel, Error, Grid, Result, SceneFlowField};

#[derive(Parser)]
#[command(name = "sfuse", version, about = "Multi-frame scene flow fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground truth and baseline exports.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fuse one sample's baseline exports into a result set.
    Fuse {
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, required_unless_present = "debug_passthrough")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Emit the upsampled forward branch without fusion.
        #[arg(long)]
        debug_passthrough: bool,
    },
    /// Train the fusion network on a synthetic dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config (TOML); defaults apply to missing keys.
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path; the loss log goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Outlier rates of a result set against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// 8-bit object map, nonzero = foreground.
        #[arg(long)]
        fg_map: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Render a field as a PNG.
    Viz {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: VizKind,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VizKind {
    /// KITTI flow PNG or fgrid with (u, v[, delta_d]).
    Flow,
    /// KITTI disparity PNG or single-channel fgrid.
    Disp,
    /// Embedding fgrid, shown by its principal components.
    Emb,
    /// Two-channel fgrid of reference and candidate outlier flags.
    Err,
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn loss_log_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".loss.tsv");
    ckpt.with_file_name(name)
}

fn synth(spec: &Path, out: &Path, seed: u64) -> Result<()> {
    let cfg = GeneratorConfig::from_toml(&std::fs::read_to_string(spec)?)?;
    let names = write_dataset(out, &cfg, seed)?;
    println!("wrote {} samples to {} ({MANIFEST_NAME})", names.len(), out.display());
    Ok(())
}

fn fuse(inputs: &Path, camera: &Path, ckpt: Option<&Path>, out: &Path, passthrough: bool) -> Result<()> {
    let camera = CameraModel::load(camera)?;
    let inputs = FusionInputs::load(inputs, camera)?;
    let net: Option<(UNetConfig, Parameters<f32>)> = match ckpt {
        Some(p) if !passthrough => Some(load_checkpoint(p)?),
        _ => None,
    };
    let mode = match &net {
        Some((cfg, params)) => FusionMode::Network { cfg, params },
        None => FusionMode::Passthrough,
    };
    run_fusion(&inputs, mode)?.to_result_set().write(out)?;
    println!("wrote result set to {}", out.display());
    Ok(())
}

fn train(data: &Path, cfg: Option<&Path>, steps: usize, seed: u64, out: &Path) -> Result<()> {
    let cfg = match cfg {
        Some(p) => TrainConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    let samples = load_dataset(data, &cfg.loss)?;
    let outcome = train_toy(&samples, &cfg, steps, seed)?;
    save_checkpoint(out, &cfg.unet, &outcome.params)?;
    let log = loss_log_path(out);
    write_loss_log(&log, &outcome.losses)?;
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        println!("{} steps on {} samples, loss {first:.4} -> {last:.4}", steps, samples.len());
    }
    println!("wrote {} and {}", out.display(), log.display());
    Ok(())
}

fn eval(est: &Path, gt: &Path, fg_map: Option<&Path>, json: bool) -> Result<()> {
    let report = evaluate_dirs(est, gt, fg_map)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{report}");
    }
    Ok(())
}

fn read_flow(path: &Path) -> Result<SceneFlowField> {
    if is_png(path) {
        return read_flow_png(path);
    }
    let g = read_fgrid(path)?;
    match g.channels() {
        3 => SceneFlowField::from_grid(&g),
        2 => {
            let (h, w) = (g.height(), g.width());
            let mut padded = Grid::zeros(3, h, w);
            padded.data_mut()[..2 * h * w].copy_from_slice(g.data());
            padded.set_valid_mask(Some(g.valid_mask()))?;
            SceneFlowField::from_grid(&padded)
        }
        c => Err(Error::format(format!("flow grid has {c} channels, expected 2 or 3"))),
    }
}

fn viz(input: &Path, kind: VizKind, out: &Path) -> Result<()> {
    let (w, h, rgb) = match kind {
        VizKind::Flow => {
            let flow = read_flow(input)?;
            (flow.width, flow.height, flow_rgb(&flow))
        }
        VizKind::Disp => {
            let d = if is_png(input) { read_disparity_png(input)? } else { read_fgrid(input)? };
            (d.width(), d.height(), disparity_rgb(&d)?)
        }
        VizKind::Emb => {
            let e = read_fgrid(input)?;
            (e.width(), e.height(), embedding_rgb(&e)?)
        }
        VizKind::Err => {
            let g = read_fgrid(input)?;
            g.ensure_channels(2, "error flags")?;
            let flags = |c: usize| g.channel(c).iter().map(|&v| v != 0.0).collect::<Vec<_>>();
            (g.width(), g.height(), error_state_rgb(&flags(0), &flags(1))?)
        }
    };
    write_rgb8_png(out, w, h, &rgb)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out, seed } => synth(&spec, &out, seed),
        Command::Fuse {
            inputs,
            camera,
            ckpt,
            out,
            debug_passthrough,
        } => fuse(&inputs, &camera, ckpt.as_deref(), &out, debug_passthrough),
        Command::Train {
            data,
            cfg,
            steps,
            seed,
            out,
        } => train(&data, cfg.as_deref(), steps, seed, &out),
        Command::Eval { est, gt, fg_map, json } => eval(&est, &gt, fg_map.as_deref(), json),
        Command::Viz { input, kind, out } => viz(&input, kind, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
