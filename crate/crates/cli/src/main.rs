//! `lsfuse`: synthesize scenes, fuse Lidar with stereo, clean Lidar, score
//! predictions and run degradation sweeps.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lsfuse::data_io::{
    generate_synthetic_scene, load_calibration, load_disparity_png, load_scene, save_disparity_png,
    save_mask_png, save_scene, SceneBundle, SynthSpec,
};
use lsfuse::eval::{
    compute_metrics, compute_metrics_with, noise_sweep, sparsity_sweep, MetricsReport,
    RelativeErrorDomain, SparsityControl, SweepResult,
};
use lsfuse::pipeline::{run_feedback_loop, FusionConfig};
use lsfuse::SparseDisparityMap;

#[derive(Parser, Debug)]
#[command(
    name = "lsfuse",
    version,
    about = "Noise-aware Lidar-stereo disparity fusion"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML fusion configuration; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scene synthesis and sweep subsampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent sweep settings. Results do not depend on it.
    #[arg(long, global = true, default_value = "1")]
    threads: NonZeroUsize,
    /// Drop the Lidar term from the objective.
    #[arg(long, global = true)]
    no_lidar: bool,
    /// Drop the warping term from the objective.
    #[arg(long, global = true)]
    no_warping: bool,
    /// Drop the smoothness term from the objective.
    #[arg(long, global = true)]
    no_smoothness: bool,
    /// Drop the plane-fitting term from the objective.
    #[arg(long, global = true)]
    no_plane: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes with planted Lidar outliers.
    Synth(SynthArgs),
    /// Run the feedback-loop fusion on a scene directory.
    Fuse(FuseArgs),
    /// Run the feedback loop and emit the cleaned Lidar with removal masks.
    CleanLidar(FuseArgs),
    /// Score a disparity PNG against ground truth.
    Evaluate(EvaluateArgs),
    /// Rerun fusion under thinned or noisy Lidar.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; with `--count` above 1 each scene goes in `scene_NNN/` below it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Fraction of pixels carrying a Lidar sample.
    #[arg(long)]
    density: Option<f64>,
    /// Fraction of Lidar samples replaced by outliers.
    #[arg(long)]
    outliers: Option<f64>,
    /// Gaussian noise on the inlier samples, pixels.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Scene directory.
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Predicted disparity PNG (16-bit, value/256; 0 marks invalid).
    pred: PathBuf,
    /// Scene directory supplying `gt.png` and `calib.txt`.
    #[arg(long, conflicts_with_all = ["gt", "calib"], required_unless_present_all = ["gt", "calib"])]
    scene: Option<PathBuf>,
    #[arg(long, requires = "calib")]
    gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    calib: Option<PathBuf>,
    /// Score only pixels valid in the prediction rather than treating it as dense.
    #[arg(long)]
    sparse: bool,
    #[arg(long, value_enum, default_value_t = Domain::Depth)]
    abs_rel_domain: Domain,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Domain {
    Depth,
    Disparity,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(subcommand)]
    kind: SweepKindArgs,
}

#[derive(Subcommand, Debug)]
enum SweepKindArgs {
    /// Thin the Lidar by beam-band decimation or uniform keep fractions.
    Sparsity {
        scene: PathBuf,
        /// Beam counts out of 64, e.g. `64,32,16,8`.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "fractions",
            required_unless_present = "fractions"
        )]
        beams: Vec<usize>,
        /// Keep fractions, e.g. `1.0,0.5,0.25`.
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add Gaussian noise to a fixed fraction of the Lidar points.
    Noise {
        scene: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Raised for argument combinations clap cannot express.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn fusion_config(global: &Global) -> anyhow::Result<FusionConfig> {
    let mut cfg = match &global.config {
        Some(path) => FusionConfig::load(path)?,
        None => FusionConfig::default(),
    };
    let enabled = &mut cfg.weights.enabled;
    enabled.lidar &= !global.no_lidar;
    enabled.warping &= !global.no_warping;
    enabled.smoothness &= !global.no_smoothness;
    enabled.plane &= !global.no_plane;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dense_map(field: &lsfuse::DenseDisparityField) -> SparseDisparityMap {
    SparseDisparityMap::from_dense(field.grid().clone())
}

fn synth(global: &Global, args: &SynthArgs) -> anyhow::Result<()> {
    if args.count == 0 {
        return Err(UsageError("--count must be at least 1".into()).into());
    }
    let base = SynthSpec::default();
    for k in 0..args.count {
        let spec = SynthSpec {
            width: args.width.unwrap_or(base.width),
            height: args.height.unwrap_or(base.height),
            lidar_density: args.density.unwrap_or(base.lidar_density),
            outlier_fraction: args.outliers.unwrap_or(base.outlier_fraction),
            noise_sigma: args.noise.unwrap_or(base.noise_sigma),
            seed: global.seed + k as u64,
            ..base.clone()
        };
        let scene = generate_synthetic_scene(&spec)?;
        let dir = if args.count == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("scene_{k:03}"))
        };
        save_scene(&dir, &scene)?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn fuse(global: &Global, args: &FuseArgs, clean_only: bool) -> anyhow::Result<()> {
    let cfg = fusion_config(global)?;
    let scene = load_scene(&args.scene)?;
    let result = run_feedback_loop(&scene, &cfg)?;
    create_dir(&args.out)?;
    if clean_only {
        let (raw_l, raw_r) = scene.lidar_maps();
        for (name, raw, kept, keep) in [
            ("l", &raw_l, &result.cleaned.0, &result.keep.0),
            ("r", &raw_r, &result.cleaned.1, &result.keep.1),
        ] {
            save_disparity_png(args.out.join(format!("lidar_clean_{name}.png")), kept)?;
            let removed = raw.mask.zip_map(keep, |&valid, &k| valid && !k);
            save_mask_png(args.out.join(format!("removed_{name}.png")), &removed)?;
        }
    } else {
        save_disparity_png(args.out.join("disp_l.png"), &dense_map(&result.left))?;
        save_disparity_png(args.out.join("disp_r.png"), &dense_map(&result.right))?;
        save_disparity_png(args.out.join("init_l.png"), &dense_map(&result.initial.0))?;
        save_disparity_png(args.out.join("init_r.png"), &dense_map(&result.initial.1))?;
    }
    write_text(&args.out.join("trace.txt"), &result.report_text())?;
    if let (Some(gt), false) = (&scene.gt, clean_only) {
        let report = compute_metrics(&result.left, gt, &scene.calib)?;
        let text = format!(
            "{}{}\n{}\n",
            report.to_key_values(),
            MetricsReport::CSV_HEADER,
            report.to_csv_row()
        );
        write_text(&args.out.join("metrics.txt"), &text)?;
    }
    let last = result.tallies.last().copied().unwrap_or_default();
    println!(
        "rounds={} kept_left={} kept_right={} removed_left={} removed_right={}",
        result.tallies.len(),
        last.kept_left,
        last.kept_right,
        last.removed_left,
        last.removed_right
    );
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let (gt_path, calib_path) = match (&args.scene, &args.gt, &args.calib) {
        (Some(dir), _, _) => (dir.join("gt.png"), dir.join("calib.txt")),
        (None, Some(gt), Some(calib)) => (gt.clone(), calib.clone()),
        _ => return Err(UsageError("pass either --scene or both --gt and --calib".into()).into()),
    };
    let pred = load_disparity_png(&args.pred)?;
    let gt = load_disparity_png(&gt_path)?;
    let calib = load_calibration(&calib_path)?;
    let domain = match args.abs_rel_domain {
        Domain::Depth => RelativeErrorDomain::Depth,
        Domain::Disparity => RelativeErrorDomain::Disparity,
    };
    let mask = args.sparse.then_some(&pred.mask);
    let report = compute_metrics_with(&pred.values, mask, &gt, &calib, domain)?;
    print!("{}", report.to_key_values());
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", report.to_csv_row());
    Ok(())
}

/// Runs `run_one` on each setting, `threads` settings at a time, and
/// concatenates the per-setting results in input order.
fn run_settings<T: Sync>(
    settings: &[T],
    threads: usize,
    run_one: impl Fn(&T) -> lsfuse::Result<SweepResult> + Sync,
) -> lsfuse::Result<SweepResult> {
    let mut parts = Vec::with_capacity(settings.len());
    for chunk in settings.chunks(threads) {
        let results: Vec<lsfuse::Result<SweepResult>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|x| s.spawn(|| run_one(x))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        for r in results {
            parts.push(r?);
        }
    }
    let kind = parts[0].kind;
    Ok(SweepResult {
        kind,
        points: parts.into_iter().flat_map(|p| p.points).collect(),
    })
}

fn check_strictly_monotone(values: &[f64]) -> anyhow::Result<()> {
    let up = values.windows(2).all(|w| w[0] < w[1]);
    let down = values.windows(2).all(|w| w[0] > w[1]);
    if values.is_empty() || !(up || down) {
        bail!(UsageError(format!(
            "sweep settings must be non-empty and strictly monotone: {values:?}"
        )));
    }
    Ok(())
}

fn sweep(global: &Global, args: &SweepArgs) -> anyhow::Result<()> {
    let cfg = fusion_config(global)?;
    let threads = global.threads.get();
    let (result, out) = match &args.kind {
        SweepKindArgs::Sparsity {
            scene,
            beams,
            fractions,
            out,
        } => {
            let controls: Vec<SparsityControl> = if beams.is_empty() {
                fractions
                    .iter()
                    .map(|&f| SparsityControl::KeepFraction(f))
                    .collect()
            } else {
                beams.iter().map(|&b| SparsityControl::Beams(b)).collect()
            };
            let values: Vec<f64> = if beams.is_empty() {
                fractions.clone()
            } else {
                beams.iter().map(|&b| b as f64).collect()
            };
            check_strictly_monotone(&values)?;
            let scene = load_scene(scene)?;
            let result = run_settings(&controls, threads, |c| {
                sparsity_sweep(&scene, &cfg, &[*c], global.seed)
            })?;
            (result, out)
        }
        SweepKindArgs::Noise {
            scene,
            sigmas,
            fraction,
            out,
        } => {
            check_strictly_monotone(sigmas)?;
            let scene: SceneBundle = load_scene(scene)?;
            let result = run_settings(sigmas, threads, |s| {
                noise_sweep(&scene, &cfg, &[*s], *fraction, global.seed)
            })?;
            (result, out)
        }
    };
    let csv = result.to_csv();
    match out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(args) => synth(&cli.global, args),
        Command::Fuse(args) => fuse(&cli.global, args, false),
        Command::CleanLidar(args) => fuse(&cli.global, args, true),
        Command::Evaluate(args) => evaluate(args),
        Command::Sweep(args) => sweep(&cli.global, args),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<lsfuse::Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(lsfuse::Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            for cause in e.chain().skip(1) {
                let _ = write!(msg, ": {cause}");
            }
            eprintln!("{msg}");
            if exit_code(&e) == 1 {
                eprintln!(
                    "{}",
                    <Cli as clap::CommandFactory>::command().render_usage()
                );
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
