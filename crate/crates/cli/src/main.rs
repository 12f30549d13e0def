//! `aifpipe`: all-in-focus synthesis, ground-truth synthesis and evaluation.
//!
//! Exit status is 0 on success, 2 when an estimation step fails (too few
//! features, degenerate homography) and 1 for every other error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aifpipe_core::config::PipelineConfig;
use aifpipe_core::dataset::{evaluate_dataset, validate_dataset, SceneRecord, GT, M_FUSE};
use aifpipe_core::imaging::io::{load_png, save_png, BitDepth};
use aifpipe_core::pipeline::{format_timings, run, save_outputs, synth_ground_truth};
use aifpipe_core::{Error, Image};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser, Debug)]
#[command(name = "aifpipe", version, about = "All-in-focus synthesis from a main / ultra-wide camera pair")]
struct Cli {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `reg.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse a main image and an ultra-wide image into `<out>/aif.png`.
    Fuse {
        main: PathBuf,
        wide: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the warped, color-aligned, refined and mask images.
        #[arg(long)]
        save_intermediates: bool,
    },
    /// Write gt.png and m_fuse.png for one or more scene directories.
    SynthGt {
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        /// Output directory; defaults to each scene directory. With several
        /// scenes, each gets its own subdirectory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions `<pred>/<id>_{fg,bg}.png` against scene ground truths.
    Eval {
        root: PathBuf,
        pred: PathBuf,
        /// CSV report path; defaults to `<pred>/metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the dataset layout and split files.
    ValidateDataset {
        root: PathBuf,
        /// Require the capture resolutions of the reference dataset.
        #[arg(long)]
        check_resolution: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::EstimationFailed(_) => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reg_seed = seed;
    }
    Ok(cfg)
}

fn cmd_fuse(cfg: &PipelineConfig, main: &Path, wide: &Path, out: &Path, intermediates: bool) -> Result<(), Error> {
    let (main_img, depth) = load_png(main)?;
    let (wide_img, _) = load_png(wide)?;
    log::info!("fusing {} with {}", main.display(), wide.display());
    let result = run(&main_img, &wide_img, cfg)?;
    log::info!(
        "registration inliers={} alignment scale={}",
        result.intermediates.inliers,
        result.intermediates.align_scale
    );
    save_outputs(&result, out, depth, intermediates)?;
    print!("{}", format_timings(&result.timings));
    println!("wrote {}", out.join("aif.png").display());
    Ok(())
}

fn synth_scene(cfg: &PipelineConfig, scene: &SceneRecord, out: &Path) -> Result<(), Error> {
    let (fg, depth) = load_png(&scene.main_fg)?;
    let (bg, _) = load_png(&scene.main_bg)?;
    let (gt, m): (Image, Image) = synth_ground_truth(&fg, &bg, cfg)?;
    save_png(&gt, out.join(GT), depth)?;
    save_png(&m, out.join(M_FUSE), BitDepth::Eight)?;
    Ok(())
}

fn cmd_synth_gt(cfg: &PipelineConfig, scenes: &[PathBuf], out: Option<&Path>) -> u8 {
    let codes: Vec<u8> = scenes
        .par_iter()
        .map(|dir| {
            let outcome = SceneRecord::from_dir(dir).and_then(|scene| {
                let target = match out {
                    Some(o) if scenes.len() > 1 => o.join(&scene.id),
                    Some(o) => o.to_path_buf(),
                    None => scene.dir.clone(),
                };
                synth_scene(cfg, &scene, &target)
            });
            match outcome {
                Ok(()) => {
                    log::info!("{}: ground truth written", dir.display());
                    0
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", dir.display());
                    exit_code(&e)
                }
            }
        })
        .collect();
    codes.into_iter().max().unwrap_or(0)
}

fn cmd_eval(root: &Path, pred: &Path, out: Option<&Path>) -> Result<(), Error> {
    let csv = out.map(Path::to_path_buf).unwrap_or_else(|| pred.join("metrics.csv"));
    let report = evaluate_dataset(root, pred, Some(&csv))?;
    println!("{}", report.summary());
    println!("wrote {}", csv.display());
    Ok(())
}

fn cmd_validate(root: &Path, check_resolution: bool) -> Result<u8, Error> {
    let report = validate_dataset(root, check_resolution)?;
    let split = |n: Option<usize>| n.map_or("absent".to_string(), |v| v.to_string());
    println!("scenes={} train={} eval={}", report.scenes, split(report.train), split(report.eval));
    for issue in &report.issues {
        println!("issue: {issue}");
    }
    println!("{}", if report.is_ok() { "dataset ok" } else { "dataset has issues" });
    Ok(if report.is_ok() { 0 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AIFPIPE_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Fuse { main, wide, out, save_intermediates } => {
            cmd_fuse(&cfg, main, wide, out, *save_intermediates).map(|_| 0)
        }
        Command::SynthGt { scenes, out } => Ok(cmd_synth_gt(&cfg, scenes, out.as_deref())),
        Command::Eval { root, pred, out } => cmd_eval(root, pred, out.as_deref()).map(|_| 0),
        Command::ValidateDataset { root, check_resolution } => cmd_validate(root, *check_resolution),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
