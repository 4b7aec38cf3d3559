use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use sage_lod::lod::SelectionMode;
use sage_lod::pipeline::{self, Overrides, PipelineConfig, CONFIG_FILE};
use sage_lod::splat_io::format_bytes;
use sage_lod::{Error, Result};

/// Per-label level-of-detail selection for semantic splatting scenes.
#[derive(Parser, Debug)]
#[command(name = "sage-lod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Target SSIM; repeat for several. Overrides the config.
    #[arg(long, global = true)]
    target: Vec<f64>,
    /// View (image name) for selection and rendering.
    #[arg(long, global = true)]
    view: Option<String>,
    /// empirical or model.
    #[arg(long, global = true)]
    mode: Option<SelectionMode>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Vote mask labels onto the SfM points.
    Label,
    /// Masked SSIM/PSNR of every checkpoint per label and view.
    Profile,
    /// Fit distance-quality curves.
    Fit,
    /// Choose an iteration per label for each target.
    Select,
    /// Merge the selected checkpoints.
    Compose,
    /// Render and score the composed scenes.
    Render,
    /// Write the JSON and text report.
    Report,
    /// Generate a synthetic scene (writes a config when none exists).
    Synth,
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, PathBuf)> {
    let mut cfg;
    let path;
    match (&cli.config, cli.command) {
        (Some(p), Command::Synth) if !p.exists() => {
            path = p.clone();
            cfg = PipelineConfig::for_scene("scene");
            cfg.base_dir = p.parent().map(PathBuf::from).unwrap_or_default();
        }
        (Some(p), _) => {
            path = p.clone();
            cfg = PipelineConfig::load(p)?;
        }
        (None, Command::Synth) => {
            let dir = cli.out.clone().ok_or_else(|| {
                Error::Argument("synth needs --config or --out".into())
            })?;
            path = dir.join(CONFIG_FILE);
            if path.exists() {
                cfg = PipelineConfig::load(&path)?;
            } else {
                cfg = PipelineConfig::for_scene("scene");
                cfg.base_dir = dir;
            }
            return Ok((cfg, path));
        }
        (None, _) => return Err(Error::Argument("--config is required".into())),
    }
    if let Some(out) = &cli.out {
        cfg.out = std::path::absolute(out).map_err(|e| Error::io(out, e))?;
    }
    Ok((cfg, path))
}

fn run(cli: &Cli) -> Result<()> {
    let (mut cfg, path) = load_config(cli)?;
    Overrides {
        targets: (!cli.target.is_empty()).then(|| cli.target.clone()),
        view: cli.view.clone(),
        mode: cli.mode,
        seed: cli.seed,
    }
    .apply(&mut cfg)?;

    match cli.command {
        Command::Label => {
            let out = pipeline::cmd_label(&cfg)?;
            println!("{}", out.display());
        }
        Command::Profile => {
            let profile = pipeline::cmd_profile(&cfg)?;
            println!(
                "{} samples over {} labels, {} iterations, {} views",
                profile.samples.len(),
                profile.labels().len(),
                profile.iterations().len(),
                profile.views().len()
            );
        }
        Command::Fit => {
            let (curves, failures) = pipeline::cmd_fit(&cfg)?;
            println!("{} curves, {} unfitted", curves.curves.len(), failures.len());
        }
        Command::Select => {
            for plan in pipeline::cmd_select(&cfg)? {
                let fallbacks = plan.choices.values().filter(|c| c.fallback).count();
                println!(
                    "t={:.2} view {}: {} gaussians ({}), {} fallback",
                    plan.target_ssim,
                    plan.view,
                    plan.total_gaussians,
                    format_bytes(plan.total_bytes),
                    fallbacks
                );
            }
        }
        Command::Compose => {
            for p in pipeline::cmd_compose(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Render => {
            for m in pipeline::cmd_render(&cfg)? {
                println!("t={:.2} {}: SSIM {:.4}", m.target_ssim, m.view, m.ssim);
            }
        }
        Command::Report => {
            print!("{}", pipeline::cmd_report(&cfg)?.to_table());
        }
        Command::Synth => {
            let set = pipeline::cmd_synth(&cfg, &path)?;
            println!("{} checkpoints under {}", set.len(), cfg.root().display());
            println!("config: {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = std::env::var("SAGE_LOD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
