//! Command-line entry point: dataset synthesis, training, evaluation,
//! inference, compression-robustness runs, gradient self-checks, and
//! band-mask export, driven by a TOML config with dotted-key overrides.
//!
//! Exit codes: 0 success, 1 configuration/validation failure, 2 runtime
//! failure (including failed gradient checks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fdin::absr::band_mask_to_gray;
use fdin::config::RunConfig;
use fdin::data::{load_frames, save_mask_images, synth_generate, Split};
use fdin::error::FdinError;
use fdin::eval::{
    evaluate, evaluate_predictions, infer_masks, robustness, robustness_plot_svg,
    robustness_summary_tsv,
};
use fdin::gradcheck::run_gradcheck;
use fdin::model::FdinModel;
use fdin::train::train;

#[derive(Parser)]
#[command(
    name = "fdin",
    about = "Frequency-domain video inpainting detection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.learning_rate=3e-4
    /// (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Allow clobbering artifacts from a previous training run.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Override both train.seed and synth.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic inpainted dataset with ground-truth masks.
    Synth,
    /// Train a detector on the manifest clips.
    Train,
    /// Evaluate a checkpoint (or an external prediction set) on a manifest.
    Eval,
    /// Predict masks for a frame directory and write them as images.
    Infer,
    /// Evaluate under uncompressed and JPEG-recompressed conditions.
    Robustness,
    /// Finite-difference checks of every learnable module's gradients.
    Gradcheck,
    /// Export the learned band-selection matrix as a grayscale image.
    ExportMask,
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

/// FDIN_WORKERS caps the rayon thread pool.
fn init_workers() {
    if let Ok(v) = std::env::var("FDIN_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn run(cli: &Cli) -> Result<(), FdinError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    match cli.command {
        Command::Synth => cmd_synth(&cfg, cli),
        Command::Train => cmd_train(&cfg, cli),
        Command::Eval => cmd_eval(&cfg, cli),
        Command::Infer => cmd_infer(&cfg, cli),
        Command::Robustness => cmd_robustness(&cfg, cli),
        Command::Gradcheck => cmd_gradcheck(&cfg, cli),
        Command::ExportMask => cmd_export_mask(&cfg, cli),
    }
}

fn require_output(cli: &Cli) -> Result<&Path, FdinError> {
    cli.output
        .as_deref()
        .ok_or_else(|| FdinError::Config("--output DIR is required for this command".into()))
}

fn echo_config(cfg: &RunConfig, out_dir: &Path) -> Result<(), FdinError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| FdinError::io(format!("create {}", out_dir.display()), e))?;
    let path = out_dir.join("effective_config.toml");
    std::fs::write(&path, cfg.to_toml())
        .map_err(|e| FdinError::io(format!("write {}", path.display()), e))
}

fn manifest_path(cfg: &RunConfig) -> Result<&Path, FdinError> {
    cfg.data
        .manifest
        .as_deref()
        .ok_or_else(|| FdinError::Config("data.manifest is required".into()))
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path, FdinError> {
    let path = cfg
        .eval
        .checkpoint
        .as_deref()
        .ok_or_else(|| FdinError::Config("eval.checkpoint is required".into()))?;
    if !path.is_file() {
        return Err(FdinError::Config(format!(
            "eval.checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn cmd_synth(cfg: &RunConfig, cli: &Cli) -> Result<(), FdinError> {
    cfg.synth.validate()?;
    let out = require_output(cli)?;
    echo_config(cfg, out)?;
    let manifest = synth_generate(&cfg.synth, out, Split::Train)?;
    println!(
        "wrote {} clips ({} frames each, {}x{}, {})",
        manifest.len(),
        cfg.synth.t,
        cfg.synth.h,
        cfg.synth.w,
        cfg.synth.method
    );
    println!("manifest: {}", out.join("manifest.tsv").display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, cli: &Cli) -> Result<(), FdinError> {
    cfg.validate()?;
    let out = require_output(cli)?;
    let manifest = fdin::data::DatasetManifest::load(manifest_path(cfg)?)?;
    for artifact in ["checkpoint_last.fdin", "training_log.jsonl"] {
        let path = out.join(artifact);
        if path.exists() && !cli.overwrite {
            return Err(FdinError::Config(format!(
                "{} already exists; pass --overwrite to clobber",
                path.display()
            )));
        }
    }
    echo_config(cfg, out)?;
    let digest = cfg.digest();
    let artifacts = train(&manifest, &cfg.model, &cfg.train, out, &digest)?;
    println!(
        "trained {} steps over {} epochs (final loss {:.6})",
        artifacts.steps,
        cfg.train.epochs,
        artifacts.losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", artifacts.checkpoint.display());
    println!("log: {}", artifacts.log.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, cli: &Cli) -> Result<(), FdinError> {
    cfg.eval.validate()?;
    let out = require_output(cli)?;
    let manifest = fdin::data::DatasetManifest::load(manifest_path(cfg)?)?;
    echo_config(cfg, out)?;
    let digest = cfg.digest();
    let report = match &cfg.eval.predictions_dir {
        Some(dir) => evaluate_predictions(dir, &manifest, cfg.train.seed, &digest)?,
        None => {
            let (mut model, _) = FdinModel::load_checkpoint(checkpoint_path(cfg)?)?;
            evaluate(
                &mut model,
                &manifest,
                cfg.eval.threshold,
                "uncompressed",
                cfg.train.seed,
                &digest,
                None,
            )?
        }
    };
    let path = out.join(format!("metrics_{}.jsonl", report.condition));
    std::fs::write(&path, report.to_jsonl())
        .map_err(|e| FdinError::io(format!("write {}", path.display()), e))?;
    println!(
        "{}: mIoU {:.4}  F1 {:.4}  ({} clips, {} frames)",
        report.condition,
        report.miou,
        report.f1,
        report.per_clip.len(),
        report.frames_total
    );
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_infer(cfg: &RunConfig, cli: &Cli) -> Result<(), FdinError> {
    cfg.eval.validate()?;
    let out = require_output(cli)?;
    let frames_dir = cfg
        .data
        .frames_dir
        .as_deref()
        .ok_or_else(|| FdinError::Config("data.frames_dir is required for infer".into()))?;
    let (mut model, _) = FdinModel::load_checkpoint(checkpoint_path(cfg)?)?;
    echo_config(cfg, out)?;
    let clip = load_frames(frames_dir)?;
    let masks = infer_masks(&mut model, &clip, cfg.eval.threshold)?;
    let mask_dir = out.join("masks");
    save_mask_images(&mask_dir, &masks)?;
    println!(
        "wrote {} mask images to {}",
        masks.len(),
        mask_dir.display()
    );
    Ok(())
}

fn cmd_robustness(cfg: &RunConfig, cli: &Cli) -> Result<(), FdinError> {
    cfg.eval.validate()?;
    let out = require_output(cli)?;
    let manifest = fdin::data::DatasetManifest::load(manifest_path(cfg)?)?;
    let (mut model, _) = FdinModel::load_checkpoint(checkpoint_path(cfg)?)?;
    echo_config(cfg, out)?;
    let digest = cfg.digest();
    let reports = robustness(
        &mut model,
        &manifest,
        &cfg.eval.qf_list,
        cfg.eval.threshold,
        cfg.train.seed,
        &digest,
    )?;
    for report in &reports {
        let path = out.join(format!("metrics_{}.jsonl", report.condition));
        std::fs::write(&path, report.to_jsonl())
            .map_err(|e| FdinError::io(format!("write {}", path.display()), e))?;
        println!(
            "{:<14} mIoU {:.4}  F1 {:.4}",
            report.condition, report.miou, report.f1
        );
    }
    let tsv = out.join("robustness_summary.tsv");
    std::fs::write(&tsv, robustness_summary_tsv(&reports))
        .map_err(|e| FdinError::io(format!("write {}", tsv.display()), e))?;
    let svg = out.join("robustness_plot.svg");
    std::fs::write(&svg, robustness_plot_svg(&reports))
        .map_err(|e| FdinError::io(format!("write {}", svg.display()), e))?;
    println!("summary: {}", tsv.display());
    println!("plot: {}", svg.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, cli: &Cli) -> Result<(), FdinError> {
    let report = run_gradcheck(cfg.train.seed)?;
    print!("{}", report.render());
    if let Some(out) = cli.output.as_deref() {
        std::fs::create_dir_all(out)
            .map_err(|e| FdinError::io(format!("create {}", out.display()), e))?;
        let path = out.join("gradcheck_report.txt");
        std::fs::write(&path, report.render())
            .map_err(|e| FdinError::io(format!("write {}", path.display()), e))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(FdinError::NonFinite(format!(
            "gradient checks failed: {}",
            report.failed_modules().join(", ")
        )))
    }
}

fn cmd_export_mask(cfg: &RunConfig, cli: &Cli) -> Result<(), FdinError> {
    let out = require_output(cli)?;
    let (model, _) = FdinModel::load_checkpoint(checkpoint_path(cfg)?)?;
    let absr = model.absr.as_ref().ok_or_else(|| {
        FdinError::Config("checkpoint was trained without the band-selection layer".into())
    })?;
    std::fs::create_dir_all(out)
        .map_err(|e| FdinError::io(format!("create {}", out.display()), e))?;
    let gray = band_mask_to_gray(&absr.mask.value);
    let (h, w) = gray.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in gray.indexed_iter() {
        img.put_pixel(x as u32, y as u32, image::Luma([v]));
    }
    let path = out.join("band_mask.png");
    img.save(&path).map_err(|e| {
        FdinError::io(
            format!("write {}", path.display()),
            std::io::Error::other(e),
        )
    })?;
    println!("band mask: {}", path.display());
    Ok(())
}
