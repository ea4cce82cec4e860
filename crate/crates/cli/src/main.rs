//! Operator entry point: train, evaluate, run the robustness suite, check
//! gradients, dump SRM residual maps, or write a starter config.
//!
//! Exit codes: 0 success, 1 usage or bad configuration, 2 data errors
//! (missing files, malformed manifests/images/checkpoints), 3 numeric
//! failures (non-finite loss, gradient check above tolerance).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualstream::data::transforms::TransformSpec;
use dualstream::data::{load_manifest, ppm, transforms, DatasetManifest, Split};
use dualstream::metrics::{evaluate, robustness_eval};
use dualstream::net::Model;
use dualstream::srm::{build_filter_bank, extract_residuals};
use dualstream::train::{Checkpoint, Trainer};
use dualstream::verify::{full_model_gradcheck, run_gradcheck_suite, GRADCHECK_TOLERANCE};
use dualstream::{Error, Scalar};

use config::{Mode, RunConfig};

#[derive(Parser)]
#[command(name = "dualstream", version, about = "Dual-stream detector for AI-generated images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file (TOML); flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Numeric mode: f32 or f64.
    #[arg(long)]
    mode: Option<String>,
    /// Dataset manifest CSV.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for logs, reports, and checkpoints.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Checkpoint file (for eval/robustness, or to resume training).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override both the model and shuffle seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the input side length.
    #[arg(long)]
    side: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(mode) = &self.mode {
            cfg.mode = Mode::parse(mode)?;
        }
        if let Some(m) = &self.manifest {
            cfg.paths.manifest = Some(m.clone());
        }
        if let Some(o) = &self.out_dir {
            cfg.paths.out_dir = Some(o.clone());
        }
        if let Some(c) = &self.checkpoint {
            cfg.paths.checkpoint = Some(c.clone());
        }
        if let Some(seed) = self.seed {
            cfg.model.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(side) = self.side {
            cfg.model.input_side = side;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a commented default configuration file.
    InitConfig {
        /// Destination path.
        #[arg(long, default_value = "dualstream.toml")]
        out: PathBuf,
    },
    /// Train a model and keep the best-validation checkpoint.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// Which split to score.
        #[arg(long, default_value = "test")]
        split: String,
        /// Decision threshold on the sigmoid probability.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Replay the seven post-processing transforms over a split and score each.
    Robustness {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Master seed for per-record transform parameters.
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
    },
    /// Run the finite-difference gradient suite (f64) and print one line
    /// per layer family.
    Gradcheck {
        #[arg(long, default_value_t = 4242)]
        seed: u64,
    },
    /// Write the 90 SRM residual maps of one image as grayscale PGMs
    /// (min-max normalized, zero-padding ring cropped).
    DumpResiduals {
        /// Input image (binary PPM).
        #[arg(long)]
        image: PathBuf,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
        /// Resize the image to this side length first.
        #[arg(long)]
        side: Option<usize>,
        /// Comma-separated kernel indices (0..29) or names; all by default.
        #[arg(long)]
        kernels: Option<String>,
    },
    /// Print build metadata.
    Version,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Arg(_) => 1,
        Error::Train(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::InitConfig { out } => cmd_init_config(&out),
        Command::Train(args) => cmd_train(&args),
        Command::Eval {
            common,
            split,
            threshold,
        } => cmd_eval(&common, &split, threshold),
        Command::Robustness {
            common,
            split,
            threshold,
            master_seed,
        } => cmd_robustness(&common, &split, threshold, master_seed),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::DumpResiduals {
            image,
            out_dir,
            side,
            kernels,
        } => cmd_dump_residuals(&image, &out_dir, side, kernels.as_deref()),
        Command::Version => {
            println!(
                "dualstream {} (modes: f32, f64; checkpoint format v{})",
                env!("CARGO_PKG_VERSION"),
                dualstream::train::CHECKPOINT_VERSION
            );
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn cmd_init_config(out: &Path) -> Result<(), Error> {
    std::fs::write(out, config::default_config_template())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, Error> {
    Split::parse(s).ok_or_else(|| Error::Arg(format!("unknown split `{s}`")))
}

fn cmd_train(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.resolve()?;
    match cfg.mode {
        Mode::F32 => train_run::<f32>(&cfg),
        Mode::F64 => train_run::<f64>(&cfg),
    }
}

fn train_run<T: Scalar>(cfg: &RunConfig) -> Result<(), Error> {
    let manifest = load_manifest(cfg.manifest_path()?)?;
    let out_dir = cfg.resolved_out_dir()?;
    cfg.write_resolved(&out_dir)?;

    let model = Model::<T>::init(&cfg.model)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    if let Some(ckpt_path) = &cfg.paths.checkpoint {
        let ckpt = Checkpoint::load(ckpt_path)?;
        trainer.resume(&ckpt)?;
        println!("resumed from {} at epoch {}", ckpt_path.display(), trainer.epoch);
    }

    let mut log_lines = String::new();
    let report = trainer.fit(&manifest, cfg.train.epochs, |log| {
        let line = log.to_line();
        println!("{line}");
        log_lines.push_str(&line);
        log_lines.push('\n');
    })?;
    std::fs::write(out_dir.join("train.log"), log_lines)?;

    let last = Checkpoint::capture(&trainer.model, &trainer.opt, &trainer.cfg, trainer.epoch);
    last.save(&out_dir.join("last.ckpt"))?;
    if let Some(best) = trainer.best_checkpoint() {
        best.save(&out_dir.join("best.ckpt"))?;
    }
    if let (Some(epoch), Some(score)) = (report.best_epoch, report.best_score) {
        println!("best epoch {epoch} with accuracy {score:.1}");
    }
    println!("checkpoints written to {}", out_dir.display());
    Ok(())
}

fn load_model_for_eval<T: Scalar>(cfg: &RunConfig) -> Result<(Model<T>, DatasetManifest), Error> {
    let ckpt = Checkpoint::load(cfg.checkpoint_path()?)?;
    let (model, _) = ckpt.restore::<T>()?;
    let manifest = load_manifest(cfg.manifest_path()?)?;
    Ok((model, manifest))
}

fn cmd_eval(args: &ConfigArgs, split: &str, threshold: f64) -> Result<(), Error> {
    let cfg = args.resolve()?;
    let split = parse_split(split)?;
    match cfg.mode {
        Mode::F32 => eval_run::<f32>(&cfg, split, threshold),
        Mode::F64 => eval_run::<f64>(&cfg, split, threshold),
    }
}

fn eval_run<T: Scalar>(cfg: &RunConfig, split: Split, threshold: f64) -> Result<(), Error> {
    let (model, manifest) = load_model_for_eval::<T>(cfg)?;
    let records = manifest.split(split);
    let report = evaluate(&model, &records, threshold)?;
    println!("{report}");
    if let Ok(out_dir) = cfg.resolved_out_dir() {
        cfg.write_resolved(&out_dir)?;
        std::fs::write(out_dir.join("eval-report.txt"), format!("{report}\n"))?;
        std::fs::write(out_dir.join("eval-report.kv"), report.to_kv())?;
        println!("report written to {}", out_dir.display());
    }
    Ok(())
}

fn cmd_robustness(
    args: &ConfigArgs,
    split: &str,
    threshold: f64,
    master_seed: u64,
) -> Result<(), Error> {
    let cfg = args.resolve()?;
    let split = parse_split(split)?;
    match cfg.mode {
        Mode::F32 => robustness_run::<f32>(&cfg, split, threshold, master_seed),
        Mode::F64 => robustness_run::<f64>(&cfg, split, threshold, master_seed),
    }
}

fn robustness_run<T: Scalar>(
    cfg: &RunConfig,
    split: Split,
    threshold: f64,
    master_seed: u64,
) -> Result<(), Error> {
    let (model, manifest) = load_model_for_eval::<T>(cfg)?;
    let records = manifest.split(split);
    let suite = TransformSpec::default_suite();
    let report = robustness_eval(&model, &records, &suite, master_seed, threshold)?;
    println!("{report}");
    if let Ok(out_dir) = cfg.resolved_out_dir() {
        cfg.write_resolved(&out_dir)?;
        std::fs::write(out_dir.join("robustness-report.txt"), format!("{report}\n"))?;
        std::fs::write(out_dir.join("robustness-report.kv"), report.to_kv())?;
        println!("report written to {}", out_dir.display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<(), Error> {
    println!("{:<18} {:>12}", "family", "max rel err");
    let mut failed = false;
    for r in run_gradcheck_suite(seed)? {
        println!("{:<18} {:>12.3e}", r.family, r.max_rel_err);
        failed |= !r.passed();
    }
    let full = full_model_gradcheck(seed, 7, 3)?;
    println!("{:<18} {:>12.3e}", full.family, full.max_rel_err);
    failed |= full.max_rel_err >= GRADCHECK_TOLERANCE;
    if failed {
        return Err(Error::Train(format!(
            "gradient check exceeded tolerance {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    println!("all families within {GRADCHECK_TOLERANCE:.0e}");
    Ok(())
}

fn cmd_dump_residuals(
    image: &Path,
    out_dir: &Path,
    side: Option<usize>,
    kernels: Option<&str>,
) -> Result<(), Error> {
    let mut img = ppm::decode_p6::<f64>(image)?;
    if let Some(side) = side {
        img = transforms::resize_bilinear(&img, side)?;
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let bank = build_filter_bank::<f64>();
    let selected: Vec<usize> = match kernels {
        None => (0..bank.len()).collect(),
        Some(list) => {
            let names = bank.names();
            let mut picks = Vec::new();
            for item in list.split(',') {
                let item = item.trim();
                if let Ok(idx) = item.parse::<usize>() {
                    if idx >= bank.len() {
                        return Err(Error::Arg(format!("kernel index {idx} out of range")));
                    }
                    picks.push(idx);
                } else if let Some(idx) = names.iter().position(|n| *n == item) {
                    picks.push(idx);
                } else {
                    return Err(Error::Arg(format!("unknown kernel `{item}`")));
                }
            }
            picks
        }
    };

    let batched = img.reshape(&[1, 3, h, w])?;
    let residuals = extract_residuals(&batched, &bank)?;
    let data = residuals.to_vec();
    std::fs::create_dir_all(out_dir)?;
    // drop the zero-padding ring: only the fully covered interior is signal
    let margin = dualstream::srm::KERNEL_SIDE / 2;
    if h <= 2 * margin || w <= 2 * margin {
        return Err(Error::dim(format!(
            "image {h}x{w} too small to leave an interior after cropping"
        )));
    }
    let (ih, iw) = (h - 2 * margin, w - 2 * margin);
    let plane = h * w;
    let names = bank.names();
    let mut written = 0usize;
    for (ci, color) in ["r", "g", "b"].iter().enumerate() {
        for &ki in &selected {
            let oc = ci * bank.len() + ki;
            let full = &data[oc * plane..(oc + 1) * plane];
            let mut interior = Vec::with_capacity(ih * iw);
            for y in margin..h - margin {
                interior.extend_from_slice(&full[y * w + margin..y * w + w - margin]);
            }
            let bytes = ppm::encode_p5_normalized(&interior, ih, iw)?;
            let file = out_dir.join(format!("residual_{oc:02}_{color}_{}.pgm", names[ki]));
            std::fs::write(file, bytes)?;
            written += 1;
        }
    }
    println!("wrote {written} residual maps to {}", out_dir.display());
    Ok(())
}
