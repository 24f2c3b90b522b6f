//! Command-line front end: maps subcommands onto the library's pipeline
//! operations and library errors onto exit codes (0 success, 2 config error,
//! 3 data error, 4 numeric failure).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use polarkit::config::PipelineConfig;
use polarkit::degrade::{degrade, derive_seed};
use polarkit::error::{Error, Result};
use polarkit::io::{read_pquad, write_pquad};
use polarkit::metrics::MetricReport;
use polarkit::pipeline;
use polarkit::polar::PolarQuad;

#[derive(Parser)]
#[command(
    name = "polarkit",
    version,
    about = "Polarimetric image restoration: synthesize, degrade, train, evaluate, restore"
)]
struct Cli {
    /// Pipeline configuration (JSON). Required by every subcommand except gradcheck.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the configuration's master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Override the primary output path (synth: dataset dir, train: checkpoint
    /// dir, eval: report file, degrade/infer: output image).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config.
    Synth,
    /// Degrade one PQUAD file exactly as the dataset's first image would be.
    Degrade {
        /// Clean input image (PQUAD).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Train on the synthesized dataset; writes final/best checkpoints and a log.
    Train,
    /// Score a checkpoint on the validation split against the no-network baseline.
    Eval {
        /// Checkpoint to score (PCKPT1).
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Restore one PQUAD file with a checkpoint; also writes TI/DoP/AoP previews.
    Infer {
        /// Checkpoint to restore with (PCKPT1).
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Degraded input image (PQUAD).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Run the finite-difference gradient suite; nonzero exit on any failure.
    Gradcheck,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <PATH> is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn require_out(cli: &Cli, what: &str) -> Result<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| Error::Config(format!("--out <PATH> is required for {what}")))
}

fn headline(r: &MetricReport) -> String {
    let db = |v: Option<f64>| v.map_or_else(|| "inf".to_string(), |v| format!("{v:.2}"));
    format!(
        "PSNR ti {} / dop {} / aop {}",
        db(r.mean.psnr_ti),
        db(r.mean.psnr_dop),
        db(r.mean.psnr_aop)
    )
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth => {
            let mut cfg = load_config(cli)?;
            if let Some(out) = &cli.out {
                cfg.paths.dataset_dir = out.clone();
            }
            let index = pipeline::synth_command(&cfg)?;
            println!(
                "synth: {} pairs ({} train, {} val) in {}",
                index.entries.len(),
                index.train.len(),
                index.val.len(),
                cfg.paths.dataset_dir.display()
            );
        }
        Command::Degrade { input } => {
            let cfg = load_config(cli)?;
            let out = require_out(cli, "the degraded copy")?;
            let quad: PolarQuad<f32> = read_pquad(input)?;
            let spec = cfg.degradation_template().with_seed(derive_seed(cfg.data.seed, 0, 1));
            let (degraded, _meta) = degrade(&quad, &spec)?;
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            write_pquad(&out, &degraded)?;
            println!("degrade ({}): {} -> {}", spec.kind(), input.display(), out.display());
        }
        Command::Train => {
            let mut cfg = load_config(cli)?;
            if let Some(out) = &cli.out {
                cfg.paths.checkpoint_dir = out.clone();
            }
            let summary = pipeline::train_command(&cfg)?;
            match (summary.steps.first(), summary.steps.last(), summary.best_step, summary.best_loss) {
                (Some(first), Some(last), Some(bs), Some(bl)) => println!(
                    "train: {} steps, loss {:.6} -> {:.6} (best {:.6} after step {})",
                    summary.steps.len(),
                    first.total_loss,
                    last.total_loss,
                    bl,
                    bs
                ),
                _ => println!("train: 0 steps, checkpoints hold the initialization"),
            }
            println!(
                "train: wrote {} / {} / {}",
                summary.final_checkpoint.display(),
                summary.best_checkpoint.display(),
                summary.log_path.display()
            );
        }
        Command::Eval { checkpoint } => {
            let mut cfg = load_config(cli)?;
            if let Some(out) = &cli.out {
                cfg.paths.report_path = out.clone();
            }
            let report = pipeline::eval_command(&cfg, checkpoint)?;
            println!("eval model:    {}", headline(&report.model));
            println!("eval baseline: {}", headline(&report.baseline));
            println!("eval: wrote {}", cfg.paths.report_path.display());
        }
        Command::Infer { checkpoint, input } => {
            let cfg = load_config(cli)?;
            let out = require_out(cli, "the restored image")?;
            let summary = pipeline::infer_command(&cfg, checkpoint, input, &out)?;
            println!(
                "infer: wrote {} (consistency {:.3e} -> {:.3e})",
                summary.output.display(),
                summary.consistency_in,
                summary.consistency_out
            );
            for aux in &summary.auxiliaries {
                println!("infer: preview {}", aux.display());
            }
        }
        Command::Gradcheck => {
            let summary = pipeline::gradcheck_command();
            print!("{}", summary.render());
            if !summary.passed() {
                return Err(Error::Numeric("gradient check failed".into()));
            }
            println!("all gradient checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
