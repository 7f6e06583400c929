//! `flowseg`: probabilistic segmentation with normalizing-flow posteriors.
//!
//! Subcommands: gen-data, train, eval, sample, ged-curve, prior-variance.
//! Exit codes: 0 success, 1 usage/config error, 2 runtime/data error,
//! 3 numerical divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::GenDataArgs;

#[derive(Parser)]
#[command(name = "flowseg", version, about = "Probabilistic segmentation with flow posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-annotator dataset directory.
    GenData {
        /// Dataset preset: lidc-like (4 annotators, absence ambiguity) or
        /// kvasir-like (1 annotator, more shape variety).
        #[arg(long)]
        preset: String,
        /// Generation seed; fixes the dataset byte-for-byte.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for manifest.json, images.f32, masks.u8.
        #[arg(long)]
        out: PathBuf,
        /// Override the preset's example count.
        #[arg(long)]
        num_examples: Option<usize>,
        /// Override the image side length.
        #[arg(long)]
        side: Option<usize>,
        /// Override the annotator count.
        #[arg(long)]
        annotators: Option<usize>,
        /// Override the boundary jitter std (pixels).
        #[arg(long)]
        boundary_jitter: Option<f64>,
        /// Override the per-annotator absence probability.
        #[arg(long)]
        absence_prob: Option<f64>,
        /// Override the fraction of ambiguous examples.
        #[arg(long)]
        ambiguous_fraction: Option<f64>,
        /// Override the image noise std.
        #[arg(long)]
        noise_level: Option<f64>,
        /// Override the shape variability in [0, 1].
        #[arg(long)]
        shape_variability: Option<f64>,
    },
    /// Train cross-validated models; writes per-fold checkpoints and
    /// history CSVs to the config's out_dir.
    Train {
        /// Path to a `key = value` run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate fold checkpoints on the held-out test split; writes and
    /// prints metrics JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample one example: mean.pgm, std.pgm, and raw sample masks.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Fold checkpoint to sample from.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset example index.
        #[arg(long)]
        index: usize,
        /// Number of prior samples.
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// GED versus sample size on the test split, as CSV `size,mean,std`.
    GedCurve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated sample sizes, each at least 2.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        sizes: Vec<usize>,
        /// Independent evaluations per size.
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean latent prior variance per test example, most ambiguous first,
    /// as CSV `example_index,mu_lv`.
    PriorVariance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> flowseg_core::Result<()> {
    match cli.command {
        Command::GenData {
            preset,
            seed,
            out,
            num_examples,
            side,
            annotators,
            boundary_jitter,
            absence_prob,
            ambiguous_fraction,
            noise_level,
            shape_variability,
        } => commands::gen_data(&GenDataArgs {
            preset,
            seed,
            out,
            num_examples,
            side,
            annotators,
            boundary_jitter,
            absence_prob,
            ambiguous_fraction,
            noise_level,
            shape_variability,
        }),
        Command::Train { config } => commands::cmd_train(&config),
        Command::Eval { config } => commands::cmd_eval(&config),
        Command::Sample {
            config,
            checkpoint,
            index,
            n,
            out,
        } => commands::cmd_sample(&config, &checkpoint, index, n, &out),
        Command::GedCurve {
            config,
            checkpoint,
            sizes,
            repeats,
            out,
        } => commands::cmd_ged_curve(&config, &checkpoint, &sizes, repeats, &out),
        Command::PriorVariance {
            config,
            checkpoint,
            out,
        } => commands::cmd_prior_variance(&config, &checkpoint, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output exits 0; real usage errors exit 1.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code_for(&err) as u8)
        }
    }
}
