use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use controlgan::cli::{self, CliError, Overrides, TrainOptions};
use controlgan::gradcheck::DEFAULT_TRIALS;
use controlgan::trainer::Mode;

#[derive(Parser)]
#[command(
    name = "controlgan",
    version,
    about = "Train and evaluate label-controlled GANs"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the classifier and write its checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the generator and discriminator (or the cGAN baseline).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Classifier checkpoint; required for mode controlgan.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Continue from `latest.ckpt` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Generate samples for one label vector.
    Generate {
        /// Training checkpoint.
        ckpt: PathBuf,
        /// Comma-separated label values, one per label.
        #[arg(long, allow_hyphen_values = true)]
        labels: String,
        #[arg(short, long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image extension for a grid, anything else for CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one label over a range of values with shared noise.
    Sweep {
        ckpt: PathBuf,
        #[arg(long)]
        label_index: usize,
        /// Increasing comma-separated values [default: -1,-0.5,0,0.5,1,2,3].
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
        /// Values of the other labels [default: all zero].
        #[arg(long, allow_hyphen_values = true)]
        labels: Option<String>,
        #[arg(short, long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every primitive and both losses.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Pretrain { config, out, seed } => {
            let o = cli::cmd_pretrain(
                &config,
                &out,
                &Overrides {
                    seed,
                    ..Overrides::default()
                },
            )?;
            println!(
                "pretrained classifier: {} iterations, final loss_c {}",
                o.iterations, o.final_loss
            );
            println!("wrote {}", out.display());
        }
        Command::Train {
            config,
            classifier,
            out,
            seed,
            iterations,
            mode,
            resume,
        } => {
            let opts = TrainOptions {
                overrides: Overrides {
                    seed,
                    iterations,
                    mode,
                },
                resume,
            };
            let o = cli::cmd_train(&config, classifier.as_deref(), &out, &opts)?;
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            println!("trained to iteration {}", o.iteration);
            println!("wrote {}", o.final_checkpoint.display());
            if let Some(m) = o.metrics {
                println!("wrote {}", m.display());
            }
        }
        Command::Generate {
            ckpt,
            labels,
            n,
            seed,
            out,
        } => {
            cli::cmd_generate(&ckpt, &labels, n, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            ckpt,
            label_index,
            values,
            labels,
            n,
            seed,
            out,
        } => {
            let o = cli::cmd_sweep(
                &ckpt,
                label_index,
                values.as_deref(),
                labels.as_deref(),
                n,
                seed,
                &out,
            )?;
            for f in &o.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Gradcheck { seed, trials } => {
            let report = cli::cmd_gradcheck(seed, trials);
            print!("{}", report.to_text());
            if !report.all_passed() {
                return Err(CliError::Numeric("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
