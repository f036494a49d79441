use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qfl_cli::{cmd_condense, cmd_gen_genomic, cmd_run, load_condense_config, load_run_config, CliError};

#[derive(Parser)]
#[command(name = "qfl", version, about = "Privacy-preserving quantum federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Condense a dataset to a few synthetic samples per class.
    Condense {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic two-class genomic corpus.
    GenGenomic {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sequence length.
        #[arg(long)]
        length: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let cfg = load_run_config(&config, out, seed)?;
            let outcome = cmd_run(&cfg)?;
            let s = &outcome.summary;
            let show = |name: &str| s.metric(name).map_or(f64::NAN, |m| m.final_value);
            println!(
                "{}: {} rounds, final device train acc {:.3}, G+ test acc {:.3}, top {} -> {}",
                cfg.name,
                s.rounds,
                show("device_train_accuracy"),
                show("gplus_test_accuracy"),
                s.top_device,
                cfg.output_dir.display()
            );
        }
        Command::Condense { config, out, seed } => {
            let cfg = load_condense_config(&config, out, seed)?;
            let result = cmd_condense(&cfg)?;
            println!(
                "{}: {} condensed rows (ratio {:.6}) -> {}",
                cfg.name,
                result.synthetic.len(),
                result.size_ratio,
                cfg.output_dir.display()
            );
        }
        Command::GenGenomic { count, out, seed, length } => {
            cmd_gen_genomic(count, seed, length, &out)?;
            println!("wrote {count} sequences to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
