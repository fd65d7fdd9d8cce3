use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eqc::symmetrizer::StateCombineMode;
use eqc::{EqcError, Exec};

mod commands;
mod manifest;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Validation(String),
    /// A checked property failed: exit code 3.
    Violation(String),
    Runtime(String),
}

impl From<EqcError> for CliError {
    fn from(e: EqcError) -> Self {
        match e {
            EqcError::NonFinite(_) => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "eqc", version, about = "Train, symmetrize and cross-play coordination policies")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Run every loop on the calling thread (bitwise-reproducible).
    #[arg(long, global = true)]
    pub serial: bool,
    /// Worker threads for the parallel path.
    #[arg(long, global = true, env = "EQC_THREADS")]
    pub threads: Option<usize>,
}

impl Global {
    pub fn exec(&self) -> Exec {
        if self.serial {
            Exec::Serial
        } else {
            Exec::Parallel
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Combine {
    Average,
    Identity,
}

impl From<Combine> for StateCombineMode {
    fn from(c: Combine) -> Self {
        match c {
            Combine::Average => StateCombineMode::Average,
            Combine::Identity => StateCombineMode::Identity,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy from a JSON training config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wrap a policy in a group symmetrizer.
    Symmetrize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Group name (`C5`, `D10`, `S3`, `trivial`, `declared`) or JSON.
        #[arg(long)]
        group: String,
        #[arg(long, value_enum, default_value = "average")]
        combine: Combine,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check equivariance, fixing and the environment's symmetry.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the policy's own symmetrizer group.
        #[arg(long)]
        group: Option<String>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 8)]
        seq_len: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair every policy with every other one.
    Crossplay {
        #[arg(long = "bundle", num_args = 1.., required = true)]
        bundles: Vec<PathBuf>,
        /// Environment or training config; defaults to the policies' own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Comma-separated groups for a test-time symmetrizer comparison.
        #[arg(long, value_delimiter = ',')]
        groups: Vec<String>,
        #[arg(long, value_enum, default_value = "average")]
        combine: Combine,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise run directories into tables and action matrices.
    Report {
        #[arg(long = "run", num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Self-play episodes per conditional action matrix.
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        eqc::exec::init_thread_pool(t);
    }
    let g = &cli.global;
    match cli.command {
        Command::Train { config, seed, out } => commands::train(g, &config, seed, &out),
        Command::Symmetrize {
            checkpoint,
            group,
            combine,
            out,
        } => commands::symmetrize(g, &checkpoint, &group, combine.into(), &out),
        Command::Verify {
            checkpoint,
            group,
            samples,
            seq_len,
            tol,
            rollouts,
            seed,
            out,
        } => commands::verify(
            g,
            &checkpoint,
            group.as_deref(),
            commands::VerifyParams {
                samples,
                seq_len,
                tol,
                rollouts,
                seed,
            },
            &out,
        ),
        Command::Crossplay {
            bundles,
            config,
            episodes,
            groups,
            combine,
            seed,
            out,
        } => commands::crossplay(g, &bundles, config.as_deref(), episodes, &groups, combine.into(), seed, &out),
        Command::Report {
            runs,
            episodes,
            seed,
            out,
        } => commands::report(g, &runs, episodes, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Violation(m)) => {
            eprintln!("violation: {m}");
            ExitCode::from(3)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
