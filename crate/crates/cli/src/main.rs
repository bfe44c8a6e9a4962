use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use oja_hierarchy::harness::{self, Mode, RunConfig};
use oja_hierarchy::training::{Presentation, SchedulePolicy};

#[derive(Parser)]
#[command(name = "ojah", version, about = "Learn and recognize concept hierarchies in layered Oja networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a bottom-up schedule, then run the recognition suite.
    Learn {
        /// Use noisy showings (requires --p and --eta).
        #[arg(long)]
        noisy: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Build the static recognizer and run the recognition suite on it.
    Recognize {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Iterate the single-neuron dynamics and check its bounds.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Search random single-layer networks for recognition counterexamples.
    Lowerbound {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-run a recorded manifest and compare every artifact byte for byte.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Sequential,
    Interleaved,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresentationArg {
    Pipelined,
    Spaced,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r2: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<u64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    presentation: Option<PresentationArg>,
    /// Give level-0 concepts their own sigma showings (default true).
    #[arg(long)]
    level0_quota: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
}

impl RunArgs {
    fn config(&self, mode: Mode) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::new(mode, 4, 2, 64, 0.51, 0.8, 0),
        };
        c.mode = mode;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $(if self.$f.is_some() { c.$f = self.$f; })* };
        }
        set!(k, lmax, n, r1, r2, seed, trials, budget, level0_quota);
        set_opt!(eta, p, delta, sigma, snapshot_every, steps);
        if let Some(p) = self.policy {
            c.policy = match p {
                PolicyArg::Sequential => SchedulePolicy::Sequential,
                PolicyArg::Interleaved => SchedulePolicy::Interleaved,
            };
        }
        if let Some(p) = self.presentation {
            c.presentation = match p {
                PresentationArg::Pipelined => Presentation::Pipelined,
                PresentationArg::Spaced => Presentation::Spaced,
            };
        }
        Ok(c)
    }
}

fn execute(mode: Mode, args: &RunArgs) -> Result<bool> {
    let config = args.config(mode)?;
    let summary = harness::run(&config, &args.out).with_context(|| format!("{mode:?} run failed"))?;
    let mut out = io::stdout().lock();
    // a closed stdout (e.g. piped into `head`) must not turn a pass into a panic
    let _ = writeln!(
        out,
        "{} {}/{} trials passed; artifacts in {}",
        if summary.passed { "PASS" } else { "FAIL" },
        summary.trials_passed,
        summary.trials,
        args.out.display()
    );
    for f in &summary.files {
        let _ = writeln!(out, "  {f}");
    }
    Ok(summary.passed)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let ok = match &cli.command {
        Command::Learn { noisy, run } => execute(if *noisy { Mode::LearnNoisy } else { Mode::LearnClean }, run)?,
        Command::Recognize { run } => execute(Mode::Recognize, run)?,
        Command::Oracle { run } => execute(Mode::Oracle, run)?,
        Command::Lowerbound { run } => execute(Mode::Lowerbound, run)?,
        Command::Replay { manifest } => {
            if !manifest.exists() {
                bail!("no manifest at {}", manifest.display());
            }
            let report = harness::replay(manifest)?;
            let mut out = io::stdout().lock();
            let _ = match &report.divergence {
                None => writeln!(out, "identical: {} files match", report.files_compared),
                Some(d) => writeln!(
                    out,
                    "diverged in {} at line {} (byte {})\n  recorded: {}\n  replayed: {}",
                    d.file, d.line, d.byte_offset, d.recorded, d.replayed
                ),
            };
            report.identical()
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
