use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

use commands::{Artifact, Failure};

#[derive(Debug, Parser)]
#[command(name = "lpsim", version, about = "Latent parallelism simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `denoiser.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run latent-parallel denoising and meter its traffic.
    Simulate(Common),
    /// Compare against the single-device reference and the layer-split baselines.
    Compare(Common),
    /// Closed-form communication costs.
    Cost(Common),
    /// Check whether the partition schedule reaches every position.
    Completeness(Common),
    /// Dump the partition plan and blend weights of one step.
    PartitionPlan {
        #[command(flatten)]
        common: Common,
        /// 1-based denoising step.
        #[arg(long, default_value_t = 1)]
        step: usize,
    },
}

type Runner = dyn Fn(&commands::Loaded) -> Result<Vec<Artifact>, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Box<Runner>) = match &cli.command {
        Command::Simulate(c) => (c, Box::new(commands::simulate)),
        Command::Compare(c) => (c, Box::new(commands::compare)),
        Command::Cost(c) => (c, Box::new(commands::cost)),
        Command::Completeness(c) => (c, Box::new(commands::completeness)),
        Command::PartitionPlan { common, step } => {
            let step = *step;
            (common, Box::new(move |l| commands::partition_plan(l, step)))
        }
    };

    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(if common.quiet { "error" } else { "warn" }),
    )
    .init();

    match execute(common, &*run) {
        Ok(written) => {
            if !common.quiet {
                for p in written {
                    println!("wrote {}", p.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("lpsim: configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("lpsim: {msg}");
            ExitCode::from(3)
        }
    }
}

fn execute(common: &Common, run: &Runner) -> Result<Vec<PathBuf>, Failure> {
    let loaded = commands::load(&common.config, common.seed)?;
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| loaded.config.output.dir.clone());
    let artifacts = run(&loaded)?;
    write_all(&dir, &artifacts, &loaded)
}

fn write_all(
    dir: &Path,
    artifacts: &[Artifact],
    loaded: &commands::Loaded,
) -> Result<Vec<PathBuf>, Failure> {
    let wanted: Vec<&Artifact> = artifacts
        .iter()
        .filter(|a| loaded.config.output.wants(a.format))
        .collect();
    if wanted.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::with_capacity(wanted.len());
    for a in wanted {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes)
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
