use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vcage_cli::stages::{Stage, StageInputs};
use vcage_cli::{execute, parse_stage, Invocation};

/// Tabletop manipulation data synthesis pipeline.
///
/// Exit codes: 0 ok, 1 internal error, 2 invalid input, 3 placement failed,
/// 4 layout infeasible, 5 episode budget exhausted, 6 codec or metric failure.
#[derive(Parser)]
#[command(name = "vcage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for intra-stage parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Select assets, place them and render the source top view.
    Scene {
        #[command(flatten)]
        common: Common,
    },
    /// Plan, inpaint, match and optimize the layout.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Initial scene; defaults to the one in the output directory.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Enumerate sub-tasks and run the verification campaign.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Refined scene; defaults to the one in the output directory.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Plan compression for every accepted episode.
    Compress {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest; defaults to the one in the output directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// All stages in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Last stage to run.
        #[arg(long, value_parser = parse_stage)]
        stop_after: Option<Stage>,
    },
}

fn invocation(c: Common, stop_after: Option<Stage>, inputs: StageInputs) -> (Invocation, Option<usize>) {
    let inv = Invocation { config: c.config, seed: c.seed, out: c.out, stop_after, inputs };
    (inv, c.jobs)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, first, last, (inv, jobs)) = match cli.command {
        Command::Scene { common } => ("scene", Stage::Scene, Stage::Scene, invocation(common, None, StageInputs::default())),
        Command::Refine { common, scene } => (
            "refine",
            Stage::Refine,
            Stage::Refine,
            invocation(common, None, StageInputs { scene, ..Default::default() }),
        ),
        Command::Generate { common, scene } => (
            "generate",
            Stage::Generate,
            Stage::Generate,
            invocation(common, None, StageInputs { refined: scene, ..Default::default() }),
        ),
        Command::Compress { common, manifest } => (
            "compress",
            Stage::Compress,
            Stage::Compress,
            invocation(common, None, StageInputs { manifest, ..Default::default() }),
        ),
        Command::Pipeline { common, stop_after } => {
            ("pipeline", Stage::Scene, Stage::Compress, invocation(common, stop_after, StageInputs::default()))
        }
    };
    if let Some(n) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("vcage: cannot size worker pool: {e}");
        }
    }
    let outcome = execute(name, first, last, &inv);
    if let Some(e) = &outcome.error {
        eprintln!("vcage {name}: {e}");
    }
    if let Some(p) = &outcome.report {
        println!("{}", p.display());
    }
    ExitCode::from(outcome.code as u8)
}
