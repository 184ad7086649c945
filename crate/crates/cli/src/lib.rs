//! Pipeline driver: config loading, stage execution and reports for the `vcage` binary.

pub mod config;
pub mod error;
pub mod report;
pub mod stages;
pub mod trajectory;

use std::path::{Path, PathBuf};

use config::PipelineConfig;
use error::{exit, CliError};
use stages::{run_stages, Run, Stage, StageInputs};

/// Options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub stop_after: Option<Stage>,
    pub inputs: StageInputs,
}

/// Result of a command: the report path (when one could be written) and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub report: Option<PathBuf>,
    pub code: i32,
    pub error: Option<CliError>,
}

pub fn load_config(inv: &Invocation) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(&inv.config)?;
    if let Some(seed) = inv.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &inv.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Run `first..=last` (clipped by `--stop-after`) and write the report.
pub fn execute(command: &str, first: Stage, last: Stage, inv: &Invocation) -> Outcome {
    let cfg = match load_config(inv) {
        Ok(c) => c,
        Err(e) => return Outcome { report: None, code: e.code, error: Some(e) },
    };
    let last = inv.stop_after.map_or(last, |s| s.min(last));
    let mut run = Run::new(&cfg, command);
    let result = run_stages(&mut run, first, last, &inv.inputs);
    let code = result.as_ref().map_or_else(|e| e.code, |_| exit::OK);
    match run.write_report(code) {
        Ok(path) => Outcome { report: Some(path), code, error: result.err() },
        Err(e) => Outcome { report: None, code: if code == exit::OK { e.code } else { code }, error: Some(result.err().unwrap_or(e)) },
    }
}

pub fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::ALL
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| format!("unknown stage `{s}` (expected scene, refine, generate or compress)"))
}

pub fn report_path(out: &Path) -> PathBuf {
    out.join(stages::REPORT)
}
