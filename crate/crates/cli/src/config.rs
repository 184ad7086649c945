use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vcage_core::compression::{CodecSpec, CompressionConfig, MetricSpec, DEFAULT_DECODE_TEMPLATE};
use vcage_core::correspondence::MatchConfig;
use vcage_core::layout_opt::OptimizerConfig;
use vcage_core::scene::Workspace;

use crate::error::CliError;

pub const CONFIG_SCHEMA: &str = "vcage-config/1";
pub const ENCODER_ENV: &str = "VCAGE_ENCODER";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub instruction: String,
    #[serde(default)]
    pub scene_tag: String,
    pub n_assets: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterConfig {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub selector: String,
    pub planner: String,
    pub inpainter: String,
    pub detector: String,
    pub detector_jitter_px: f64,
    pub features: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            selector: "keyword".into(),
            planner: "template".into(),
            inpainter: "synthetic".into(),
            detector: "ground_truth".into(),
            detector_jitter_px: 1.0,
            features: "histogram".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticConfig {
    Oracle,
    OpenLoop,
    Constant { verdict: bool },
    Noisy { false_positive_rate: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    /// Per-step success probability of the scripted executor.
    pub p: f64,
    pub horizon: usize,
    pub n_target_accepted: usize,
    pub max_episodes: usize,
    pub critic: CriticConfig,
    pub observation_px: u32,
    /// Rendered frames per sub-task when synthesizing trajectories.
    pub frames_per_step: usize,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            p: 0.8,
            horizon: 2,
            n_target_accepted: 3,
            max_episodes: 50,
            critic: CriticConfig::Oracle,
            observation_px: 64,
            frames_per_step: 30,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressSection {
    pub codec: CodecSpec,
    pub metric: MetricSpec,
    #[serde(flatten)]
    pub search: CompressionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: String,
    pub catalog: PathBuf,
    pub workspace: Workspace,
    pub task: TaskConfig,
    pub raster: RasterConfig,
    #[serde(default)]
    pub providers: ProviderConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub campaign: CampaignSection,
    #[serde(default)]
    pub compression: CompressSection,
    #[serde(default = "default_attempts")]
    pub max_attempts_per_object: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn default_attempts() -> u32 {
    vcage_core::scene::DEFAULT_MAX_ATTEMPTS
}

impl PipelineConfig {
    /// Read and validate a config. Relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.catalog.is_relative() {
            cfg.catalog = base.join(&cfg.catalog);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(CliError::validation(format!("expected schema {CONFIG_SCHEMA}, got {}", self.schema)));
        }
        if !self.catalog.is_file() {
            return Err(CliError::validation(format!("catalog {} does not exist", self.catalog.display())));
        }
        self.workspace.validate().map_err(|e| CliError::validation(e.to_string()))?;
        self.optimizer.validate().map_err(|e| CliError::validation(e.to_string()))?;
        self.matching.validate().map_err(|e| CliError::validation(e.to_string()))?;
        self.compression.codec.validate().map_err(|e| CliError::validation(e.to_string()))?;
        let p = &self.providers;
        for (role, got, want) in [
            ("selector", &p.selector, "keyword"),
            ("planner", &p.planner, "template"),
            ("inpainter", &p.inpainter, "synthetic"),
            ("detector", &p.detector, "ground_truth"),
            ("features", &p.features, "histogram"),
        ] {
            if got != want {
                return Err(CliError::validation(format!("unknown {role} provider `{got}` (available: {want})")));
            }
        }
        let c = &self.campaign;
        if !(0.0..=1.0).contains(&c.p) {
            return Err(CliError::validation("campaign.p must lie in [0, 1]"));
        }
        if c.horizon == 0 || c.frames_per_step < 10 || c.observation_px < 16 {
            return Err(CliError::validation("campaign needs horizon >= 1, frames_per_step >= 10, observation_px >= 16"));
        }
        if c.n_target_accepted > c.max_episodes {
            return Err(CliError::validation("campaign.n_target_accepted exceeds max_episodes"));
        }
        if self.raster.width < 16 || self.raster.height < 16 {
            return Err(CliError::validation("raster must be at least 16x16"));
        }
        Ok(())
    }

    /// Codec after applying the encoder override from the environment.
    pub fn effective_codec(&self) -> CodecSpec {
        match std::env::var(ENCODER_ENV) {
            Ok(template) if !template.trim().is_empty() => {
                let decode_template = match &self.compression.codec {
                    CodecSpec::External { decode_template, .. } => decode_template.clone(),
                    CodecSpec::Synthetic { .. } => DEFAULT_DECODE_TEMPLATE.into(),
                };
                CodecSpec::External { command_template: template, decode_template }
            }
            _ => self.compression.codec.clone(),
        }
    }
}
