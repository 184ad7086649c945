use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use vcage_core::layout_opt::CostBreakdown;
use vcage_core::scene::SceneStats;
use vcage_core::verification::CampaignStats;

pub const REPORT_SCHEMA: &str = "vcage-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub exit_code: i32,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSummary {
    pub cost: CostBreakdown,
    pub feasible_restarts: usize,
    pub restarts: usize,
    pub contained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSummary {
    pub objects: usize,
    pub feature: usize,
    pub name_fallback: usize,
    pub unmatched: usize,
    pub mean_ncc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSummary {
    pub emitted: usize,
    pub ordered_pairs: usize,
    pub valid_task_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionSummary {
    pub plans: usize,
    pub threshold: f64,
    pub crf: Vec<u32>,
    pub keyframes_per_plan: Vec<usize>,
    pub mean_reduction_ratio: Option<f64>,
    pub reduction_estimated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_scene: Option<SceneStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_scene: Option<SceneStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondence: Option<CorrespondenceSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtasks: Option<SubtaskSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<CampaignStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<CompressionSummary>,
    pub exit_status: i32,
    /// Wall-clock milliseconds per stage; the only nondeterministic field.
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64) -> Self {
        Self { schema: REPORT_SCHEMA.into(), command: command.into(), seed, ..Default::default() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
