//! The four pipeline stages and their on-disk artifacts.
//!
//! Every artifact path recorded in a document is relative to the output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vcage_core::assets::{load_catalog, AssetCatalog, Pose};
use vcage_core::compression::{plan_compression, CompressionError, TrajectoryRecord};
use vcage_core::correspondence::{match_scene, matches_to_json, MatchMethod, SceneMatch, VisionProviders};
use vcage_core::layout_opt::{optimize_layout, LayoutError, LayoutOutcome, OptimizerConfig};
use vcage_core::providers::{
    plan_layout, select_assets, GroundTruthDetector, HistogramFeatures, Inpainter, KeywordSelector, ProviderError,
    SyntheticInpainter, TaskSpec, TemplatePlanner,
};
use vcage_core::scene::{sample_initial_layout, scene_stats, violations, SceneConfiguration, SceneError};
use vcage_core::seed::{self, stream};
use vcage_core::subtask::{enumerate_pick_place, instantiate_script, valid_task_ratio, ReceptacleRule};
use vcage_core::topview::{render_topview, PixelMapping, TopViewRaster};
use vcage_core::verification::{
    run_campaign, BernoulliExecutor, CampaignConfig, CampaignResult, CampaignStats, ConstantCritic, Critic, EpisodeTemplate,
    Executor, NoisyCritic, OpenLoop, OracleCritic, VerifyError,
};

use crate::config::{CriticConfig, PipelineConfig};
use crate::error::{exit, CliError};
use crate::report::{CompressionSummary, CorrespondenceSummary, LayoutSummary, RunReport, StageRecord, SubtaskSummary};
use crate::trajectory::{synthesize, StepMotion};

pub const SCENE_INITIAL: &str = "scene_initial.json";
pub const SRC_IMAGE: &str = "src.ppm";
pub const SCENE_REFINED: &str = "scene_refined.json";
pub const TGT_IMAGE: &str = "tgt.ppm";
pub const MATCHES: &str = "matches.json";
pub const MANIFEST: &str = "dataset.json";
pub const REPORT: &str = "run_report.json";
pub const DATASET_SCHEMA: &str = "vcage-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Scene,
    Refine,
    Generate,
    Compress,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Scene, Stage::Refine, Stage::Generate, Stage::Compress];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scene => "scene",
            Stage::Refine => "refine",
            Stage::Generate => "generate",
            Stage::Compress => "compress",
        }
    }
}

/// Mutable state of one CLI invocation.
pub struct Run<'a> {
    pub cfg: &'a PipelineConfig,
    pub out: PathBuf,
    pub report: RunReport,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a PipelineConfig, command: &str) -> Self {
        Self { cfg, out: cfg.output_dir.clone(), report: RunReport::new(command, cfg.seed), outputs: Vec::new() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn write_image(&mut self, rel: &str, img: &TopViewRaster) -> Result<(), CliError> {
        self.write(rel, img.to_ppm_bytes())
    }

    /// Run `f` as stage `stage`, recording outcome and timing.
    pub fn stage(&mut self, stage: Stage, f: impl FnOnce(&mut Run<'a>) -> Result<(), CliError>) -> Result<(), CliError> {
        self.outputs.clear();
        let t0 = Instant::now();
        let result = f(self);
        self.report.timings_ms.insert(stage.name().into(), t0.elapsed().as_secs_f64() * 1e3);
        let (status, code, message) = match &result {
            Ok(()) => ("ok", exit::OK, None),
            Err(e) => ("failed", e.code, Some(e.message.clone())),
        };
        self.report.stages.push(StageRecord {
            name: stage.name().into(),
            status: status.into(),
            exit_code: code,
            outputs: std::mem::take(&mut self.outputs),
            message,
        });
        result
    }

    pub fn write_report(&mut self, status: i32) -> Result<PathBuf, CliError> {
        self.report.exit_status = status;
        let p = self.path(REPORT);
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        std::fs::write(&p, self.report.to_json()).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn catalog(cfg: &PipelineConfig) -> Result<Arc<AssetCatalog>, CliError> {
    load_catalog(&cfg.catalog).map(Arc::new).map_err(|e| CliError::validation(e.to_string()))
}

fn mapping(cfg: &PipelineConfig) -> Result<PixelMapping, CliError> {
    PixelMapping::new(cfg.workspace, cfg.raster.width, cfg.raster.height).map_err(|e| CliError::validation(e.to_string()))
}

fn task(cfg: &PipelineConfig) -> Result<TaskSpec, CliError> {
    TaskSpec::new(cfg.task.instruction.clone(), cfg.task.scene_tag.clone()).map_err(provider_error)
}

fn provider_error(e: ProviderError) -> CliError {
    match e {
        ProviderError::Validation(_) | ProviderError::InsufficientAssets { .. } => CliError::validation(e.to_string()),
        other => CliError::internal(other.to_string()),
    }
}

fn load_scene(path: &Path, catalog: &AssetCatalog) -> Result<SceneConfiguration, CliError> {
    SceneConfiguration::from_json(&read(path)?, catalog).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn cmd_scene(run: &mut Run<'_>) -> Result<(), CliError> {
    let cfg = run.cfg;
    let catalog = catalog(cfg)?;
    let assets = select_assets(&KeywordSelector::default(), &task(cfg)?, &catalog, cfg.task.n_assets).map_err(provider_error)?;
    let scene = sample_initial_layout(&assets, cfg.workspace, cfg.seed, cfg.max_attempts_per_object).map_err(|e| match e {
        SceneError::PlacementInfeasible { .. } | SceneError::ObjectTooLarge { .. } => CliError::new(exit::PLACEMENT, e.to_string()),
        other => CliError::validation(other.to_string()),
    })?;
    let img = render_topview(&scene, &catalog, &mapping(cfg)?).map_err(|e| CliError::internal(e.to_string()))?;
    run.write(SCENE_INITIAL, scene.to_json())?;
    run.write_image(SRC_IMAGE, &img)?;
    run.report.initial_scene = Some(scene_stats(&scene));
    Ok(())
}

/// In-memory result of the refine stage before anything is written.
pub struct Refinement {
    pub tgt_img: TopViewRaster,
    pub matched: SceneMatch,
    pub optimized: Result<LayoutOutcome, LayoutError>,
}

/// Plan, inpaint, match and optimize `scene` with the configured providers.
pub fn refine_scene(cfg: &PipelineConfig, catalog: &Arc<AssetCatalog>, scene: &SceneConfiguration) -> Result<Refinement, CliError> {
    let m = mapping(cfg)?;
    let src_img = render_topview(scene, catalog, &m).map_err(|e| CliError::internal(e.to_string()))?;
    let plan = plan_layout(&TemplatePlanner, &task(cfg)?, scene, catalog).map_err(provider_error)?;
    let inpainter = SyntheticInpainter::new(catalog.clone(), scene.clone(), m);
    let tgt_img = inpainter.inpaint(&src_img, &plan).map_err(provider_error)?;
    let depicted = inpainter.target_scene(&plan).map_err(provider_error)?;
    let detector = GroundTruthDetector {
        catalog: catalog.clone(),
        scene: depicted,
        mapping: m,
        jitter_px: cfg.providers.detector_jitter_px,
        seed: seed::derive(cfg.seed, stream::DETECTOR, 0),
    };
    let features = HistogramFeatures::default();
    let providers = VisionProviders { detector: &detector, features: &features };
    let matched = match_scene(scene, catalog, &src_img, &tgt_img, &providers, &m, &cfg.matching)
        .map_err(|e| CliError::internal(e.to_string()))?;

    // Recovered rotations change the footprints the optimizer sees.
    let mut oriented = scene.clone();
    let mut targets = Vec::with_capacity(scene.len());
    for c in &matched.correspondences {
        let obj = &scene.objects[c.source_index];
        let yaw = obj.yaw() + c.rotation_deg.unwrap_or(0.0).to_radians();
        let p = obj.pose().position;
        oriented
            .set_pose(catalog, c.source_index, Pose::from_xyz_yaw(p, yaw))
            .map_err(|e| CliError::internal(e.to_string()))?;
        targets.push(c.world_position.unwrap_or([p[0], p[1]]));
    }
    let opt = OptimizerConfig { seed: seed::derive(cfg.seed, stream::OPTIMIZER, 0), ..cfg.optimizer.clone() };
    let optimized = optimize_layout(&oriented, catalog, &targets, &opt);
    Ok(Refinement { tgt_img, matched, optimized })
}

/// Rest every content on top of its container and check the result.
pub fn stack_contents(outcome: &LayoutOutcome, catalog: &AssetCatalog) -> Result<SceneConfiguration, CliError> {
    let mut refined = outcome.scene.clone();
    for (&content, &container) in &outcome.forest.assignments {
        let top = refined.objects[container].aabb().max[2];
        let obj = &refined.objects[content];
        let mut p = *obj.pose();
        p.position[2] = top + obj.aabb().half_extents()[2];
        refined.set_pose(catalog, content, p).map_err(|e| CliError::internal(e.to_string()))?;
    }
    let bad = violations(&refined, &outcome.forest.exempt_pairs(), 1e-9);
    if !bad.is_empty() {
        return Err(CliError::internal(format!("refined scene fails validation: {bad:?}")));
    }
    Ok(refined)
}

pub fn cmd_refine(run: &mut Run<'_>, scene_path: &Path) -> Result<(), CliError> {
    let cfg = run.cfg;
    let catalog = catalog(cfg)?;
    let scene = load_scene(scene_path, &catalog)?;
    let Refinement { tgt_img, matched, optimized } = refine_scene(cfg, &catalog, &scene)?;
    run.write_image(TGT_IMAGE, &tgt_img)?;
    run.write(MATCHES, matches_to_json(&scene, &matched.correspondences))?;
    let count = |k: MatchMethod| matched.correspondences.iter().filter(|c| c.method == k).count();
    let nccs: Vec<f64> = matched.correspondences.iter().filter_map(|c| c.ncc_score).collect();
    run.report.correspondence = Some(CorrespondenceSummary {
        objects: scene.len(),
        feature: count(MatchMethod::Feature),
        name_fallback: count(MatchMethod::NameFallback),
        unmatched: count(MatchMethod::Unmatched),
        mean_ncc: (!nccs.is_empty()).then(|| nccs.iter().sum::<f64>() / nccs.len() as f64),
    });
    let outcome = match optimized {
        Ok(o) => o,
        Err(LayoutError::InfeasibleLayout { best, scene: partial }) => {
            run.write(SCENE_REFINED, partial.to_json())?;
            run.report.layout =
                Some(LayoutSummary { cost: best, feasible_restarts: 0, restarts: cfg.optimizer.restarts, contained: 0 });
            return Err(CliError::new(exit::INFEASIBLE_LAYOUT, format!("layout infeasible (best total {:.6e})", best.total)));
        }
        Err(e) => return Err(CliError::validation(e.to_string())),
    };
    let refined = stack_contents(&outcome, &catalog)?;
    run.write(SCENE_REFINED, refined.to_json())?;
    run.report.layout = Some(LayoutSummary {
        cost: outcome.cost,
        feasible_restarts: outcome.restarts.iter().filter(|r| r.cost.hard_feasible()).count(),
        restarts: outcome.restarts.len(),
        contained: outcome.forest.assignments.len(),
    });
    run.report.refined_scene = Some(scene_stats(&refined));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub index: u64,
    pub seed: u64,
    pub subtasks: Vec<String>,
    pub observations: Vec<String>,
    pub verdicts: Vec<u8>,
    pub trajectory: String,
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub scene: String,
    pub subtasks: Vec<String>,
    pub valid_task_ratio: f64,
    pub episodes: Vec<EpisodeEntry>,
    pub stats: CampaignStats,
}

fn critic(cfg: &PipelineConfig) -> Box<dyn Critic> {
    match cfg.campaign.critic {
        CriticConfig::Oracle => Box::new(OracleCritic),
        CriticConfig::OpenLoop => Box::new(OpenLoop),
        CriticConfig::Constant { verdict } => Box::new(ConstantCritic(verdict)),
        CriticConfig::Noisy { false_positive_rate } => {
            Box::new(NoisyCritic { false_positive_rate, seed: seed::derive(cfg.seed, stream::CRITIC, 0) })
        }
    }
}

pub fn cmd_generate(run: &mut Run<'_>, refined_path: &Path) -> Result<(), CliError> {
    let cfg = run.cfg;
    let catalog = catalog(cfg)?;
    let scene = load_scene(refined_path, &catalog)?;
    let tasks = enumerate_pick_place(&scene, &catalog, &ReceptacleRule).map_err(|e| CliError::validation(e.to_string()))?;
    let n = scene.len();
    run.report.subtasks = Some(SubtaskSummary {
        emitted: tasks.len(),
        ordered_pairs: n * n.saturating_sub(1),
        valid_task_ratio: valid_task_ratio(&scene, tasks.len()),
    });
    let mut script_paths = Vec::new();
    for (i, st) in tasks.iter().enumerate() {
        let script = instantiate_script(st, &scene).map_err(|e| CliError::internal(e.to_string()))?;
        let rel = format!("subtasks/task_{i:03}.json");
        run.write(&rel, script.to_json())?;
        script_paths.push(rel);
    }

    let c = &cfg.campaign;
    let obs_map = PixelMapping::new(cfg.workspace, c.observation_px, c.observation_px).map_err(|e| CliError::validation(e.to_string()))?;
    let executor = BernoulliExecutor { p: c.p, catalog: catalog.clone(), mapping: obs_map };
    let critic = critic(cfg);
    let campaign_cfg = CampaignConfig {
        n_target_accepted: c.n_target_accepted,
        max_episodes: c.max_episodes,
        seed: seed::derive(cfg.seed, stream::CAMPAIGN, 0),
        keep_observations: true,
    };
    let template = EpisodeTemplate { pool: tasks.clone(), horizon: c.horizon };
    let (result, exhausted) = if tasks.is_empty() {
        let stats = CampaignStats {
            episodes_run: 0,
            accepted: 0,
            rejected_at: vec![0; c.horizon],
            acceptance_rate: 0.0,
            purity: 1.0,
            errored: 0,
        };
        (CampaignResult { accepted: Vec::new(), stats }, c.n_target_accepted > 0)
    } else {
        match run_campaign(&template, &scene, &executor, critic.as_ref(), &campaign_cfg) {
            Ok(r) => (r, false),
            Err(VerifyError::BudgetExhausted { partial, .. }) => (*partial, true),
            Err(e) => return Err(CliError::validation(e.to_string())),
        }
    };

    let mut episodes = Vec::new();
    for rec in &result.accepted {
        let dir = format!("episodes/ep_{:05}", rec.index);
        let mut observations = Vec::new();
        for (k, img) in rec.observations.iter().enumerate() {
            let rel = format!("{dir}/step_{}.ppm", k + 1);
            run.write_image(&rel, img)?;
            observations.push(rel);
        }
        // Replay the executor to recover each step's before/after states.
        let mut state = scene.clone();
        let mut motions = Vec::new();
        for (k, st) in rec.episode.subtasks.iter().enumerate() {
            let before = state.clone();
            executor
                .execute(&mut state, st, rec.episode.seed, k + 1)
                .map_err(|e| CliError::internal(e.to_string()))?;
            motions.push(StepMotion { source_index: st.source_index, contact: st.contact_point_world, before, after: state.clone() });
        }
        let synth = synthesize(&motions, &catalog, &obs_map, c.frames_per_step).map_err(|e| CliError::internal(e.to_string()))?;
        let traj_rel = format!("{dir}/trajectory.txt");
        run.write(&traj_rel, synth.trajectory.to_text())?;
        let mut frames = Vec::new();
        for (t, img) in synth.frames.iter().enumerate() {
            let rel = format!("{dir}/frames/frame_{t:04}.ppm");
            run.write_image(&rel, img)?;
            frames.push(rel);
        }
        let subtasks = rec
            .episode
            .subtasks
            .iter()
            .map(|st| {
                let i = tasks.iter().position(|t| t == st).expect("episode draws from the pool");
                script_paths[i].clone()
            })
            .collect();
        episodes.push(EpisodeEntry {
            index: rec.index,
            seed: rec.episode.seed,
            subtasks,
            observations,
            verdicts: rec.verdicts.clone(),
            trajectory: traj_rel,
            frames,
        });
    }
    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.into(),
        scene: relative_to(&run.out, refined_path),
        subtasks: script_paths,
        valid_task_ratio: valid_task_ratio(&scene, tasks.len()),
        episodes,
        stats: result.stats.clone(),
    };
    run.write(MANIFEST, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    run.report.campaign = Some(result.stats);
    if exhausted {
        return Err(CliError::new(
            exit::BUDGET_EXHAUSTED,
            format!("accepted {} of {} requested episodes", manifest.stats.accepted, c.n_target_accepted),
        ));
    }
    Ok(())
}

fn relative_to(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

pub fn cmd_compress(run: &mut Run<'_>, manifest_path: &Path) -> Result<(), CliError> {
    let cfg = run.cfg;
    let manifest: DatasetManifest =
        serde_json::from_str(&read(manifest_path)?).map_err(|e| CliError::validation(format!("{}: {e}", manifest_path.display())))?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(CliError::validation(format!("unexpected manifest schema {}", manifest.schema)));
    }
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let codec = cfg.effective_codec();
    codec.validate().map_err(|e| CliError::validation(e.to_string()))?;
    let metric = cfg.compression.metric.clone();
    let mut summary = CompressionSummary {
        plans: 0,
        threshold: cfg.compression.search.threshold,
        crf: Vec::new(),
        keyframes_per_plan: Vec::new(),
        mean_reduction_ratio: None,
        reduction_estimated: false,
    };
    let mut ratios = Vec::new();
    for ep in &manifest.episodes {
        let traj = TrajectoryRecord::load(base.join(&ep.trajectory)).map_err(|e| CliError::validation(e.to_string()))?;
        let frames = ep
            .frames
            .iter()
            .map(|f| TopViewRaster::load_ppm(base.join(f)).map_err(|e| CliError::validation(format!("{f}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let plan = plan_compression(&traj, &frames, &codec, &metric, &cfg.compression.search).map_err(|e| match e {
            CompressionError::Codec(_) | CompressionError::Metric(_) => CliError::new(exit::CODEC, e.to_string()),
            other => CliError::validation(other.to_string()),
        })?;
        let dir = Path::new(&ep.trajectory).parent().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
        run.write(&format!("{dir}/plan.json"), plan.to_json())?;
        summary.plans += 1;
        summary.crf.push(plan.crf);
        summary.keyframes_per_plan.push(plan.keyframes.len());
        summary.reduction_estimated |= plan.reduction_estimated;
        ratios.push(plan.reduction_ratio);
    }
    summary.mean_reduction_ratio = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    run.report.compression = Some(summary);
    Ok(())
}

/// Run stages from `first` through `last` in order, stopping at the first failure.
pub fn run_stages(run: &mut Run<'_>, first: Stage, last: Stage, inputs: &StageInputs) -> Result<(), CliError> {
    let scene_initial = inputs.scene.clone().unwrap_or_else(|| run.path(SCENE_INITIAL));
    let scene_refined = inputs.refined.clone().unwrap_or_else(|| run.path(SCENE_REFINED));
    let manifest = inputs.manifest.clone().unwrap_or_else(|| run.path(MANIFEST));
    for stage in Stage::ALL.into_iter().filter(|s| (first..=last).contains(s)) {
        match stage {
            Stage::Scene => run.stage(stage, cmd_scene)?,
            Stage::Refine => run.stage(stage, |r| cmd_refine(r, &scene_initial))?,
            Stage::Generate => run.stage(stage, |r| cmd_generate(r, &scene_refined))?,
            Stage::Compress => run.stage(stage, |r| cmd_compress(r, &manifest))?,
        }
    }
    Ok(())
}

/// Explicit stage inputs; defaults are the previous stage's outputs in the output directory.
#[derive(Debug, Clone, Default)]
pub struct StageInputs {
    pub scene: Option<PathBuf>,
    pub refined: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}
