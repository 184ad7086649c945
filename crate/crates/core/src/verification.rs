//! Closed-loop rejection sampling over multi-step episodes.
//!
//! An episode is kept only if the critic passes every step; the first failing
//! verdict aborts it and later steps never run. Ground truth is recorded next to
//! each verdict for auditing but only reaches critics that explicitly ask for it.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{Aabb, AssetCatalog, Pose};
use crate::providers::ProviderError;
use crate::scene::SceneConfiguration;
use crate::seed;
use crate::subtask::SubTaskInstance;
use crate::topview::{render_topview, PixelMapping, TopViewRaster};

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("sub-task refers to object {0} that is not in the scene")]
    UnknownObject(String),
    #[error("executor failed: {0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("episode has no sub-tasks")]
    EmptyEpisode,
    #[error("invalid campaign: {0}")]
    InvalidCampaign(String),
    #[error("budget of {max_episodes} episodes exhausted with {accepted} accepted")]
    BudgetExhausted { max_episodes: usize, accepted: usize, partial: Box<CampaignResult> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub subtasks: Vec<SubTaskInstance>,
    pub seed: u64,
}

/// State after one executed step, as seen by a truth-aligned judge.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAudit {
    pub source_aabb: Aabb,
    pub success_region: Aabb,
    pub episode_seed: u64,
    pub step: usize,
}

impl StepAudit {
    pub fn source_in_region(&self) -> bool {
        self.success_region.contains(&self.source_aabb)
    }
}

#[derive(Debug, Clone)]
pub struct StepExecution {
    pub observation: TopViewRaster,
    pub ground_truth_success: bool,
}

pub trait Executor: Send + Sync {
    /// Run `st` against `scene` in place. `step` counts from 1.
    fn execute(
        &self,
        scene: &mut SceneConfiguration,
        st: &SubTaskInstance,
        episode_seed: u64,
        step: usize,
    ) -> Result<StepExecution, ExecutorError>;
}

pub trait Critic: Send + Sync {
    fn judge(&self, observation: &TopViewRaster, description: &str, audit: Option<&StepAudit>) -> Result<bool, ProviderError>;

    /// Whether this critic is a test oracle that must see the step audit.
    fn wants_audit(&self) -> bool {
        false
    }
}

/// Truth-aligned critic: passes iff the source box ended up inside the success region.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleCritic;

impl Critic for OracleCritic {
    fn judge(&self, _obs: &TopViewRaster, _d: &str, audit: Option<&StepAudit>) -> Result<bool, ProviderError> {
        audit
            .map(StepAudit::source_in_region)
            .ok_or_else(|| ProviderError::Failed("oracle critic needs the step audit".into()))
    }

    fn wants_audit(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantCritic(pub bool);

impl Critic for ConstantCritic {
    fn judge(&self, _obs: &TopViewRaster, _d: &str, _a: Option<&StepAudit>) -> Result<bool, ProviderError> {
        Ok(self.0)
    }
}

/// No critic at all: every step passes (open-loop generation).
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenLoop;

impl Critic for OpenLoop {
    fn judge(&self, _obs: &TopViewRaster, _d: &str, _a: Option<&StepAudit>) -> Result<bool, ProviderError> {
        Ok(true)
    }
}

/// Oracle that wrongly passes a failed step with probability `false_positive_rate`.
#[derive(Debug, Clone, Copy)]
pub struct NoisyCritic {
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Critic for NoisyCritic {
    fn judge(&self, obs: &TopViewRaster, d: &str, audit: Option<&StepAudit>) -> Result<bool, ProviderError> {
        let a = audit.ok_or_else(|| ProviderError::Failed("noisy critic needs the step audit".into()))?;
        if OracleCritic.judge(obs, d, audit)? {
            return Ok(true);
        }
        let key = seed::derive(a.episode_seed, seed::stream::CRITIC, a.step as u64);
        Ok(seed::unit_from(seed::derive(self.seed, seed::stream::CRITIC, key)) < self.false_positive_rate)
    }

    fn wants_audit(&self) -> bool {
        true
    }
}

/// Scripted executor: each step independently succeeds with probability `p`.
///
/// Success moves the source's center onto the functional point; failure drops it
/// at a uniform workspace position whose box is not inside the success region.
/// The observation is a fresh render of the resulting scene.
#[derive(Debug, Clone)]
pub struct BernoulliExecutor {
    pub p: f64,
    pub catalog: Arc<AssetCatalog>,
    pub mapping: PixelMapping,
}

impl Executor for BernoulliExecutor {
    fn execute(
        &self,
        scene: &mut SceneConfiguration,
        st: &SubTaskInstance,
        episode_seed: u64,
        step: usize,
    ) -> Result<StepExecution, ExecutorError> {
        let i = st.source_index;
        if scene.objects.get(i).map(|o| &o.asset_id) != Some(&st.source_id) {
            return Err(ExecutorError::UnknownObject(st.source_id.clone()));
        }
        let mut rng = seed::stream_rng(episode_seed, seed::stream::EXECUTOR, step as u64);
        let success = rng.gen::<f64>() < self.p;
        let current = *scene.objects[i].pose();
        let region = st.success_spec.region;
        let new_pose = if success {
            Pose::new(st.functional_point_world, current.orientation)
        } else {
            let h = scene.objects[i].aabb().half_extents();
            let ws = scene.workspace;
            let mut pose = current;
            for _ in 0..256 {
                let x = rng.gen_range(ws.min[0] + h[0]..=ws.max[0] - h[0]);
                let y = rng.gen_range(ws.min[1] + h[1]..=ws.max[1] - h[1]);
                let cand = Pose::new([x, y, ws.table_height + h[2]], current.orientation);
                let bb = Aabb::new([x - h[0], y - h[1], cand.position[2] - h[2]], [x + h[0], y + h[1], cand.position[2] + h[2]]);
                pose = cand;
                if !region.contains(&bb) {
                    break;
                }
            }
            pose
        };
        scene
            .set_pose(&self.catalog, i, new_pose)
            .map_err(|e| ExecutorError::Failed(e.to_string()))?;
        let observation = render_topview(scene, &self.catalog, &self.mapping).map_err(|e| ExecutorError::Failed(e.to_string()))?;
        let ground_truth_success = region.contains(scene.objects[i].aabb());
        Ok(StepExecution { observation, ground_truth_success })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "step", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    /// 1-based index of the first step the critic failed.
    Reject(usize),
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: TopViewRaster,
    pub ground_truth_success: bool,
    pub critic_verdict: u8,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub verdict: Verdict,
    pub steps: Vec<StepOutcome>,
}

impl EpisodeResult {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    pub fn truly_successful(&self) -> bool {
        self.steps.iter().all(|s| s.ground_truth_success)
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("episode has no sub-tasks")]
    Empty,
}

/// Run one episode from a fresh copy of `scene`, aborting at the first failed verdict.
pub fn verify_episode(
    ep: &Episode,
    scene: &SceneConfiguration,
    executor: &dyn Executor,
    critic: &dyn Critic,
) -> Result<EpisodeResult, EpisodeError> {
    if ep.subtasks.is_empty() {
        return Err(EpisodeError::Empty);
    }
    let mut state = scene.clone();
    let mut steps = Vec::with_capacity(ep.subtasks.len());
    for (k, st) in ep.subtasks.iter().enumerate() {
        let step = k + 1;
        let exec = executor.execute(&mut state, st, ep.seed, step)?;
        let audit = critic.wants_audit().then(|| StepAudit {
            source_aabb: *state.objects[st.source_index].aabb(),
            success_region: st.success_spec.region,
            episode_seed: ep.seed,
            step,
        });
        let pass = critic.judge(&exec.observation, &st.description, audit.as_ref())?;
        steps.push(StepOutcome {
            observation: exec.observation,
            ground_truth_success: exec.ground_truth_success,
            critic_verdict: pass as u8,
        });
        if !pass {
            return Ok(EpisodeResult { verdict: Verdict::Reject(step), steps });
        }
    }
    Ok(EpisodeResult { verdict: Verdict::Accept, steps })
}

/// How each campaign attempt draws its sub-tasks.
#[derive(Debug, Clone)]
pub struct EpisodeTemplate {
    pub pool: Vec<SubTaskInstance>,
    pub horizon: usize,
}

impl EpisodeTemplate {
    /// Attempt `index` under master `seed`: its own seed plus `horizon` sub-tasks
    /// drawn uniformly (with replacement) from the pool.
    pub fn episode(&self, seed: u64, index: u64) -> Episode {
        let ep_seed = seed::derive(seed, seed::stream::EPISODES, index);
        let mut rng = seed::stream_rng(ep_seed, seed::stream::CAMPAIGN, 0);
        let subtasks = (0..self.horizon)
            .map(|_| self.pool[rng.gen_range(0..self.pool.len())].clone())
            .collect();
        Episode { subtasks, seed: ep_seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub n_target_accepted: usize,
    pub max_episodes: usize,
    pub seed: u64,
    /// Keep observation rasters of accepted episodes.
    pub keep_observations: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub index: u64,
    pub episode: Episode,
    pub verdicts: Vec<u8>,
    pub ground_truth: Vec<bool>,
    pub observations: Vec<TopViewRaster>,
}

impl EpisodeRecord {
    pub fn truly_successful(&self) -> bool {
        self.ground_truth.iter().all(|&g| g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub episodes_run: usize,
    pub accepted: usize,
    /// `rejected_at[j]` counts episodes rejected at step j + 1.
    pub rejected_at: Vec<usize>,
    pub acceptance_rate: f64,
    pub purity: f64,
    /// Attempts that ended in an executor or provider error; not part of `episodes_run`.
    pub errored: usize,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub accepted: Vec<EpisodeRecord>,
    pub stats: CampaignStats,
}

/// Fraction of accepted episodes whose every step truly succeeded; 1 when none were accepted.
pub fn purity(accepted: &[EpisodeRecord]) -> f64 {
    if accepted.is_empty() {
        return 1.0;
    }
    accepted.iter().filter(|e| e.truly_successful()).count() as f64 / accepted.len() as f64
}

const BATCH: usize = 256;

/// Sample episodes until `n_target_accepted` pass or `max_episodes` have run.
///
/// Attempts run in parallel batches but are folded in index order, so the result
/// is the same as a sequential run.
pub fn run_campaign(
    template: &EpisodeTemplate,
    scene: &SceneConfiguration,
    executor: &dyn Executor,
    critic: &dyn Critic,
    cfg: &CampaignConfig,
) -> Result<CampaignResult, VerifyError> {
    if cfg.n_target_accepted > cfg.max_episodes {
        return Err(VerifyError::InvalidCampaign("n_target_accepted exceeds max_episodes".into()));
    }
    if template.horizon == 0 {
        return Err(VerifyError::EmptyEpisode);
    }
    if template.pool.is_empty() && cfg.n_target_accepted > 0 {
        return Err(VerifyError::InvalidCampaign("no sub-tasks to sample from".into()));
    }
    let mut result = CampaignResult {
        accepted: Vec::new(),
        stats: CampaignStats {
            episodes_run: 0,
            accepted: 0,
            rejected_at: vec![0; template.horizon],
            acceptance_rate: 0.0,
            purity: 1.0,
            errored: 0,
        },
    };
    let mut next = 0usize;
    while result.stats.accepted < cfg.n_target_accepted && next < cfg.max_episodes {
        let end = (next + BATCH).min(cfg.max_episodes);
        let outcomes: Vec<(Episode, Result<EpisodeResult, EpisodeError>)> = (next..end)
            .into_par_iter()
            .map(|i| {
                let ep = template.episode(cfg.seed, i as u64);
                let r = verify_episode(&ep, scene, executor, critic);
                (ep, r)
            })
            .collect();
        for (episode, outcome) in outcomes {
            if result.stats.accepted >= cfg.n_target_accepted {
                break;
            }
            next += 1;
            let Ok(r) = outcome else {
                result.stats.errored += 1;
                continue;
            };
            result.stats.episodes_run += 1;
            match r.verdict {
                Verdict::Reject(step) => result.stats.rejected_at[step - 1] += 1,
                Verdict::Accept => {
                    result.stats.accepted += 1;
                    let ground_truth = r.steps.iter().map(|s| s.ground_truth_success).collect();
                    let verdicts = r.steps.iter().map(|s| s.critic_verdict).collect();
                    let observations = if cfg.keep_observations {
                        r.steps.into_iter().map(|s| s.observation).collect()
                    } else {
                        Vec::new()
                    };
                    result.accepted.push(EpisodeRecord {
                        index: (next - 1) as u64,
                        episode,
                        verdicts,
                        ground_truth,
                        observations,
                    });
                }
            }
        }
    }
    let s = &mut result.stats;
    s.acceptance_rate = if s.episodes_run > 0 { s.accepted as f64 / s.episodes_run as f64 } else { 0.0 };
    s.purity = purity(&result.accepted);
    if s.accepted < cfg.n_target_accepted {
        return Err(VerifyError::BudgetExhausted {
            max_episodes: cfg.max_episodes,
            accepted: s.accepted,
            partial: Box::new(result),
        });
    }
    Ok(result)
}
