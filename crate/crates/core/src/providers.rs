//! Foundation-model roles as traits, plus deterministic scripted doubles.
//!
//! Real adapters (network clients) live outside this crate and implement the same
//! traits. Doubles here are pure: the same inputs and seed give the same output.

use std::collections::{BTreeMap, HashSet};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AssetCatalog, AssetRecord, Pose};
use crate::scene::SceneConfiguration;
use crate::seed;
use crate::topview::{self, footprint_box, render_topview, PixelBox, PixelMapping, TopViewRaster};

pub const DEFAULT_FEATURE_DIM: usize = 64;
/// Clearance used by the synthetic inpainter for side-by-side relations.
pub const SIDE_CLEARANCE: f64 = 0.02;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("invalid provider request: {0}")]
    Validation(String),
    #[error("requested {requested} assets but only {available} are available")]
    InsufficientAssets { requested: usize, available: usize },
    #[error("crop is empty")]
    EmptyCrop,
    #[error("provider failed: {0}")]
    Failed(String),
}

/// Connection settings for network-backed adapters; doubles ignore them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Run a blocking provider call on a helper thread and give up after `timeout`.
pub fn call_with_timeout<T, F>(timeout: Duration, f: F) -> Result<T, ProviderError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ProviderError> + Send + 'static,
{
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(f());
    });
    rx.recv_timeout(timeout).map_err(|e| match e {
        mpsc::RecvTimeoutError::Timeout => ProviderError::Timeout(timeout),
        mpsc::RecvTimeoutError::Disconnected => ProviderError::Failed("provider thread panicked".into()),
    })?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    #[serde(default)]
    pub scene_tag: String,
}

impl TaskSpec {
    pub fn new(instruction: impl Into<String>, scene_tag: impl Into<String>) -> Result<Self, ProviderError> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(ProviderError::Validation("instruction is empty".into()));
        }
        Ok(Self {
            instruction,
            scene_tag: scene_tag.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    On,
    Beside,
    LeftOf,
    RightOf,
    Near,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub subject_id: String,
    pub relation: Relation,
    pub reference_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<[f64; 2]>,
    /// Extra yaw applied to the subject, degrees counter-clockwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotate_deg: Option<f64>,
}

impl Directive {
    pub fn new(subject: &str, relation: Relation, reference: &str) -> Self {
        Self {
            subject_id: subject.into(),
            relation,
            reference_id: reference.into(),
            offset: None,
            rotate_deg: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub directives: Vec<Directive>,
    #[serde(default)]
    pub free_text: String,
}

impl LayoutPlan {
    pub fn validate(&self, scene: &SceneConfiguration) -> Result<(), ProviderError> {
        for d in &self.directives {
            if d.subject_id == d.reference_id {
                return Err(ProviderError::Validation(format!("`{}` refers to itself", d.subject_id)));
            }
            for id in [&d.subject_id, &d.reference_id] {
                if scene.index_of(id).is_none() {
                    return Err(ProviderError::Validation(format!("unknown object `{id}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    /// Scale to unit L2 norm; a zero vector becomes the first basis vector.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            values.iter_mut().for_each(|v| *v /= n);
        } else if let Some(first) = values.first_mut() {
            *first = 1.0;
        }
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub trait AssetSelector: Send + Sync {
    fn select(&self, task: &TaskSpec, catalog: &AssetCatalog, n: usize) -> Result<Vec<AssetRecord>, ProviderError>;
}

pub trait LayoutPlanner: Send + Sync {
    fn plan(&self, task: &TaskSpec, scene: &SceneConfiguration, catalog: &AssetCatalog) -> Result<LayoutPlan, ProviderError>;
}

pub trait Inpainter: Send + Sync {
    fn inpaint(&self, src: &TopViewRaster, plan: &LayoutPlan) -> Result<TopViewRaster, ProviderError>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, img: &TopViewRaster, labels: &[String]) -> Result<Vec<Detection>, ProviderError>;
}

pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, crop: &TopViewRaster) -> Result<FeatureVector, ProviderError>;

    /// Implementations that cannot take concurrent calls return `true`; callers then
    /// go through [`Serialized`].
    fn serial(&self) -> bool {
        false
    }
}

/// Mutual-exclusion wrapper for providers that declare themselves serial.
pub struct Serialized<P> {
    inner: Mutex<P>,
}

impl<P> Serialized<P> {
    pub fn new(inner: P) -> Self {
        Self { inner: Mutex::new(inner) }
    }
}

impl<P: FeatureExtractor> FeatureExtractor for Serialized<P> {
    fn extract(&self, crop: &TopViewRaster) -> Result<FeatureVector, ProviderError> {
        self.inner.lock().expect("provider lock poisoned").extract(crop)
    }
}

pub fn select_assets(
    provider: &dyn AssetSelector,
    task: &TaskSpec,
    catalog: &AssetCatalog,
    n: usize,
) -> Result<Vec<AssetRecord>, ProviderError> {
    if n > catalog.len() {
        return Err(ProviderError::InsufficientAssets {
            requested: n,
            available: catalog.len(),
        });
    }
    let picked = provider.select(task, catalog, n)?;
    let mut seen = HashSet::new();
    if picked.len() != n || !picked.iter().all(|a| seen.insert(a.id.clone())) {
        return Err(ProviderError::Validation(format!(
            "selector returned {} assets (expected {n} distinct)",
            picked.len()
        )));
    }
    Ok(picked)
}

pub fn plan_layout(
    provider: &dyn LayoutPlanner,
    task: &TaskSpec,
    scene: &SceneConfiguration,
    catalog: &AssetCatalog,
) -> Result<LayoutPlan, ProviderError> {
    if scene.is_empty() {
        return Err(ProviderError::Validation("scene has no objects".into()));
    }
    let plan = provider.plan(task, scene, catalog)?;
    plan.validate(scene)?;
    Ok(plan)
}

pub fn detect(provider: &dyn Detector, img: &TopViewRaster, labels: &[String]) -> Result<Vec<Detection>, ProviderError> {
    if labels.is_empty() {
        return Err(ProviderError::Validation("empty label list".into()));
    }
    provider.detect(img, labels)
}

pub fn extract_feature(provider: &dyn FeatureExtractor, crop: &TopViewRaster) -> Result<FeatureVector, ProviderError> {
    if crop.is_empty() {
        return Err(ProviderError::EmptyCrop);
    }
    provider.extract(crop)
}

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Scores each asset by how many instruction tokens name it, its category, or map
/// to it through the keyword table; highest scores win, catalog order breaks ties.
#[derive(Debug, Clone)]
pub struct KeywordSelector {
    pub table: BTreeMap<String, Vec<String>>,
}

impl Default for KeywordSelector {
    fn default() -> Self {
        let mut table = BTreeMap::new();
        let mut put = |k: &str, v: &[&str]| {
            table.insert(k.to_string(), v.iter().map(|s| s.to_string()).collect());
        };
        put("dining", &["bowl", "plate", "cup", "fork"]);
        put("breakfast", &["bowl", "cup", "plate"]);
        put("office", &["stapler", "mug", "book"]);
        put("desk", &["stapler", "mug", "book", "tray"]);
        put("tidy", &["tray", "box", "basket"]);
        put("kitchen", &["bowl", "plate", "cup", "tray"]);
        Self { table }
    }
}

impl AssetSelector for KeywordSelector {
    fn select(&self, task: &TaskSpec, catalog: &AssetCatalog, n: usize) -> Result<Vec<AssetRecord>, ProviderError> {
        let words = tokens(&task.instruction);
        let mut keywords: Vec<String> = words.clone();
        for w in &words {
            if let Some(extra) = self.table.get(w) {
                keywords.extend(extra.iter().cloned());
            }
        }
        let mut scored: Vec<(usize, usize)> = catalog
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut names = tokens(&a.name);
                names.extend(tokens(&a.category));
                let score = keywords.iter().filter(|k| names.contains(k)).count();
                (i, score)
            })
            .collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(n)
            .map(|(i, _)| catalog.assets()[i].clone())
            .collect())
    }
}

/// Assigns every non-receptacle to a receptacle round-robin. The first object
/// assigned to a receptacle goes `on` it, later ones are put `right_of`, `left_of`
/// and `near` it in turn.
#[derive(Debug, Clone, Default)]
pub struct TemplatePlanner;

impl LayoutPlanner for TemplatePlanner {
    fn plan(&self, _task: &TaskSpec, scene: &SceneConfiguration, catalog: &AssetCatalog) -> Result<LayoutPlan, ProviderError> {
        let is_receptacle = |id: &str| catalog.get(id).map(|a| a.receptacle).unwrap_or(false);
        let receptacles: Vec<&str> = scene
            .objects
            .iter()
            .map(|o| o.asset_id.as_str())
            .filter(|id| is_receptacle(id))
            .collect();
        let mut plan = LayoutPlan::default();
        if receptacles.is_empty() {
            return Ok(plan);
        }
        let mut load = vec![0usize; receptacles.len()];
        let cycle = [Relation::On, Relation::RightOf, Relation::LeftOf, Relation::Near];
        let subjects = scene.objects.iter().map(|o| o.asset_id.as_str()).filter(|id| !is_receptacle(id));
        for (k, subject) in subjects.enumerate() {
            let r = k % receptacles.len();
            let slot = load[r];
            load[r] += 1;
            let mut d = Directive::new(subject, cycle[slot % cycle.len()], receptacles[r]);
            if slot >= cycle.len() {
                // Crowded receptacle: stack further `near` placements outward.
                d.offset = Some([0.0, 0.1 * (slot / cycle.len()) as f64]);
            }
            plan.free_text.push_str(&format!("place the {} {:?} the {}. ", subject, d.relation, receptacles[r]));
            plan.directives.push(d);
        }
        plan.free_text = plan.free_text.trim_end().to_lowercase();
        Ok(plan)
    }
}

/// Applies a plan to a copy of the source scene analytically and renders it, so the
/// target image has an exactly known configuration.
#[derive(Debug, Clone)]
pub struct SyntheticInpainter {
    pub catalog: Arc<AssetCatalog>,
    pub scene: SceneConfiguration,
    pub mapping: PixelMapping,
}

impl SyntheticInpainter {
    pub fn new(catalog: Arc<AssetCatalog>, scene: SceneConfiguration, mapping: PixelMapping) -> Self {
        Self { catalog, scene, mapping }
    }

    /// Configuration that the target image depicts.
    pub fn target_scene(&self, plan: &LayoutPlan) -> Result<SceneConfiguration, ProviderError> {
        plan.validate(&self.scene)?;
        let mut out = self.scene.clone();
        let table = out.workspace.table_height;
        for d in &plan.directives {
            let si = out.index_of(&d.subject_id).expect("validated");
            let ri = out.index_of(&d.reference_id).expect("validated");
            let asset = self
                .catalog
                .get(&d.subject_id)
                .ok_or_else(|| ProviderError::Validation(format!("unknown asset `{}`", d.subject_id)))?;
            let yaw = out.objects[si].yaw() + d.rotate_deg.unwrap_or(0.0).to_radians();
            // Half extents at the new yaw.
            let local = crate::assets::compute_aabb(asset, &Pose::from_xyz_yaw([0.0; 3], yaw));
            let sh = local.half_extents();
            let rb = *out.objects[ri].aabb();
            let rc = out.objects[ri].position2();
            let (xy, z) = match d.relation {
                Relation::On => (rc, rb.max[2] + sh[2]),
                Relation::Beside | Relation::RightOf => ([rb.max[0] + sh[0] + SIDE_CLEARANCE, rc[1]], table + sh[2]),
                Relation::LeftOf => ([rb.min[0] - sh[0] - SIDE_CLEARANCE, rc[1]], table + sh[2]),
                Relation::Near => ([rc[0], rb.max[1] + sh[1] + SIDE_CLEARANCE], table + sh[2]),
            };
            let off = d.offset.unwrap_or([0.0, 0.0]);
            let pose = Pose::from_xyz_yaw([xy[0] + off[0], xy[1] + off[1], z], yaw);
            out.objects[si].set_pose(asset, pose);
        }
        Ok(out)
    }
}

impl Inpainter for SyntheticInpainter {
    fn inpaint(&self, src: &TopViewRaster, plan: &LayoutPlan) -> Result<TopViewRaster, ProviderError> {
        if plan.directives.is_empty() {
            return Ok(src.clone());
        }
        let target = self.target_scene(plan)?;
        render_topview(&target, &self.catalog, &self.mapping).map_err(|e| ProviderError::Failed(e.to_string()))
    }
}

/// Returns the footprint boxes of a known configuration, labelled with asset names.
///
/// With `jitter_px > 0` each box edge moves independently by a seeded uniform draw
/// in `[-jitter_px, jitter_px]`. Detections come back in reading order (top to
/// bottom, then left to right), not scene order.
#[derive(Debug, Clone)]
pub struct GroundTruthDetector {
    pub catalog: Arc<AssetCatalog>,
    pub scene: SceneConfiguration,
    pub mapping: PixelMapping,
    pub jitter_px: f64,
    pub seed: u64,
}

impl Detector for GroundTruthDetector {
    fn detect(&self, _img: &TopViewRaster, labels: &[String]) -> Result<Vec<Detection>, ProviderError> {
        let mut rng = seed::stream_rng(self.seed, seed::stream::DETECTOR, 0);
        let mut out = Vec::new();
        for obj in &self.scene.objects {
            let name = self.catalog.get(&obj.asset_id).map(|a| a.name.clone()).unwrap_or_else(|| obj.asset_id.clone());
            let bb = obj.aabb();
            let mut b = footprint_box(&self.mapping, [bb.min[0], bb.min[1]], [bb.max[0], bb.max[1]]);
            if self.jitter_px > 0.0 {
                let j = self.jitter_px;
                b.x0 += rng.gen_range(-j..=j);
                b.y0 += rng.gen_range(-j..=j);
                b.x1 += rng.gen_range(-j..=j);
                b.y1 += rng.gen_range(-j..=j);
            }
            if !labels.contains(&name) {
                continue;
            }
            let b = b.clipped(self.mapping.width, self.mapping.height);
            if b.width() <= 0.0 || b.height() <= 0.0 {
                continue;
            }
            out.push(Detection {
                label: name,
                bbox: b,
                score: 1.0,
            });
        }
        out.sort_by(|a, b| {
            (a.bbox.y0, a.bbox.x0)
                .partial_cmp(&(b.bbox.y0, b.bbox.x0))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(out)
    }
}

/// Unit-normalized joint color histogram with `levels` bins per channel.
#[derive(Debug, Clone)]
pub struct HistogramFeatures {
    pub levels: usize,
}

impl Default for HistogramFeatures {
    fn default() -> Self {
        Self { levels: 4 }
    }
}

impl FeatureExtractor for HistogramFeatures {
    fn extract(&self, crop: &TopViewRaster) -> Result<FeatureVector, ProviderError> {
        if crop.is_empty() {
            return Err(ProviderError::EmptyCrop);
        }
        let l = self.levels;
        let mut hist = vec![0.0; l * l * l];
        let bin = |v: u8| (v as usize * l) / 256;
        for p in crop.pixels().chunks_exact(3) {
            hist[(bin(p[0]) * l + bin(p[1])) * l + bin(p[2])] += 1.0;
        }
        Ok(FeatureVector::normalized(hist))
    }
}

/// Labels the detector is prompted with: asset names of the scene, in scene order.
pub fn prompt_labels(scene: &SceneConfiguration, catalog: &AssetCatalog) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for o in &scene.objects {
        let name = catalog.get(&o.asset_id).map(|a| a.name.clone()).unwrap_or_else(|| o.asset_id.clone());
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

/// Pixel box of an object's footprint in a scene.
pub fn object_box(scene: &SceneConfiguration, index: usize, m: &PixelMapping) -> PixelBox {
    let bb = scene.objects[index].aabb();
    footprint_box(m, [bb.min[0], bb.min[1]], [bb.max[0], bb.max[1]])
}

pub fn background_color() -> [u8; 3] {
    topview::BACKGROUND
}
