//! Scene metadata and collision-free initial placement.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{compute_aabb, Aabb, AssetCatalog, AssetRecord, Pose};
use crate::math::{rotated_half_extents, Quat, Vec2, Vec3};
use crate::seed;

pub const SCENE_SCHEMA: &str = "vcage-scene/1";
pub const DEFAULT_MAX_ATTEMPTS: u32 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("object {object_index} could not be placed without collision")]
    PlacementInfeasible { object_index: usize },
    #[error("asset `{asset_id}` does not fit the workspace at any yaw")]
    ObjectTooLarge { asset_id: String },
    #[error("invalid workspace: {0}")]
    InvalidWorkspace(String),
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
    #[error("malformed scene document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Vec2,
    pub max: Vec2,
    pub table_height: f64,
}

impl Workspace {
    pub fn new(min: Vec2, max: Vec2, table_height: f64) -> Result<Self, SceneError> {
        let ws = Self {
            min,
            max,
            table_height,
        };
        ws.validate()?;
        Ok(ws)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(0..2).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a]) {
            return Err(SceneError::InvalidWorkspace(format!(
                "min {:?} must be strictly below max {:?}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn extent(&self) -> Vec2 {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn area(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1]
    }

    pub fn contains_footprint(&self, bb: &Aabb, tol: f64) -> bool {
        (0..2).all(|a| bb.min[a] >= self.min[a] - tol && bb.max[a] <= self.max[a] + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Refined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub asset_id: String,
    pose: Pose,
    aabb: Aabb,
}

impl ObjectInstance {
    pub fn new(asset: &AssetRecord, pose: Pose) -> Self {
        Self {
            asset_id: asset.id.clone(),
            aabb: compute_aabb(asset, &pose),
            pose,
        }
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn set_pose(&mut self, asset: &AssetRecord, pose: Pose) {
        debug_assert_eq!(asset.id, self.asset_id);
        self.pose = pose;
        self.aabb = compute_aabb(asset, &pose);
    }

    pub fn position2(&self) -> Vec2 {
        [self.pose.position[0], self.pose.position[1]]
    }

    pub fn yaw(&self) -> f64 {
        self.pose.orientation.yaw()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfiguration {
    pub workspace: Workspace,
    pub objects: Vec<ObjectInstance>,
    pub rng_seed: u64,
    pub stage: Stage,
}

#[derive(Serialize, Deserialize)]
struct SceneObjectDoc {
    asset_id: String,
    position: Vec3,
    quaternion: Quat,
}

#[derive(Serialize, Deserialize)]
struct SceneDocument {
    schema: String,
    workspace: Workspace,
    seed: u64,
    stage: Stage,
    objects: Vec<SceneObjectDoc>,
}

impl SceneConfiguration {
    pub fn empty(workspace: Workspace, rng_seed: u64) -> Self {
        Self {
            workspace,
            objects: Vec::new(),
            rng_seed,
            stage: Stage::Initial,
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn index_of(&self, asset_id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.asset_id == asset_id)
    }

    /// Move object `index` to a new pose, refreshing its box.
    pub fn set_pose(&mut self, catalog: &AssetCatalog, index: usize, pose: Pose) -> Result<(), SceneError> {
        let obj = &mut self.objects[index];
        let asset = catalog
            .get(&obj.asset_id)
            .ok_or_else(|| SceneError::UnknownAsset(obj.asset_id.clone()))?;
        obj.set_pose(asset, pose);
        Ok(())
    }

    /// AABBs are not part of the document; they are recomputed on load.
    pub fn to_json(&self) -> String {
        let doc = SceneDocument {
            schema: SCENE_SCHEMA.into(),
            workspace: self.workspace,
            seed: self.rng_seed,
            stage: self.stage,
            objects: self
                .objects
                .iter()
                .map(|o| SceneObjectDoc {
                    asset_id: o.asset_id.clone(),
                    position: o.pose.position,
                    quaternion: o.pose.orientation,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("scene serializes")
    }

    pub fn from_json(text: &str, catalog: &AssetCatalog) -> Result<Self, SceneError> {
        let doc: SceneDocument = serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        if doc.schema != SCENE_SCHEMA {
            return Err(SceneError::Parse(format!("unsupported schema `{}`", doc.schema)));
        }
        doc.workspace.validate()?;
        let objects = doc
            .objects
            .into_iter()
            .map(|o| {
                let asset = catalog
                    .get(&o.asset_id)
                    .ok_or_else(|| SceneError::UnknownAsset(o.asset_id.clone()))?;
                if !o.quaternion.is_unit() {
                    return Err(SceneError::Parse(format!("non-unit quaternion for `{}`", o.asset_id)));
                }
                Ok(ObjectInstance::new(asset, Pose::new(o.position, o.quaternion)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            workspace: doc.workspace,
            objects,
            rng_seed: doc.seed,
            stage: doc.stage,
        })
    }
}

/// Strict interval overlap on all three axes; touching faces do not overlap.
pub fn aabb_overlap(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|k| a.min[k] < b.max[k] && b.min[k] < a.max[k])
}

/// Whether some yaw lets the asset's footprint fit inside the workspace.
fn fits_at_some_yaw(asset: &AssetRecord, ws: &Workspace) -> bool {
    const STEPS: usize = 720;
    let ext = ws.extent();
    (0..=STEPS).any(|i| {
        let yaw = FRAC_PI_2 * i as f64 / STEPS as f64;
        let h = rotated_half_extents(asset.half_extents[0], asset.half_extents[1], yaw);
        2.0 * h[0] <= ext[0] && 2.0 * h[1] <= ext[1]
    })
}

fn resting_pose(asset: &AssetRecord, ws: &Workspace, xy: Vec2, yaw: f64) -> Pose {
    Pose::from_xyz_yaw([xy[0], xy[1], ws.table_height + asset.half_extents[2]], yaw)
}

/// Sequential rejection sampling of upright, yaw-only poses.
///
/// Each object gets up to `max_attempts_per_object` draws; a draw is rejected when
/// the yaw leaves no room in the workspace or the box overlaps an earlier object.
pub fn sample_initial_layout(
    assets: &[AssetRecord],
    workspace: Workspace,
    seed: u64,
    max_attempts_per_object: u32,
) -> Result<SceneConfiguration, SceneError> {
    workspace.validate()?;
    if let Some(big) = assets.iter().find(|a| !fits_at_some_yaw(a, &workspace)) {
        return Err(SceneError::ObjectTooLarge {
            asset_id: big.id.clone(),
        });
    }
    let mut rng = seed::stream_rng(seed, seed::stream::LAYOUT, 0);
    let mut scene = SceneConfiguration::empty(workspace, seed);
    for (index, asset) in assets.iter().enumerate() {
        let mut placed = None;
        for _ in 0..max_attempts_per_object.max(1) {
            let yaw = rng.gen_range(0.0..TAU);
            // Offsets of the rotated box relative to its center.
            let local = compute_aabb(asset, &Pose::from_xyz_yaw([0.0; 3], yaw));
            let lo = [workspace.min[0] - local.min[0], workspace.min[1] - local.min[1]];
            let hi = [workspace.max[0] - local.max[0], workspace.max[1] - local.max[1]];
            if lo[0] > hi[0] || lo[1] > hi[1] {
                continue;
            }
            let xy = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
            let candidate = ObjectInstance::new(asset, resting_pose(asset, &workspace, xy, yaw));
            if !workspace.contains_footprint(candidate.aabb(), 0.0) {
                continue;
            }
            if scene.objects.iter().any(|o| aabb_overlap(o.aabb(), candidate.aabb())) {
                continue;
            }
            placed = Some(candidate);
            break;
        }
        match placed {
            Some(obj) => scene.objects.push(obj),
            None => return Err(SceneError::PlacementInfeasible { object_index: index }),
        }
    }
    Ok(scene)
}

/// Uniform placement with no collision check: the clutter-prone baseline layout.
pub fn sample_random_layout(
    assets: &[AssetRecord],
    workspace: Workspace,
    seed: u64,
) -> Result<SceneConfiguration, SceneError> {
    workspace.validate()?;
    let mut rng = seed::stream_rng(seed, seed::stream::LAYOUT, 1);
    let mut scene = SceneConfiguration::empty(workspace, seed);
    for asset in assets {
        if !fits_at_some_yaw(asset, &workspace) {
            return Err(SceneError::ObjectTooLarge {
                asset_id: asset.id.clone(),
            });
        }
        loop {
            let yaw = rng.gen_range(0.0..TAU);
            let local = compute_aabb(asset, &Pose::from_xyz_yaw([0.0; 3], yaw));
            let lo = [workspace.min[0] - local.min[0], workspace.min[1] - local.min[1]];
            let hi = [workspace.max[0] - local.max[0], workspace.max[1] - local.max[1]];
            if lo[0] > hi[0] || lo[1] > hi[1] {
                continue;
            }
            let xy = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
            scene
                .objects
                .push(ObjectInstance::new(asset, resting_pose(asset, &workspace, xy, yaw)));
            break;
        }
    }
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub n: usize,
    pub footprint_area: f64,
    pub density: f64,
    /// Smallest horizontal distance between two footprints; `None` below two objects.
    pub min_gap: Option<f64>,
}

/// Horizontal separation distance of two footprints (0 when they touch or overlap).
pub fn footprint_gap(a: &Aabb, b: &Aabb) -> f64 {
    let d = [0, 1].map(|k| (a.min[k] - b.max[k]).max(b.min[k] - a.max[k]).max(0.0));
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

pub fn scene_stats(scene: &SceneConfiguration) -> SceneStats {
    let footprint_area: f64 = scene.objects.iter().map(|o| o.aabb().footprint_area()).sum();
    let mut min_gap: Option<f64> = None;
    for (i, a) in scene.objects.iter().enumerate() {
        for b in &scene.objects[i + 1..] {
            let g = footprint_gap(a.aabb(), b.aabb());
            min_gap = Some(min_gap.map_or(g, |m| m.min(g)));
        }
    }
    SceneStats {
        n: scene.len(),
        footprint_area,
        density: footprint_area / scene.workspace.area(),
        min_gap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Overlap(usize, usize),
    OutOfWorkspace(usize),
}

/// Check the scene invariants: no overlapping non-exempt pair and every footprint
/// inside the workspace (up to `tol`).
pub fn violations(scene: &SceneConfiguration, exempt: &BTreeSet<(usize, usize)>, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, a) in scene.objects.iter().enumerate() {
        if !scene.workspace.contains_footprint(a.aabb(), tol) {
            out.push(Violation::OutOfWorkspace(i));
        }
        for (j, b) in scene.objects.iter().enumerate().skip(i + 1) {
            if exempt.contains(&(i, j)) || exempt.contains(&(j, i)) {
                continue;
            }
            if aabb_overlap(a.aabb(), b.aabb()) {
                out.push(Violation::Overlap(i, j));
            }
        }
    }
    out
}
