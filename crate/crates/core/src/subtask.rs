//! Pick-and-place sub-task enumeration and script instantiation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{Aabb, AssetCatalog, AssetRecord, Pose};
use crate::layout_opt::assign_containers;
use crate::math::Vec3;
use crate::scene::{aabb_overlap, SceneConfiguration};

pub const SUBTASK_SCHEMA: &str = "vcage-subtask/1";
/// Slack added around the source box when building the success region.
pub const SUCCESS_TOLERANCE: f64 = 0.02;
pub const LIFT_HEIGHT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SubTaskError {
    #[error("unknown object: {0}")]
    UnknownObject(String),
    #[error("malformed script: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessSpec {
    pub object_id: String,
    pub region: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTaskInstance {
    pub source_id: String,
    pub target_id: String,
    pub source_index: usize,
    pub target_index: usize,
    pub contact_point_world: Vec3,
    pub functional_point_world: Vec3,
    pub description: String,
    pub success_spec: SuccessSpec,
}

/// Decides whether `target` can sensibly receive `source`.
pub trait CompatibilityPredicate: Send + Sync {
    fn compatible(&self, source: &AssetRecord, target: &AssetRecord) -> bool;
}

/// Target must be a receptacle with at least the source's footprint area.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReceptacleRule;

impl CompatibilityPredicate for ReceptacleRule {
    fn compatible(&self, source: &AssetRecord, target: &AssetRecord) -> bool {
        let area = |a: &AssetRecord| 4.0 * a.half_extents[0] * a.half_extents[1];
        target.receptacle && area(target) >= area(source)
    }
}

fn asset_of<'a>(scene: &SceneConfiguration, catalog: &'a AssetCatalog, i: usize) -> Result<&'a AssetRecord, SubTaskError> {
    let id = &scene.objects[i].asset_id;
    catalog.get(id).ok_or_else(|| SubTaskError::UnknownObject(id.clone()))
}

/// Objects whose box interpenetrates a non-exempt neighbour. Such an object is
/// buried or clipped and neither graspable nor usable as a receptacle.
pub fn obstructed(scene: &SceneConfiguration, catalog: &AssetCatalog) -> Vec<bool> {
    let exempt = assign_containers(scene, catalog).map(|f| f.exempt_pairs()).unwrap_or_default();
    let n = scene.len();
    let mut out = vec![false; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if exempt.contains(&(i, j)) {
                continue;
            }
            if aabb_overlap(scene.objects[i].aabb(), scene.objects[j].aabb()) {
                out[i] = true;
                out[j] = true;
            }
        }
    }
    out
}

fn success_region(functional: Vec3, source_box: &Aabb) -> Aabb {
    let h = source_box.half_extents();
    let r = [h[0] + SUCCESS_TOLERANCE, h[1] + SUCCESS_TOLERANCE, h[2] + SUCCESS_TOLERANCE];
    Aabb::new(
        [functional[0] - r[0], functional[1] - r[1], functional[2] - r[2]],
        [functional[0] + r[0], functional[1] + r[1], functional[2] + r[2]],
    )
}

fn build_instance(scene: &SceneConfiguration, s: usize, t: usize, src: &AssetRecord, tgt: &AssetRecord) -> SubTaskInstance {
    let sp: &Pose = scene.objects[s].pose();
    let tp: &Pose = scene.objects[t].pose();
    let contact = sp.transform_point(src.contact_points[0]);
    let functional = tp.transform_point(tgt.functional_points[0]);
    SubTaskInstance {
        source_id: scene.objects[s].asset_id.clone(),
        target_id: scene.objects[t].asset_id.clone(),
        source_index: s,
        target_index: t,
        contact_point_world: contact,
        functional_point_world: functional,
        description: format!("place the {} on the {}", src.name, tgt.name),
        success_spec: SuccessSpec {
            object_id: scene.objects[s].asset_id.clone(),
            region: success_region(functional, scene.objects[s].aabb()),
        },
    }
}

/// All executable ordered pairs, in (source index, target index) order.
///
/// A pair is emitted when the source has a contact point, the target a functional
/// point, `compat` accepts it, and neither object is obstructed in this layout.
pub fn enumerate_pick_place(
    scene: &SceneConfiguration,
    catalog: &AssetCatalog,
    compat: &dyn CompatibilityPredicate,
) -> Result<Vec<SubTaskInstance>, SubTaskError> {
    let assets = (0..scene.len()).map(|i| asset_of(scene, catalog, i)).collect::<Result<Vec<_>, _>>()?;
    let blocked = obstructed(scene, catalog);
    let mut out = Vec::new();
    for s in 0..scene.len() {
        if assets[s].contact_points.is_empty() || blocked[s] {
            continue;
        }
        for t in 0..scene.len() {
            if s == t || assets[t].functional_points.is_empty() || blocked[t] {
                continue;
            }
            if compat.compatible(assets[s], assets[t]) {
                out.push(build_instance(scene, s, t, assets[s], assets[t]));
            }
        }
    }
    Ok(out)
}

/// Emitted tasks over all ordered pairs; zero for scenes with fewer than two objects.
pub fn valid_task_ratio(scene: &SceneConfiguration, emitted: usize) -> f64 {
    let n = scene.len();
    if n < 2 {
        return 0.0;
    }
    emitted as f64 / (n * (n - 1)) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum Action {
    MoveAbove { point: Vec3 },
    Grasp,
    Lift { delta: Vec3 },
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupEntry {
    pub asset_id: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTaskScript {
    pub schema: String,
    pub description: String,
    pub source_id: String,
    pub target_id: String,
    pub setup: Vec<SetupEntry>,
    pub actions: Vec<Action>,
    pub success_spec: SuccessSpec,
}

impl SubTaskScript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SubTaskError> {
        let s: SubTaskScript = serde_json::from_str(text).map_err(|e| SubTaskError::Parse(e.to_string()))?;
        if s.schema != SUBTASK_SCHEMA {
            return Err(SubTaskError::Parse(format!("unexpected schema {:?}", s.schema)));
        }
        Ok(s)
    }
}

pub fn instantiate_script(st: &SubTaskInstance, scene: &SceneConfiguration) -> Result<SubTaskScript, SubTaskError> {
    for (idx, id) in [(st.source_index, &st.source_id), (st.target_index, &st.target_id)] {
        if scene.objects.get(idx).map(|o| &o.asset_id) != Some(id) {
            return Err(SubTaskError::UnknownObject(id.clone()));
        }
    }
    Ok(SubTaskScript {
        schema: SUBTASK_SCHEMA.into(),
        description: st.description.clone(),
        source_id: st.source_id.clone(),
        target_id: st.target_id.clone(),
        setup: scene
            .objects
            .iter()
            .map(|o| SetupEntry { asset_id: o.asset_id.clone(), pose: *o.pose() })
            .collect(),
        actions: vec![
            Action::MoveAbove { point: st.contact_point_world },
            Action::Grasp,
            Action::Lift { delta: [0.0, 0.0, LIFT_HEIGHT] },
            Action::MoveAbove { point: st.functional_point_world },
            Action::Release,
        ],
        success_spec: st.success_spec.clone(),
    })
}
