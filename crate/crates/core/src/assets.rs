//! Asset catalog and pose-dependent bounding boxes.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{add3, Quat, Vec3};

pub const CATALOG_SCHEMA: &str = "vcage-catalog/1";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalog: {0}")]
    Parse(String),
    #[error("invalid asset `{asset}` ({field}): {reason}")]
    Validation {
        asset: String,
        field: &'static str,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub category: String,
    pub half_extents: Vec3,
    #[serde(default)]
    pub contact_points: Vec<Vec3>,
    #[serde(default)]
    pub functional_points: Vec<Vec3>,
    #[serde(default)]
    pub receptacle: bool,
}

impl AssetRecord {
    /// Local box volume.
    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents[0] * self.half_extents[1] * self.half_extents[2]
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let fail = |field, reason: &str| CatalogError::Validation {
            asset: self.id.clone(),
            field,
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(fail("id", "empty id"));
        }
        if !self.half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
            return Err(fail("half_extents", "nonpositive extent"));
        }
        let inflated = self.half_extents.map(|h| h * 1.1);
        let inside = |p: &Vec3| (0..3).all(|a| p[a].is_finite() && p[a].abs() <= inflated[a]);
        if !self.contact_points.iter().all(inside) {
            return Err(fail("contact_points", "point outside the inflated local box"));
        }
        if !self.functional_points.iter().all(inside) {
            return Err(fail("functional_points", "point outside the inflated local box"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogDocument {
    schema: String,
    assets: Vec<AssetRecord>,
}

/// Validated, immutable asset library.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssetCatalog {
    assets: Vec<AssetRecord>,
}

impl AssetCatalog {
    pub fn new(assets: Vec<AssetRecord>) -> Result<Self, CatalogError> {
        let mut seen = HashSet::new();
        for asset in &assets {
            asset.validate()?;
            if !seen.insert(asset.id.as_str()) {
                return Err(CatalogError::Validation {
                    asset: asset.id.clone(),
                    field: "id",
                    reason: "duplicate id".into(),
                });
            }
        }
        Ok(Self { assets })
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let doc: CatalogDocument =
            serde_json::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        if doc.schema != CATALOG_SCHEMA {
            return Err(CatalogError::Parse(format!(
                "unsupported schema `{}`, expected `{CATALOG_SCHEMA}`",
                doc.schema
            )));
        }
        Self::new(doc.assets)
    }

    pub fn to_json(&self) -> String {
        let doc = CatalogDocument {
            schema: CATALOG_SCHEMA.into(),
            assets: self.assets.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn assets(&self) -> &[AssetRecord] {
        &self.assets
    }

    pub fn get(&self, id: &str) -> Option<&AssetRecord> {
        self.assets.iter().find(|a| a.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AssetRecord> {
        self.assets.iter()
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<AssetCatalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    AssetCatalog::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_xyz_yaw(position: Vec3, yaw: f64) -> Self {
        Self::new(position, Quat::from_yaw(yaw))
    }

    pub fn transform_point(&self, local: Vec3) -> Vec3 {
        add3(self.orientation.rotate(local), self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn center(&self) -> Vec3 {
        [0, 1, 2].map(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    pub fn half_extents(&self) -> Vec3 {
        [0, 1, 2].map(|a| 0.5 * (self.max[a] - self.min[a]))
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.max[a] - self.min[a]).product()
    }

    pub fn footprint_area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// `other` lies inside `self` (closed).
    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    /// Horizontal footprint of `other` lies inside the footprint of `self`.
    pub fn contains_footprint(&self, other: &Aabb) -> bool {
        (0..2).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn translated(&self, d: Vec3) -> Aabb {
        Aabb::new(add3(self.min, d), add3(self.max, d))
    }
}

/// World-frame box enclosing the eight transformed corners of the asset's local box.
pub fn compute_aabb(asset: &AssetRecord, pose: &Pose) -> Aabb {
    let h = asset.half_extents;
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for i in 0..8 {
        let corner = [
            if i & 1 == 0 { -h[0] } else { h[0] },
            if i & 2 == 0 { -h[1] } else { h[1] },
            if i & 4 == 0 { -h[2] } else { h[2] },
        ];
        let w = pose.transform_point(corner);
        for a in 0..3 {
            min[a] = min[a].min(w[a]);
            max[a] = max[a].max(w[a]);
        }
    }
    Aabb { min, max }
}
