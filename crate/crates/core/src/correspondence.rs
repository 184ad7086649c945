//! Source ↔ target object correspondence for inpainted layouts.
//!
//! Features of the known source crops are matched greedily against target
//! detections; leftovers get a name-plus-feature fallback; matched boxes are mapped
//! back to world coordinates and a yaw change is read off by rotating the target
//! crop over an angle grid and maximizing NCC against the source crop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetCatalog;
use crate::math::Vec2;
use crate::providers::{self, object_box, Detection, Detector, FeatureExtractor, FeatureVector, ProviderError};
use crate::scene::SceneConfiguration;
use crate::topview::{self, crop, pixel_to_world, PixelMapping, RasterError, TopViewRaster};

pub const MATCHES_SCHEMA: &str = "vcage-matches/1";

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("crop is empty")]
    EmptyCrop,
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl From<RasterError> for MatchError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::EmptyCrop => MatchError::EmptyCrop,
            other => MatchError::Provider(ProviderError::Failed(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub tau: f64,
    pub name_weight: f64,
    pub angle_grid: Vec<f64>,
    pub fallback_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            name_weight: 0.5,
            angle_grid: (0..24).map(|k| 15.0 * k as f64).collect(),
            fallback_threshold: 0.6,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.angle_grid.is_empty() || self.angle_grid.iter().any(|a| !(0.0..360.0).contains(a)) {
            return Err(MatchError::InvalidConfig("angle grid must be nonempty and within [0, 360)".into()));
        }
        if !(-1.0..=1.0).contains(&self.tau)
            || !(0.0..=1.0).contains(&self.name_weight)
            || !(0.0..=1.0).contains(&self.fallback_threshold)
        {
            return Err(MatchError::InvalidConfig("threshold or weight out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Feature,
    NameFallback,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source_index: usize,
    pub detection_index: Option<usize>,
    pub similarity: f64,
    pub method: MatchMethod,
    pub world_position: Option<Vec2>,
    pub rotation_deg: Option<f64>,
    pub ncc_score: Option<f64>,
}

impl Correspondence {
    fn unmatched(source_index: usize, similarity: f64) -> Self {
        Self {
            source_index,
            detection_index: None,
            similarity,
            method: MatchMethod::Unmatched,
            world_position: None,
            rotation_deg: None,
            ncc_score: None,
        }
    }

    pub fn is_matched(&self) -> bool {
        self.detection_index.is_some()
    }
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64, MatchError> {
    if a.dim() != b.dim() {
        return Err(MatchError::DimensionMismatch(a.dim(), b.dim()));
    }
    let d: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(d.clamp(-1.0, 1.0))
}

fn similarity_matrix(src: &[FeatureVector], tgt: &[FeatureVector]) -> Result<Vec<Vec<f64>>, MatchError> {
    src.iter()
        .map(|s| tgt.iter().map(|t| cosine_similarity(s, t)).collect())
        .collect()
}

/// Greedy assignment over a precomputed similarity matrix (`sim[source][target]`).
pub fn greedy_match_matrix(sim: &[Vec<f64>], tau: f64) -> Vec<Correspondence> {
    let n_tgt = sim.first().map_or(0, Vec::len);
    let mut taken = vec![false; n_tgt];
    sim.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &s) in row.iter().enumerate() {
                if taken[j] || s < tau {
                    continue;
                }
                if best.map_or(true, |(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
            match best {
                Some((j, s)) => {
                    taken[j] = true;
                    Correspondence {
                        source_index: i,
                        detection_index: Some(j),
                        similarity: s,
                        method: MatchMethod::Feature,
                        world_position: None,
                        rotation_deg: None,
                        ncc_score: None,
                    }
                }
                None => Correspondence::unmatched(i, row.iter().copied().fold(0.0, f64::max)),
            }
        })
        .collect()
}

/// For each source in order, take the most similar unclaimed target at or above τ.
pub fn greedy_match(src: &[FeatureVector], tgt: &[FeatureVector], cfg: &MatchConfig) -> Result<Vec<Correspondence>, MatchError> {
    Ok(greedy_match_matrix(&similarity_matrix(src, tgt)?, cfg.tau))
}

fn squashed(s: &str) -> Vec<char> {
    s.split(|c: char| !c.is_alphanumeric())
        .flat_map(|t| t.to_lowercase().chars().collect::<Vec<_>>())
        .collect()
}

/// Longest-common-subsequence length over the lowercased alphanumeric characters,
/// divided by the longer string's length.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (squashed(a), squashed(b));
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    for ca in &a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()] as f64 / longest as f64
}

/// Second chance for unmatched sources: score every unclaimed detection by
/// `w·string_sim + (1−w)·max(0, cosine)` and accept the best one above threshold.
pub fn name_fallback(
    matches: &[Correspondence],
    src_names: &[String],
    src_feats: &[FeatureVector],
    detections: &[Detection],
    tgt_feats: &[FeatureVector],
    cfg: &MatchConfig,
) -> Result<Vec<Correspondence>, MatchError> {
    let mut out = matches.to_vec();
    let mut taken = vec![false; detections.len()];
    for m in &out {
        if let Some(j) = m.detection_index {
            taken[j] = true;
        }
    }
    for m in out.iter_mut().filter(|m| !m.is_matched()) {
        let i = m.source_index;
        let mut best: Option<(usize, f64)> = None;
        for (j, det) in detections.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let cos = cosine_similarity(&src_feats[i], &tgt_feats[j])?.max(0.0);
            let score = cfg.name_weight * string_similarity(&src_names[i], &det.label) + (1.0 - cfg.name_weight) * cos;
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        if let Some((j, score)) = best {
            if score >= cfg.fallback_threshold {
                taken[j] = true;
                m.detection_index = Some(j);
                m.similarity = score;
                m.method = MatchMethod::NameFallback;
            }
        }
    }
    Ok(out)
}

/// Zero-mean normalized cross-correlation of the luma channels. Inputs of different
/// size are both resampled (bilinear) to the smaller width and height. Zero when
/// either side has no variance.
pub fn ncc(a: &TopViewRaster, b: &TopViewRaster) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let w = a.width().min(b.width());
    let h = a.height().min(b.height());
    let ga = a.resize_bilinear(w, h).grayscale();
    let gb = b.resize_bilinear(w, h).grayscale();
    let n = ga.len() as f64;
    let ma = ga.iter().sum::<f64>() / n;
    let mb = gb.iter().sum::<f64>() / n;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ga.iter().zip(&gb) {
        let (dx, dy) = (x - ma, y - mb);
        num += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 1e-12 || vb <= 1e-12 {
        return 0.0;
    }
    (num / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Center-crop or pad (with `fill`) to exactly `width × height`.
fn fit_center(img: &TopViewRaster, width: u32, height: u32, fill: [u8; 3]) -> TopViewRaster {
    let mut out = TopViewRaster::filled(width, height, fill);
    let ox = (img.width() as i64 - width as i64) / 2;
    let oy = (img.height() as i64 - height as i64) / 2;
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let (sx, sy) = (x + ox, y + oy);
            if sx >= 0 && sy >= 0 && sx < img.width() as i64 && sy < img.height() as i64 {
                out.set(x as u32, y as u32, img.get(sx as u32, sy as u32));
            }
        }
    }
    out
}

/// Yaw change (degrees, counter-clockwise) that turns the source crop into the
/// target crop: the target is rotated back by each grid angle, re-framed at the
/// source crop's size, and scored with NCC. Ties go to the smallest angle.
pub fn estimate_rotation(src_crop: &TopViewRaster, tgt_crop: &TopViewRaster, cfg: &MatchConfig) -> Result<(f64, f64), MatchError> {
    if src_crop.is_empty() || tgt_crop.is_empty() {
        return Err(MatchError::EmptyCrop);
    }
    let mut grid = cfg.angle_grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &angle in &grid {
        let back = tgt_crop.rotated(-angle, topview::BACKGROUND);
        let framed = fit_center(&back, src_crop.width(), src_crop.height(), topview::BACKGROUND);
        let score = ncc(src_crop, &framed);
        if score > best.1 {
            best = (angle, score);
        }
    }
    Ok(best)
}

pub fn recover_world_coords(matches: &[Correspondence], detections: &[Detection], m: &PixelMapping) -> Vec<Correspondence> {
    matches
        .iter()
        .cloned()
        .map(|mut c| {
            if let Some(j) = c.detection_index {
                c.world_position = Some(pixel_to_world(m, detections[j].bbox.center()));
            }
            c
        })
        .collect()
}

/// The detector and feature roles used by [`match_scene`].
pub struct VisionProviders<'a> {
    pub detector: &'a dyn Detector,
    pub features: &'a dyn FeatureExtractor,
}

#[derive(Debug, Clone)]
pub struct SceneMatch {
    pub correspondences: Vec<Correspondence>,
    pub detections: Vec<Detection>,
}

pub fn match_scene(
    src_scene: &SceneConfiguration,
    catalog: &AssetCatalog,
    src_img: &TopViewRaster,
    tgt_img: &TopViewRaster,
    providers: &VisionProviders<'_>,
    m: &PixelMapping,
    cfg: &MatchConfig,
) -> Result<SceneMatch, MatchError> {
    cfg.validate()?;
    if src_scene.is_empty() {
        return Ok(SceneMatch { correspondences: Vec::new(), detections: Vec::new() });
    }
    let labels = providers::prompt_labels(src_scene, catalog);
    let detections = providers::detect(providers.detector, tgt_img, &labels)?;
    let src_crops = (0..src_scene.len())
        .map(|i| crop(src_img, &object_box(src_scene, i, m)))
        .collect::<Result<Vec<_>, _>>()?;
    let tgt_crops = detections
        .iter()
        .map(|d| crop(tgt_img, &d.bbox))
        .collect::<Result<Vec<_>, _>>()?;
    let extract = |c: &TopViewRaster| providers::extract_feature(providers.features, c);
    let (src_feats, tgt_feats) = if providers.features.serial() {
        (
            src_crops.iter().map(extract).collect::<Result<Vec<_>, _>>()?,
            tgt_crops.iter().map(extract).collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        (
            src_crops.par_iter().map(extract).collect::<Result<Vec<_>, _>>()?,
            tgt_crops.par_iter().map(extract).collect::<Result<Vec<_>, _>>()?,
        )
    };
    let src_names: Vec<String> = src_scene
        .objects
        .iter()
        .map(|o| catalog.get(&o.asset_id).map(|a| a.name.clone()).unwrap_or_else(|| o.asset_id.clone()))
        .collect();
    let matches = greedy_match(&src_feats, &tgt_feats, cfg)?;
    let matches = name_fallback(&matches, &src_names, &src_feats, &detections, &tgt_feats, cfg)?;
    let matches = recover_world_coords(&matches, &detections, m);
    let correspondences = matches
        .into_par_iter()
        .map(|mut c| {
            if let Some(j) = c.detection_index {
                let (deg, score) = estimate_rotation(&src_crops[c.source_index], &tgt_crops[j], cfg)?;
                c.rotation_deg = Some(deg);
                c.ncc_score = Some(score);
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>, MatchError>>()?;
    Ok(SceneMatch { correspondences, detections })
}

#[derive(Serialize, Deserialize)]
struct MatchEntry {
    asset_id: String,
    method: MatchMethod,
    similarity: f64,
    world_position: Option<Vec2>,
    rotation_deg: Option<f64>,
    ncc_score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatchesDocument {
    schema: String,
    objects: Vec<MatchEntry>,
}

pub fn matches_to_json(scene: &SceneConfiguration, matches: &[Correspondence]) -> String {
    let doc = MatchesDocument {
        schema: MATCHES_SCHEMA.into(),
        objects: matches
            .iter()
            .map(|c| MatchEntry {
                asset_id: scene.objects[c.source_index].asset_id.clone(),
                method: c.method,
                similarity: c.similarity,
                world_position: c.world_position,
                rotation_deg: c.rotation_deg,
                ncc_score: c.ncc_score,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("matches serialize")
}
