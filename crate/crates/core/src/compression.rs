//! Action-aware keyframe selection and perceptual CRF search.
//!
//! Keyframes are the midpoints of gripper-command change runs, the largest
//! action-difference peaks, and the two boundary frames. Each keyframe is pushed
//! through an encode/decode loop and scored by a quality metric; the plan keeps the
//! highest CRF whose worst keyframe loss stays strictly under the threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topview::TopViewRaster;

pub const TRAJ_SCHEMA: &str = "vcage-traj/1";
pub const PLAN_SCHEMA: &str = "vcage-plan/1";
pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_M_PEAKS: usize = 4;
pub const DEFAULT_CRF_RANGE: [u32; 2] = [0, 51];
pub const DEFAULT_ENCODE_TEMPLATE: &str =
    "ffmpeg -y -loglevel error -framerate 30 -i {input} -c:v libx265 -crf {crf} -pix_fmt yuv420p {output}";
pub const DEFAULT_DECODE_TEMPLATE: &str = "ffmpeg -y -loglevel error -i {input} {output}";

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed trajectory at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("codec failed: {0}")]
    Codec(String),
    #[error("metric failed: {0}")]
    Metric(String),
    #[error("no CRF in [{lo}, {hi}] meets the threshold (loss at {lo} is {loss})")]
    NoFeasibleCrf { lo: u32, hi: u32, loss: f64 },
    #[error("invalid compression config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    actions: Vec<Vec<f64>>,
    gripper: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn new(actions: Vec<Vec<f64>>, gripper: Vec<f64>) -> Result<Self, CompressionError> {
        if actions.len() < 2 {
            return Err(CompressionError::DimensionMismatch(format!("need at least 2 frames, got {}", actions.len())));
        }
        if gripper.len() != actions.len() {
            return Err(CompressionError::DimensionMismatch(format!(
                "{} action rows but {} gripper commands",
                actions.len(),
                gripper.len()
            )));
        }
        let a = actions[0].len();
        if let Some(t) = actions.iter().position(|r| r.len() != a) {
            return Err(CompressionError::DimensionMismatch(format!("row {t} has {} columns, expected {a}", actions[t].len())));
        }
        Ok(Self { actions, gripper })
    }

    pub fn frames(&self) -> usize {
        self.actions.len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn gripper(&self) -> &[f64] {
        &self.gripper
    }

    /// Columnar text: a schema comment, `T A`, then one `t a_1 .. a_A gripper` row per frame.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {TRAJ_SCHEMA}\n{} {}\n", self.frames(), self.action_dim());
        for (t, (row, g)) in self.actions.iter().zip(&self.gripper).enumerate() {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, " {v}");
            }
            let _ = writeln!(out, " {g}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CompressionError> {
        let err = |line: usize, reason: String| CompressionError::Parse { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        if first.trim().trim_start_matches('#').trim() != TRAJ_SCHEMA {
            return Err(err(1, format!("expected header '# {TRAJ_SCHEMA}'")));
        }
        let fields = |l: &str| -> Vec<String> {
            l.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(String::from).collect()
        };
        let (ln, dims) = lines.next().ok_or_else(|| err(2, "missing 'T A' line".into()))?;
        let dims = fields(dims);
        let parse_count = |s: &str| s.parse::<usize>().map_err(|e| err(ln + 1, e.to_string()));
        if dims.len() != 2 {
            return Err(err(ln + 1, "expected 'T A'".into()));
        }
        let (t_count, a_count) = (parse_count(&dims[0])?, parse_count(&dims[1])?);
        let mut actions = Vec::with_capacity(t_count);
        let mut gripper = Vec::with_capacity(t_count);
        for (ln, line) in lines {
            let f = fields(line);
            if f.len() != a_count + 2 {
                return Err(err(ln + 1, format!("expected {} columns, got {}", a_count + 2, f.len())));
            }
            let t: usize = f[0].parse().map_err(|_| err(ln + 1, format!("bad frame index {:?}", f[0])))?;
            if t != actions.len() {
                return Err(err(ln + 1, format!("frame index {t} out of sequence")));
            }
            let nums = f[1..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| err(ln + 1, format!("bad number {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            actions.push(nums[..a_count].to_vec());
            gripper.push(nums[a_count]);
        }
        if actions.len() != t_count {
            return Err(CompressionError::DimensionMismatch(format!("header says {t_count} frames, found {}", actions.len())));
        }
        Self::new(actions, gripper)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CompressionError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| CompressionError::Parse { line: 0, reason: e.to_string() })?;
        Self::from_text(&text)
    }
}

/// Sorted, duplicate-free keyframe indices.
pub fn extract_keyframes(traj: &TrajectoryRecord, m_peaks: usize) -> Vec<usize> {
    let t_len = traj.frames();
    let mut keys = vec![0, t_len - 1];

    let g = traj.gripper();
    let mut run: Vec<usize> = Vec::new();
    for t in 1..=t_len {
        if t < t_len && g[t] != g[t - 1] {
            run.push(t);
        } else if !run.is_empty() {
            keys.push(run[(run.len() - 1) / 2]);
            run.clear();
        }
    }

    let a = traj.actions();
    let mut peaks: Vec<(f64, usize)> = (1..t_len)
        .map(|t| {
            let n = a[t].iter().zip(&a[t - 1]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            (n, t)
        })
        .filter(|(n, _)| *n > 0.0)
        .collect();
    peaks.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal).then(x.1.cmp(&y.1)));
    keys.extend(peaks.iter().take(m_peaks).map(|(_, t)| *t));

    keys.sort_unstable();
    keys.dedup();
    keys
}

pub trait Codec: Send + Sync {
    /// Encode one frame at `crf` and decode it back.
    fn roundtrip(&self, frame: &TopViewRaster, crf: u32) -> Result<TopViewRaster, CompressionError>;

    /// Encoded size in bytes of the whole sequence, or `None` when the codec cannot
    /// measure real sizes.
    fn encoded_size(&self, frames: &[TopViewRaster], crf: u32) -> Result<Option<u64>, CompressionError>;
}

pub trait QualityMetric: Send + Sync {
    /// Quality drop of `distorted` against `reference`, in JOD.
    fn loss(&self, reference: &TopViewRaster, distorted: &TopViewRaster, crf: u32) -> Result<f64, CompressionError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodecSpec {
    Synthetic {
        loss_slope: f64,
    },
    External {
        command_template: String,
        #[serde(default = "default_decode_template")]
        decode_template: String,
    },
}

fn default_decode_template() -> String {
    DEFAULT_DECODE_TEMPLATE.into()
}

impl Default for CodecSpec {
    fn default() -> Self {
        CodecSpec::Synthetic { loss_slope: 0.005 }
    }
}

impl CodecSpec {
    pub fn validate(&self) -> Result<(), CompressionError> {
        match self {
            CodecSpec::Synthetic { loss_slope } if !(*loss_slope >= 0.0) => {
                Err(CompressionError::InvalidConfig("loss_slope must be nonnegative".into()))
            }
            CodecSpec::External { command_template, decode_template } => {
                for p in ["{input}", "{output}", "{crf}"] {
                    if !command_template.contains(p) {
                        return Err(CompressionError::InvalidConfig(format!("command template lacks {p}")));
                    }
                }
                for p in ["{input}", "{output}"] {
                    if !decode_template.contains(p) {
                        return Err(CompressionError::InvalidConfig(format!("decode template lacks {p}")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn box_blur(img: &TopViewRaster) -> TopViewRaster {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = TopViewRaster::filled(img.width(), img.height(), [0; 3]);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (sx, sy) = (x + dx, y + dy);
                    if sx >= 0 && sy >= 0 && sx < w && sy < h {
                        let p = img.get(sx as u32, sy as u32);
                        for c in 0..3 {
                            acc[c] += p[c] as u32;
                        }
                        n += 1;
                    }
                }
            }
            out.set(x as u32, y as u32, [0, 1, 2].map(|c| ((acc[c] + n / 2) / n) as u8));
        }
    }
    out
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn run_shell(cmd: &str) -> Result<std::process::Output, String> {
    let out = Command::new("sh").arg("-c").arg(cmd).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        let tail: String = stderr.lines().rev().take(3).collect::<Vec<_>>().join(" | ");
        return Err(format!("`{cmd}` exited with {}: {tail}", out.status));
    }
    Ok(out)
}

fn write_frames(dir: &Path, prefix: &str, frames: &[TopViewRaster]) -> Result<PathBuf, CompressionError> {
    for (i, f) in frames.iter().enumerate() {
        f.save_ppm(dir.join(format!("{prefix}_{i:05}.ppm"))).map_err(|e| CompressionError::Codec(e.to_string()))?;
    }
    Ok(dir.join(format!("{prefix}_%05d.ppm")))
}

fn tempdir() -> Result<tempfile::TempDir, CompressionError> {
    tempfile::tempdir().map_err(|e| CompressionError::Codec(e.to_string()))
}

impl CodecSpec {
    fn encode(&self, dir: &Path, frames: &[TopViewRaster], crf: u32) -> Result<PathBuf, CompressionError> {
        let CodecSpec::External { command_template, .. } = self else {
            unreachable!("encode is only used for external codecs")
        };
        let input = write_frames(dir, "in", frames)?;
        let output = dir.join("encoded.mp4");
        let cmd = command_template
            .replace("{input}", &shell_quote(&input))
            .replace("{output}", &shell_quote(&output))
            .replace("{crf}", &crf.to_string());
        run_shell(&cmd).map_err(CompressionError::Codec)?;
        Ok(output)
    }
}

impl Codec for CodecSpec {
    fn roundtrip(&self, frame: &TopViewRaster, crf: u32) -> Result<TopViewRaster, CompressionError> {
        self.validate()?;
        match self {
            CodecSpec::Synthetic { loss_slope } => {
                let w = (loss_slope * crf as f64).clamp(0.0, 1.0);
                if w == 0.0 {
                    return Ok(frame.clone());
                }
                let blur = box_blur(frame);
                let px = frame
                    .pixels()
                    .iter()
                    .zip(blur.pixels())
                    .map(|(&a, &b)| ((1.0 - w) * a as f64 + w * b as f64).round() as u8)
                    .collect();
                TopViewRaster::from_pixels(frame.width(), frame.height(), px).map_err(|e| CompressionError::Codec(e.to_string()))
            }
            CodecSpec::External { decode_template, .. } => {
                let dir = tempdir()?;
                let encoded = self.encode(dir.path(), std::slice::from_ref(frame), crf)?;
                let pattern = dir.path().join("dec_%05d.ppm");
                let cmd = decode_template
                    .replace("{input}", &shell_quote(&encoded))
                    .replace("{output}", &shell_quote(&pattern));
                run_shell(&cmd).map_err(CompressionError::Codec)?;
                let mut decoded: Vec<PathBuf> = std::fs::read_dir(dir.path())
                    .map_err(|e| CompressionError::Codec(e.to_string()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("dec_")))
                    .collect();
                decoded.sort();
                let first = decoded.first().ok_or_else(|| CompressionError::Codec("decoder produced no frames".into()))?;
                let out = TopViewRaster::load_ppm(first).map_err(|e| CompressionError::Codec(format!("undecodable output: {e}")))?;
                if (out.width(), out.height()) != (frame.width(), frame.height()) {
                    return Err(CompressionError::Codec(format!(
                        "decoded {}x{} from a {}x{} frame",
                        out.width(),
                        out.height(),
                        frame.width(),
                        frame.height()
                    )));
                }
                Ok(out)
            }
        }
    }

    fn encoded_size(&self, frames: &[TopViewRaster], crf: u32) -> Result<Option<u64>, CompressionError> {
        self.validate()?;
        match self {
            CodecSpec::Synthetic { .. } => Ok(None),
            CodecSpec::External { .. } => {
                let dir = tempdir()?;
                let encoded = self.encode(dir.path(), frames, crf)?;
                let len = std::fs::metadata(&encoded).map_err(|e| CompressionError::Codec(e.to_string()))?.len();
                Ok(Some(len))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    /// Loss is exactly `loss_slope · crf`, independent of content.
    Synthetic { loss_slope: f64 },
    /// Subprocess called with `{reference}` and `{distorted}` paths; prints one JOD loss.
    External { command_template: String },
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec::Synthetic { loss_slope: 0.005 }
    }
}

impl QualityMetric for MetricSpec {
    fn loss(&self, reference: &TopViewRaster, distorted: &TopViewRaster, crf: u32) -> Result<f64, CompressionError> {
        match self {
            MetricSpec::Synthetic { loss_slope } => Ok(loss_slope * crf as f64),
            MetricSpec::External { command_template } => {
                let dir = tempfile::tempdir().map_err(|e| CompressionError::Metric(e.to_string()))?;
                let (r, d) = (dir.path().join("reference.ppm"), dir.path().join("distorted.ppm"));
                for (img, p) in [(reference, &r), (distorted, &d)] {
                    img.save_ppm(p).map_err(|e| CompressionError::Metric(e.to_string()))?;
                }
                let cmd = command_template
                    .replace("{reference}", &shell_quote(&r))
                    .replace("{distorted}", &shell_quote(&d));
                let out = run_shell(&cmd).map_err(CompressionError::Metric)?;
                let text = String::from_utf8_lossy(&out.stdout);
                text.split_whitespace()
                    .next()
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| CompressionError::Metric(format!("expected a number on stdout, got {:?}", text.trim())))
            }
        }
    }
}

/// Encode/decode one frame and score the result.
pub fn roundtrip_eval(frame: &TopViewRaster, crf: u32, codec: &dyn Codec, metric: &dyn QualityMetric) -> Result<f64, CompressionError> {
    let decoded = codec.roundtrip(frame, crf)?;
    metric.loss(frame, &decoded, crf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfSearch {
    pub crf: u32,
    pub losses: Vec<f64>,
    /// Every CRF probed, in probe order.
    pub probes: Vec<u32>,
}

/// Highest CRF in `range` whose worst keyframe loss is strictly below `threshold`.
///
/// Binary search under a monotonicity assumption, then the three CRFs above the
/// candidate are re-checked from the top down in case the loss curve dips.
pub fn search_crf(
    keyframes: &[TopViewRaster],
    codec: &dyn Codec,
    metric: &dyn QualityMetric,
    threshold: f64,
    range: [u32; 2],
) -> Result<CrfSearch, CompressionError> {
    let [lo, hi] = range;
    if keyframes.is_empty() {
        return Err(CompressionError::InvalidConfig("no keyframes".into()));
    }
    if lo > hi {
        return Err(CompressionError::InvalidConfig(format!("empty CRF range [{lo}, {hi}]")));
    }
    let mut cache: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut probes = Vec::new();
    let mut eval = |crf: u32| -> Result<Vec<f64>, CompressionError> {
        if let Some(v) = cache.get(&crf) {
            return Ok(v.clone());
        }
        probes.push(crf);
        let losses = keyframes
            .par_iter()
            .map(|f| roundtrip_eval(f, crf, codec, metric))
            .collect::<Result<Vec<_>, _>>()?;
        cache.insert(crf, losses.clone());
        Ok(losses)
    };
    let worst = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let at_lo = eval(lo)?;
    if !(worst(&at_lo) < threshold) {
        return Err(CompressionError::NoFeasibleCrf { lo, hi, loss: worst(&at_lo) });
    }
    let (mut a, mut b) = (lo, hi);
    while a < b {
        let mid = a + (b - a + 1) / 2;
        if worst(&eval(mid)?) < threshold {
            a = mid;
        } else {
            b = mid - 1;
        }
    }
    for c in ((a + 1)..=(a.saturating_add(3)).min(hi)).rev() {
        if worst(&eval(c)?) < threshold {
            a = c;
            break;
        }
    }
    let losses = eval(a)?;
    Ok(CrfSearch { crf: a, losses, probes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionConfig {
    pub m_peaks: usize,
    pub threshold: f64,
    pub crf_range: [u32; 2],
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { m_peaks: DEFAULT_M_PEAKS, threshold: DEFAULT_THRESHOLD, crf_range: DEFAULT_CRF_RANGE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub schema: String,
    pub keyframes: Vec<usize>,
    pub crf: u32,
    pub per_keyframe_jod_loss: Vec<f64>,
    pub threshold: f64,
    pub crf_range: [u32; 2],
    pub m_peaks: usize,
    pub reduction_ratio: f64,
    /// True when the ratio comes from a size model rather than real encoded bytes.
    pub reduction_estimated: bool,
}

impl CompressionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Size model used when no real encoder is available: the compressed fraction
/// halves every 6 CRF steps from one half at CRF 0.
pub fn estimated_reduction(crf: u32) -> f64 {
    1.0 - 0.5 * 2f64.powf(-(crf as f64) / 6.0)
}

pub fn plan_compression(
    traj: &TrajectoryRecord,
    frames: &[TopViewRaster],
    codec: &dyn Codec,
    metric: &dyn QualityMetric,
    cfg: &CompressionConfig,
) -> Result<CompressionPlan, CompressionError> {
    if frames.len() != traj.frames() {
        return Err(CompressionError::DimensionMismatch(format!(
            "{} frames for a {}-frame trajectory",
            frames.len(),
            traj.frames()
        )));
    }
    let keyframes = extract_keyframes(traj, cfg.m_peaks);
    let stress: Vec<TopViewRaster> = keyframes.iter().map(|&k| frames[k].clone()).collect();
    let found = search_crf(&stress, codec, metric, cfg.threshold, cfg.crf_range)?;
    let (reduction_ratio, reduction_estimated) = match codec.encoded_size(frames, found.crf)? {
        Some(bytes) => {
            let raw: u64 = frames.iter().map(|f| f.pixels().len() as u64).sum();
            ((1.0 - bytes as f64 / raw as f64).clamp(0.0, 1.0), false)
        }
        None => (estimated_reduction(found.crf), true),
    };
    Ok(CompressionPlan {
        schema: PLAN_SCHEMA.into(),
        keyframes,
        crf: found.crf,
        per_keyframe_jod_loss: found.losses,
        threshold: cfg.threshold,
        crf_range: cfg.crf_range,
        m_peaks: cfg.m_peaks,
        reduction_ratio,
        reduction_estimated,
    })
}
