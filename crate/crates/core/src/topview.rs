//! Orthographic top-view rasterizer and the world ↔ pixel mapping.
//!
//! Pixel `(i, j)` covers `[i, i+1) × [j, j+1)` in continuous pixel coordinates; the
//! image y axis points away from `workspace.max[1]`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetCatalog;
use crate::math::Vec2;
use crate::scene::{SceneConfiguration, Workspace};

pub const BACKGROUND: [u8; 3] = [104, 104, 104];
pub const DEFAULT_SIZE: u32 = 512;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("crop box is empty after clipping")]
    EmptyCrop,
    #[error("buffer length {got} does not match {width}x{height}x3")]
    BadBuffer { width: u32, height: u32, got: usize },
    #[error("mapping needs at least 16x16 pixels, got {0}x{1}")]
    TooSmall(u32, u32),
    #[error("unknown asset `{0}` in scene")]
    UnknownAsset(String),
    #[error("invalid P6 image: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMapping {
    pub workspace: Workspace,
    pub width: u32,
    pub height: u32,
}

impl PixelMapping {
    pub fn new(workspace: Workspace, width: u32, height: u32) -> Result<Self, RasterError> {
        if width < 16 || height < 16 {
            return Err(RasterError::TooSmall(width, height));
        }
        Ok(Self {
            workspace,
            width,
            height,
        })
    }

    /// Meters covered by one pixel cell along x and y.
    pub fn cell_size(&self) -> Vec2 {
        let e = self.workspace.extent();
        [e[0] / self.width as f64, e[1] / self.height as f64]
    }
}

pub fn world_to_pixel(m: &PixelMapping, p: Vec2) -> Vec2 {
    let ws = &m.workspace;
    let e = ws.extent();
    [
        (p[0] - ws.min[0]) / e[0] * m.width as f64,
        (ws.max[1] - p[1]) / e[1] * m.height as f64,
    ]
}

pub fn pixel_to_world(m: &PixelMapping, q: Vec2) -> Vec2 {
    let ws = &m.workspace;
    let e = ws.extent();
    [
        ws.min[0] + q[0] / m.width as f64 * e[0],
        ws.max[1] - q[1] / m.height as f64 * e[1],
    ]
}

/// Continuous pixel-space rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn center(&self) -> Vec2 {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn clipped(&self, width: u32, height: u32) -> PixelBox {
        PixelBox {
            x0: self.x0.clamp(0.0, width as f64),
            y0: self.y0.clamp(0.0, height as f64),
            x1: self.x1.clamp(0.0, width as f64),
            y1: self.y1.clamp(0.0, height as f64),
        }
    }
}

/// Pixel box covering a world-space footprint.
pub fn footprint_box(m: &PixelMapping, min: Vec2, max: Vec2) -> PixelBox {
    let a = world_to_pixel(m, [min[0], max[1]]);
    let b = world_to_pixel(m, [max[0], min[1]]);
    PixelBox::new(a[0], a[1], b[0], b[1])
}

#[derive(Clone, PartialEq, Eq)]
pub struct TopViewRaster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for TopViewRaster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TopViewRaster({}x{})", self.width, self.height)
    }
}

impl TopViewRaster {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&color);
        }
        Self { width, height, pixels }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(RasterError::BadBuffer {
                width,
                height,
                got: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Luma (BT.601) per pixel, row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 20);
        self.write_ppm(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        std::fs::write(path, self.to_ppm_bytes())?;
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(mut r: R) -> Result<Self, RasterError> {
        let mut header = Vec::new();
        // magic, width, height, maxval separated by whitespace; comments start with '#'.
        while header.len() < 4 {
            let mut token = Vec::new();
            loop {
                let mut byte = [0u8; 1];
                if r.read(&mut byte)? == 0 {
                    return Err(RasterError::Format("truncated header".into()));
                }
                let c = byte[0];
                if c == b'#' && token.is_empty() {
                    let mut skip = Vec::new();
                    r.read_until(b'\n', &mut skip)?;
                    continue;
                }
                if c.is_ascii_whitespace() {
                    if token.is_empty() {
                        continue;
                    }
                    break;
                }
                token.push(c);
            }
            header.push(String::from_utf8_lossy(&token).into_owned());
        }
        if header[0] != "P6" {
            return Err(RasterError::Format(format!("magic `{}`", header[0])));
        }
        let parse = |s: &str| s.parse::<u32>().map_err(|_| RasterError::Format(format!("bad number `{s}`")));
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(RasterError::Format(format!("maxval {maxval}, expected 255")));
        }
        let mut pixels = vec![0u8; width as usize * height as usize * 3];
        r.read_exact(&mut pixels)
            .map_err(|_| RasterError::Format("truncated pixel data".into()))?;
        Ok(Self { width, height, pixels })
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let file = std::fs::File::open(path)?;
        Self::read_ppm(std::io::BufReader::new(file))
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at +0.5);
    /// outside the image returns `fill`.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: [u8; 3]) -> [f64; 3] {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let mut acc = [0.0; 3];
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let (px, py) = (x0 + dx, y0 + dy);
                let c = if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
                    fill
                } else {
                    self.get(px as u32, py as u32)
                };
                for k in 0..3 {
                    acc[k] += w * c[k] as f64;
                }
            }
        }
        acc
    }

    /// Bilinear resample to `width × height`, edges clamped.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> TopViewRaster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = TopViewRaster::filled(width, height, [0; 3]);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            for x in 0..width {
                let u = ((x as f64 + 0.5) * sx).clamp(0.5, self.width as f64 - 0.5);
                let v = ((y as f64 + 0.5) * sy).clamp(0.5, self.height as f64 - 0.5);
                let c = self.sample_bilinear(u, v, [0; 3]);
                out.set(x, y, c.map(|v| v.round().clamp(0.0, 255.0) as u8));
            }
        }
        out
    }

    /// Rotate counter-clockwise (as seen in the image, i.e. in world orientation) by
    /// `degrees` about the image center onto a canvas that holds the whole rotated
    /// image; uncovered area is filled with `fill`.
    pub fn rotated(&self, degrees: f64, fill: [u8; 3]) -> TopViewRaster {
        let theta = degrees.to_radians();
        let (s, c) = theta.sin_cos();
        let (w, h) = (self.width as f64, self.height as f64);
        let nw = (c.abs() * w + s.abs() * h - 1e-9).ceil().max(1.0);
        let nh = (s.abs() * w + c.abs() * h - 1e-9).ceil().max(1.0);
        let mut out = TopViewRaster::filled(nw as u32, nh as u32, fill);
        let (cx, cy) = (w / 2.0, h / 2.0);
        let (ncx, ncy) = (nw / 2.0, nh / 2.0);
        for y in 0..out.height {
            for x in 0..out.width {
                // Image y points down, so a CCW world rotation is clockwise in (x, y).
                let dx = x as f64 + 0.5 - ncx;
                let dy = y as f64 + 0.5 - ncy;
                let sxp = c * dx - s * dy + cx;
                let syp = s * dx + c * dy + cy;
                let v = self.sample_bilinear(sxp, syp, fill);
                out.set(x, y, v.map(|v| v.round().clamp(0.0, 255.0) as u8));
            }
        }
        out
    }
}

/// FNV-1a, stable across platforms and releases.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Channel levels 40/104/232 with at least one channel at 232. Darkening by 20%
/// moves every 232 into a level no base color uses, so the two tones of one asset
/// never share a coarse color bin with another asset's tones or the background.
pub fn palette() -> Vec<[u8; 3]> {
    const LEVELS: [u8; 3] = [40, 104, 232];
    let mut out = Vec::new();
    for r in LEVELS {
        for g in LEVELS {
            for b in LEVELS {
                if r == 232 || g == 232 || b == 232 {
                    out.push([r, g, b]);
                }
            }
        }
    }
    out
}

pub fn asset_color(asset_id: &str) -> [u8; 3] {
    let p = palette();
    p[(fnv1a(asset_id) % p.len() as u64) as usize]
}

pub fn darken(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| (v as u32 * 4 / 5) as u8)
}

/// Paint each object's rotated footprint. Objects are drawn by ascending base height,
/// list order among equals; the half of the footprint with local `y > 0` is darkened.
pub fn render_topview(
    scene: &SceneConfiguration,
    catalog: &AssetCatalog,
    m: &PixelMapping,
) -> Result<TopViewRaster, RasterError> {
    let mut img = TopViewRaster::filled(m.width, m.height, BACKGROUND);
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by(|&a, &b| {
        scene.objects[a].aabb().min[2]
            .partial_cmp(&scene.objects[b].aabb().min[2])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for idx in order {
        let obj = &scene.objects[idx];
        let asset = catalog
            .get(&obj.asset_id)
            .ok_or_else(|| RasterError::UnknownAsset(obj.asset_id.clone()))?;
        let base = asset_color(&asset.id);
        let dark = darken(base);
        let (hx, hy) = (asset.half_extents[0], asset.half_extents[1]);
        let center = obj.position2();
        let (s, c) = obj.yaw().sin_cos();
        let bb = obj.aabb();
        let pb = footprint_box(m, [bb.min[0], bb.min[1]], [bb.max[0], bb.max[1]]).clipped(m.width, m.height);
        let (x0, x1) = (pb.x0.floor() as u32, (pb.x1.ceil() as u32).min(m.width));
        let (y0, y1) = (pb.y0.floor() as u32, (pb.y1.ceil() as u32).min(m.height));
        for y in y0..y1 {
            for x in x0..x1 {
                let w = pixel_to_world(m, [x as f64 + 0.5, y as f64 + 0.5]);
                let d = [w[0] - center[0], w[1] - center[1]];
                let lx = c * d[0] + s * d[1];
                let ly = -s * d[0] + c * d[1];
                if lx >= -hx && lx < hx && ly >= -hy && ly < hy {
                    img.set(x, y, if ly > 0.0 { dark } else { base });
                }
            }
        }
    }
    Ok(img)
}

/// Copy of the pixels covered by `bx` after clipping to the image.
pub fn crop(raster: &TopViewRaster, bx: &PixelBox) -> Result<TopViewRaster, RasterError> {
    let b = bx.clipped(raster.width, raster.height);
    let (x0, y0) = (b.x0.floor() as u32, b.y0.floor() as u32);
    let (x1, y1) = (b.x1.ceil() as u32, b.y1.ceil() as u32);
    if x1 <= x0 || y1 <= y0 || b.x1 <= b.x0 || b.y1 <= b.y0 {
        return Err(RasterError::EmptyCrop);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
    for y in y0..y1 {
        let start = (y as usize * raster.width as usize + x0 as usize) * 3;
        pixels.extend_from_slice(&raster.pixels[start..start + w as usize * 3]);
    }
    Ok(TopViewRaster {
        width: w,
        height: h,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::{AssetRecord, Pose};
    use crate::scene::ObjectInstance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn unit_mapping(px: u32) -> PixelMapping {
        PixelMapping::new(Workspace::new([0.0, 0.0], [1.0, 1.0], 0.0).unwrap(), px, px).unwrap()
    }

    fn asset(id: &str, hx: f64, hy: f64) -> AssetRecord {
        AssetRecord {
            id: id.into(),
            name: id.into(),
            category: String::new(),
            half_extents: [hx, hy, 0.05],
            contact_points: vec![],
            functional_points: vec![],
            receptacle: false,
        }
    }

    fn scene_with(objs: &[(&AssetRecord, [f64; 2], f64)]) -> (SceneConfiguration, AssetCatalog) {
        let m = unit_mapping(100);
        let mut s = SceneConfiguration::empty(m.workspace, 0);
        for (a, xy, yaw) in objs {
            s.objects
                .push(ObjectInstance::new(a, Pose::from_xyz_yaw([xy[0], xy[1], 0.05], *yaw)));
        }
        let cat = AssetCatalog::new(objs.iter().map(|(a, _, _)| (*a).clone()).collect()).unwrap();
        (s, cat)
    }

    fn filled_set(img: &TopViewRaster) -> HashSet<(u32, u32)> {
        let mut out = HashSet::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y) != BACKGROUND {
                    out.insert((x, y));
                }
            }
        }
        out
    }

    #[test]
    fn mapping_examples() {
        let m = unit_mapping(100);
        assert_eq!(world_to_pixel(&m, [0.5, 0.5]), [50.0, 50.0]);
        assert_eq!(world_to_pixel(&m, [0.0, 0.0]), [0.0, 100.0]);
        assert_eq!(world_to_pixel(&m, [1.0, 1.0]), [100.0, 0.0]);
        assert_eq!(pixel_to_world(&m, [50.0, 50.0]), [0.5, 0.5]);
        assert_eq!(pixel_to_world(&m, [0.0, 100.0]), [0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn mapping_roundtrip(x in -2.0f64..3.0, y in -2.0f64..3.0) {
            let m = PixelMapping::new(Workspace::new([-0.3, 0.1], [0.9, 0.7], 0.0).unwrap(), 640, 320).unwrap();
            let back = pixel_to_world(&m, world_to_pixel(&m, [x, y]));
            prop_assert!((back[0] - x).abs() < 1e-9 && (back[1] - y).abs() < 1e-9);
        }

        #[test]
        fn mapping_is_affine(a in prop::array::uniform2(-1.0f64..2.0), b in prop::array::uniform2(-1.0f64..2.0), t in 0.0f64..1.0) {
            let m = unit_mapping(512);
            let mix = [t * a[0] + (1.0 - t) * b[0], t * a[1] + (1.0 - t) * b[1]];
            let lhs = world_to_pixel(&m, mix);
            let (pa, pb) = (world_to_pixel(&m, a), world_to_pixel(&m, b));
            for k in 0..2 {
                prop_assert!((lhs[k] - (t * pa[k] + (1.0 - t) * pb[k])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let m = unit_mapping(32);
        let img = render_topview(&SceneConfiguration::empty(m.workspace, 0), &AssetCatalog::default(), &m).unwrap();
        assert_eq!(img, TopViewRaster::filled(32, 32, BACKGROUND));
    }

    #[test]
    fn square_footprint_area() {
        // Polygon-area oracle: 0.2 m × 0.2 m at 100 px/m covers 20 × 20 cells.
        let a = asset("sq", 0.1, 0.1);
        let (s, cat) = scene_with(&[(&a, [0.5, 0.5], 0.0)]);
        let img = render_topview(&s, &cat, &unit_mapping(100)).unwrap();
        let n = filled_set(&img).len() as f64;
        assert!((n - 400.0).abs() <= 8.0, "filled {n}");
    }

    #[test]
    fn rotated_footprint_area_matches_polygon() {
        let a = asset("r", 0.15, 0.05);
        let yaw = 30f64.to_radians();
        let (s, cat) = scene_with(&[(&a, [0.5, 0.5], yaw)]);
        let img = render_topview(&s, &cat, &unit_mapping(200)).unwrap();
        let expected = 0.3 * 0.1 * 200.0 * 200.0;
        let n = filled_set(&img).len() as f64;
        assert!((n - expected).abs() <= 0.02 * expected, "filled {n} vs {expected}");
    }

    #[test]
    fn disjoint_objects_have_disjoint_pixels() {
        let a = asset("a", 0.1, 0.05);
        let b = asset("b", 0.05, 0.1);
        let (s1, cat) = scene_with(&[(&a, [0.3, 0.3], 0.0), (&b, [0.7, 0.6], 0.0)]);
        let m = unit_mapping(100);
        let pa = filled_set(&render_topview(&SceneConfiguration { objects: vec![s1.objects[0].clone()], ..s1.clone() }, &cat, &m).unwrap());
        let pb = filled_set(&render_topview(&SceneConfiguration { objects: vec![s1.objects[1].clone()], ..s1.clone() }, &cat, &m).unwrap());
        assert!(pa.is_disjoint(&pb));
        let both = filled_set(&render_topview(&s1, &cat, &m).unwrap());
        assert_eq!(both.len(), pa.len() + pb.len());
    }

    #[test]
    fn translation_by_whole_cells_shifts_pixels() {
        let a = asset("t", 0.103, 0.057);
        let m = unit_mapping(100);
        let (s0, cat) = scene_with(&[(&a, [0.4, 0.4], 0.0)]);
        let (s1, _) = scene_with(&[(&a, [0.4 + 0.07, 0.4 - 0.03], 0.0)]);
        let p0 = filled_set(&render_topview(&s0, &cat, &m).unwrap());
        let p1 = filled_set(&render_topview(&s1, &cat, &m).unwrap());
        let shifted: HashSet<_> = p0.iter().map(|&(x, y)| (x + 7, y + 3)).collect();
        assert_eq!(shifted, p1);
    }

    #[test]
    fn rendering_is_deterministic_and_pattern_breaks_symmetry() {
        let a = asset("p", 0.1, 0.1);
        let (s, cat) = scene_with(&[(&a, [0.5, 0.5], 0.0)]);
        let m = unit_mapping(100);
        let r1 = render_topview(&s, &cat, &m).unwrap();
        assert_eq!(r1, render_topview(&s, &cat, &m).unwrap());
        // Upper half (smaller image y) is darker.
        assert_eq!(r1.get(50, 45), darken(asset_color("p")));
        assert_eq!(r1.get(50, 55), asset_color("p"));
    }

    #[test]
    fn palette_bins_are_separated() {
        let bins = |c: [u8; 3]| c.map(|v| v >> 6);
        let p = palette();
        assert_eq!(p.len(), 19);
        let mut seen = HashSet::new();
        seen.insert(bins(BACKGROUND));
        for c in &p {
            assert!(seen.insert(bins(*c)));
            assert!(seen.insert(bins(darken(*c))));
        }
    }

    #[test]
    fn crop_cases() {
        let mut img = TopViewRaster::filled(20, 10, [1, 2, 3]);
        img.set(4, 3, [9, 9, 9]);
        let full = crop(&img, &PixelBox::new(0.0, 0.0, 20.0, 10.0)).unwrap();
        assert_eq!(full, img);
        let one = crop(&img, &PixelBox::new(4.0, 3.0, 5.0, 4.0)).unwrap();
        assert_eq!((one.width(), one.height()), (1, 1));
        assert_eq!(one.get(0, 0), [9, 9, 9]);
        assert!(matches!(
            crop(&img, &PixelBox::new(30.0, 30.0, 40.0, 40.0)),
            Err(RasterError::EmptyCrop)
        ));
    }

    #[test]
    fn ppm_roundtrip() {
        let mut img = TopViewRaster::filled(17, 5, [10, 20, 30]);
        img.set(3, 2, [255, 0, 7]);
        let bytes = img.to_ppm_bytes();
        assert!(bytes.starts_with(b"P6\n17 5\n255\n"));
        let back = TopViewRaster::read_ppm(std::io::Cursor::new(bytes)).unwrap();
        assert_eq!(back, img);
        let commented = b"P6\n# made by hand\n2 1\n255\n\x01\x02\x03\x04\x05\x06".to_vec();
        let c = TopViewRaster::read_ppm(std::io::Cursor::new(commented)).unwrap();
        assert_eq!(c.get(1, 0), [4, 5, 6]);
    }

    #[test]
    fn quarter_rotation_is_exact() {
        let mut img = TopViewRaster::filled(4, 2, [0, 0, 0]);
        img.set(0, 0, [200, 0, 0]);
        let r = img.rotated(90.0, [0, 0, 0]);
        assert_eq!((r.width(), r.height()), (2, 4));
        // CCW: top-left goes to bottom-left.
        assert_eq!(r.get(0, 3), [200, 0, 0]);
        let back = r.rotated(-90.0, [0, 0, 0]);
        assert_eq!(back, img);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = TopViewRaster::filled(8, 6, [7, 8, 9]);
        assert_eq!(img.resize_bilinear(8, 6), img);
        let r = img.resize_bilinear(3, 11);
        assert!(r.pixels().chunks(3).all(|p| p == [7, 8, 9]));
        assert_relative_eq!(img.grayscale()[0], 0.299 * 7.0 + 0.587 * 8.0 + 0.114 * 9.0);
    }
}
