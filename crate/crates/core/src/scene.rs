//! Synthetic scenes: seeded ground truth and rendered images.
//!
//! Objects come in three flavours. Edge objects have their center within
//! 2 px of an interior cut line and stay clear of the perpendicular cuts, so
//! every fragment classifies as near that one boundary. Corner objects are
//! centered within 2 px of an interior grid corner. Everything else sits
//! inside a single base tile, further than the edge threshold from every
//! interior boundary, and therefore classifies as central.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::coco::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, GridConfig};
use crate::rng::{hash_words, SplitMix64};

/// Max offset of a biased object's center from its line or corner.
const CENTER_JITTER_PX: i64 = 2;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub object_count: usize,
    pub num_categories: u32,
    pub area_min: f64,
    pub area_max: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub boundary_bias: f64,
    pub corner_bias: f64,
    pub max_overlap_iou: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 1920,
            height: 1080,
            object_count: 20,
            num_categories: 5,
            area_min: 100.0,
            area_max: 40_000.0,
            aspect_min: 0.5,
            aspect_max: 2.0,
            boundary_bias: 0.4,
            corner_bias: 0.1,
            max_overlap_iou: 0.3,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.boundary_bias) || !unit(self.corner_bias) {
            return Err(Error::config("scene biases must lie in [0, 1]"));
        }
        if self.boundary_bias + self.corner_bias > 1.0 + 1e-12 {
            return Err(Error::config("scene boundary_bias + corner_bias exceeds 1"));
        }
        if !(self.area_min > 0.0 && self.area_min <= self.area_max) {
            return Err(Error::config("scene area range must satisfy 0 < area_min <= area_max"));
        }
        if self.area_max > self.width as f64 * self.height as f64 {
            return Err(Error::config("scene area_max exceeds image area"));
        }
        if !(self.aspect_min > 0.0 && self.aspect_min <= self.aspect_max) {
            return Err(Error::config("scene aspect range invalid"));
        }
        if self.num_categories == 0 {
            return Err(Error::config("scene needs at least one category"));
        }
        if !unit(self.max_overlap_iou) {
            return Err(Error::config("scene max_overlap_iou must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn edge_count(&self) -> usize {
        (self.boundary_bias * self.object_count as f64 + 1e-9).floor() as usize
    }

    pub fn corner_count(&self) -> usize {
        (self.corner_bias * self.object_count as f64 + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    Central,
    Edge,
    Corner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u64,
    pub bbox: BBox,
    pub category_id: u32,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    /// Seed for the background texture.
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let frame = BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: self.width as f64,
            y_max: self.height as f64,
        };
        let mut ids: Vec<u64> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate object ids in scene"));
        }
        for o in &self.objects {
            o.bbox.validate()?;
            if !frame.contains_box(&o.bbox) {
                return Err(Error::contract(format!("object {} outside image", o.id)));
            }
        }
        Ok(())
    }
}

/// An interior cut segment between two adjacent patches.
struct Segment {
    vertical: bool,
    position: f64,
    span: (f64, f64),
    /// Perpendicular extent available on either side, bounded by the next
    /// parallel cut or the image border.
    across: (f64, f64),
}

fn interior_segments(grid: &GridConfig) -> Vec<Segment> {
    let mut out = Vec::new();
    for c in 1..grid.cols {
        for r in 0..grid.rows {
            out.push(Segment {
                vertical: true,
                position: grid.col_start(c) as f64,
                span: (grid.row_start(r) as f64, grid.row_start(r + 1) as f64),
                across: (grid.col_start(c - 1) as f64, grid.col_start(c + 1) as f64),
            });
        }
    }
    for r in 1..grid.rows {
        for c in 0..grid.cols {
            out.push(Segment {
                vertical: false,
                position: grid.row_start(r) as f64,
                span: (grid.col_start(c) as f64, grid.col_start(c + 1) as f64),
                across: (grid.row_start(r - 1) as f64, grid.row_start(r + 1) as f64),
            });
        }
    }
    out
}

/// Margin that keeps an object strictly beyond the edge threshold.
fn margins(grid: &GridConfig) -> (f64, f64) {
    (grid.threshold_x().floor() + 1.0, grid.threshold_y().floor() + 1.0)
}

/// Whether the `[lo, hi]` interval along one axis keeps clear of interior cuts
/// at the ends of `range` (image borders do not need clearance).
fn clear_of_cuts(lo: f64, hi: f64, range: (f64, f64), limit: f64, margin: f64) -> bool {
    let lo_ok = if range.0 <= 0.0 { lo >= 0.0 } else { lo - range.0 > margin };
    let hi_ok = if range.1 >= limit { hi <= limit } else { range.1 - hi > margin };
    lo_ok && hi_ok
}

fn sample_dims(cfg: &SceneConfig, rng: &mut SplitMix64) -> (f64, f64) {
    let area = rng.uniform(cfg.area_min.ln(), cfg.area_max.ln()).exp();
    let aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
    // Even integer sides keep every coordinate integral.
    let even = |v: f64| (2.0 * (v / 2.0).round()).max(2.0);
    (even((area * aspect).sqrt()), even((area / aspect).sqrt()))
}

fn jitter(rng: &mut SplitMix64) -> f64 {
    (rng.below((2 * CENTER_JITTER_PX + 1) as u64) as i64 - CENTER_JITTER_PX) as f64
}

/// Place an object of size `(w, h)` straddling a random interior segment.
fn place_edge(grid: &GridConfig, segs: &[Segment], w: f64, h: f64, rng: &mut SplitMix64) -> Option<BBox> {
    let seg = &segs[rng.below(segs.len() as u64) as usize];
    let (mx, my) = margins(grid);
    let (across_len, along_len, m_across, m_along, along_limit, across_limit) = if seg.vertical {
        (w, h, mx, my, grid.height as f64, grid.width as f64)
    } else {
        (h, w, my, mx, grid.width as f64, grid.height as f64)
    };
    let half_patch = if seg.vertical {
        grid.patch_width() as f64 / 2.0
    } else {
        grid.patch_height() as f64 / 2.0
    };
    // keep the whole object inside the maximal dynamic tile
    if across_len / 2.0 + CENTER_JITTER_PX as f64 > half_patch {
        return None;
    }
    let lo_across = seg.position + jitter(rng) - across_len / 2.0;
    let hi_across = lo_across + across_len;
    // the object must cross the line and stay clear of parallel cuts
    if !(lo_across < seg.position && hi_across > seg.position) {
        return None;
    }
    if !clear_of_cuts(lo_across, hi_across, seg.across, across_limit, m_across) {
        return None;
    }
    let free = (seg.span.1 - seg.span.0) - along_len;
    if free <= 0.0 {
        return None;
    }
    let lo_along = (seg.span.0 + rng.uniform(0.0, free)).round();
    let hi_along = lo_along + along_len;
    if !clear_of_cuts(lo_along, hi_along, seg.span, along_limit, m_along) {
        return None;
    }
    let b = if seg.vertical {
        BBox::new(lo_across, lo_along, hi_across, hi_along)
    } else {
        BBox::new(lo_along, lo_across, hi_along, hi_across)
    };
    b.ok()
}

fn place_corner(grid: &GridConfig, w: f64, h: f64, rng: &mut SplitMix64) -> Option<BBox> {
    let cols = grid.cols - 1;
    let rows = grid.rows - 1;
    let c = 1 + rng.below(cols as u64) as u32;
    let r = 1 + rng.below(rows as u64) as u32;
    let cx = grid.col_start(c) as f64 + jitter(rng);
    let cy = grid.row_start(r) as f64 + jitter(rng);
    let b = BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).ok()?;
    let (mx, my) = margins(grid);
    // must cross both lines and fit inside the corner-centered patch
    let (x, y) = (grid.col_start(c) as f64, grid.row_start(r) as f64);
    if !(b.x_min < x && b.x_max > x && b.y_min < y && b.y_max > y) {
        return None;
    }
    let xs = (grid.col_start(c - 1) as f64, grid.col_start(c + 1) as f64);
    let ys = (grid.row_start(r - 1) as f64, grid.row_start(r + 1) as f64);
    let ok = clear_of_cuts(b.x_min, b.x_max, xs, grid.width as f64, mx)
        && clear_of_cuts(b.y_min, b.y_max, ys, grid.height as f64, my)
        && w <= grid.patch_width() as f64
        && h <= grid.patch_height() as f64;
    ok.then_some(b)
}

fn place_central(grid: &GridConfig, w: f64, h: f64, rng: &mut SplitMix64) -> Option<BBox> {
    let col = rng.below(grid.cols as u64) as u32;
    let row = rng.below(grid.rows as u64) as u32;
    let (mx, my) = margins(grid);
    let x_lo = grid.col_start(col) as f64 + if col > 0 { mx } else { 0.0 };
    let x_hi = grid.col_start(col + 1) as f64 - if col + 1 < grid.cols { mx } else { 0.0 };
    let y_lo = grid.row_start(row) as f64 + if row > 0 { my } else { 0.0 };
    let y_hi = grid.row_start(row + 1) as f64 - if row + 1 < grid.rows { my } else { 0.0 };
    let free_x = x_hi - x_lo - w;
    let free_y = y_hi - y_lo - h;
    if free_x < 0.0 || free_y < 0.0 {
        return None;
    }
    let x = (x_lo + rng.uniform(0.0, free_x)).round().clamp(x_lo, x_hi - w);
    let y = (y_lo + rng.uniform(0.0, free_y)).round().clamp(y_lo, y_hi - h);
    BBox::new(x, y, x + w, y + h).ok()
}

/// Generate scene number `image_id` of a suite seeded by `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig, grid: &GridConfig, image_id: u64) -> Result<Scene> {
    cfg.validate()?;
    grid.validate()?;
    if grid.width != cfg.width || grid.height != cfg.height {
        return Err(Error::config("scene and grid image dimensions differ"));
    }
    let n_edge = cfg.edge_count();
    let n_corner = cfg.corner_count();
    let segs = interior_segments(grid);
    if n_edge > 0 && segs.is_empty() {
        return Err(Error::Generation("boundary_bias > 0 but grid has no interior boundary".into()));
    }
    if n_corner > 0 && (grid.cols < 2 || grid.rows < 2) {
        return Err(Error::Generation("corner_bias > 0 but grid has no interior corner".into()));
    }

    let scene_seed = hash_words(&[cfg.seed, image_id]);
    let mut rng = SplitMix64::new(scene_seed);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(cfg.object_count);
    for i in 0..cfg.object_count {
        let placement = if i < n_edge {
            Placement::Edge
        } else if i < n_edge + n_corner {
            Placement::Corner
        } else {
            Placement::Central
        };
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let (w, h) = sample_dims(cfg, &mut rng);
            let candidate = match placement {
                Placement::Edge => place_edge(grid, &segs, w, h, &mut rng),
                Placement::Corner => place_corner(grid, w, h, &mut rng),
                Placement::Central => place_central(grid, w, h, &mut rng),
            };
            let Some(b) = candidate else { continue };
            if objects.iter().all(|o| iou(&o.bbox, &b) <= cfg.max_overlap_iou) {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place object {i} ({placement:?}) in scene {image_id} after {MAX_ATTEMPTS} attempts"
            ))
        })?;
        let category_id = rng.below(cfg.num_categories as u64) as u32;
        objects.push(SceneObject {
            id: i as u64,
            bbox,
            category_id,
            placement,
        });
    }
    let scene = Scene {
        image_id,
        width: cfg.width,
        height: cfg.height,
        objects,
        seed: scene_seed,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn generate_suite(cfg: &SceneConfig, grid: &GridConfig, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64).map(|i| generate_scene(cfg, grid, i)).collect()
}

const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [0, 0, 128],
];

/// Fill color for a category. Never a gray, so objects never blend into the
/// background texture.
pub fn category_color(category_id: u32) -> Rgb<u8> {
    let base = PALETTE[category_id as usize % PALETTE.len()];
    let cycle = (category_id as usize / PALETTE.len()) as u8;
    // Later cycles darken; channels stay distinct so the color stays non-gray.
    Rgb(base.map(|c| c.saturating_sub(cycle.wrapping_mul(17))))
}

/// Background gray level in `[96, 160)` at pixel `(x, y)`.
pub fn background_value(seed: u64, x: u32, y: u32) -> u8 {
    96 + (hash_words(&[seed, x as u64, y as u64]) % 64) as u8
}

/// Pixel-center membership: pixels whose center lies inside the box.
pub fn pixel_span(lo: f64, hi: f64, limit: u32) -> std::ops::Range<u32> {
    let start = (lo - 0.5).ceil().max(0.0) as u32;
    let end = ((hi - 0.5).ceil().max(0.0) as u32).min(limit);
    start.min(end)..end
}

pub fn render_scene(scene: &Scene) -> RgbImage {
    let mut img = RgbImage::from_fn(scene.width, scene.height, |x, y| {
        let v = background_value(scene.seed, x, y);
        Rgb([v, v, v])
    });
    for o in &scene.objects {
        let color = category_color(o.category_id);
        for y in pixel_span(o.bbox.y_min, o.bbox.y_max, scene.height) {
            for x in pixel_span(o.bbox.x_min, o.bbox.x_max, scene.width) {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}

/// Export scenes as a COCO annotation dataset.
pub fn scenes_to_coco(scenes: &[Scene], num_categories: u32) -> CocoDataset {
    let mut ds = CocoDataset::default();
    let mut ann_id = 1;
    for s in scenes {
        ds.images.push(CocoImage {
            id: s.image_id,
            width: s.width,
            height: s.height,
            file_name: format!("scene_{:05}.png", s.image_id),
        });
        for o in &s.objects {
            ds.annotations.push(CocoAnnotation {
                id: ann_id,
                image_id: s.image_id,
                category_id: o.category_id,
                bbox: o.bbox.to_xywh(),
                area: o.bbox.area(),
                iscrowd: 0,
            });
            ann_id += 1;
        }
    }
    let max_cat = scenes
        .iter()
        .flat_map(|s| s.objects.iter().map(|o| o.category_id + 1))
        .max()
        .unwrap_or(0)
        .max(num_categories);
    ds.categories = (0..max_cat)
        .map(|id| CocoCategory {
            id,
            name: format!("class_{id}"),
        })
        .collect();
    ds
}

/// Rebuild scenes from a COCO annotation dataset. Object ids follow file
/// order within each image; the background seed is derived from the image id.
pub fn scenes_from_coco(ds: &CocoDataset) -> Result<Vec<Scene>> {
    let mut scenes: Vec<Scene> = ds
        .images
        .iter()
        .map(|im| Scene {
            image_id: im.id,
            width: im.width,
            height: im.height,
            objects: Vec::new(),
            seed: hash_words(&[im.id]),
        })
        .collect();
    scenes.sort_by_key(|s| s.image_id);
    for a in &ds.annotations {
        let idx = scenes
            .binary_search_by_key(&a.image_id, |s| s.image_id)
            .map_err(|_| Error::parse("annotations.image_id", format!("unknown image {}", a.image_id)))?;
        let scene = &mut scenes[idx];
        let id = scene.objects.len() as u64;
        scene.objects.push(SceneObject {
            id,
            bbox: a.bbox()?,
            category_id: a.category_id,
            placement: Placement::Central,
        });
    }
    for s in &scenes {
        s.validate()?;
    }
    Ok(scenes)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(Error::from)
}
