//! The tile minimizer: merge near-duplicate dynamic tiles and pack the rest
//! into patch-sized canvases so several tiles share one forward pass.

use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::detector::{CanvasSlot, Region, TileImage};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Detection, TileId};
use crate::tiler::DynamicTileProposal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerConfig {
    pub dedupe_iou: f64,
    pub gap_px: u32,
    /// Minimum share of a canvas detection's area that must lie inside the
    /// placement its center falls in.
    pub containment_frac: f64,
    pub fill: u8,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self {
            dedupe_iou: 0.8,
            gap_px: 8,
            containment_frac: 0.9,
            fill: 128,
        }
    }
}

impl MinimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dedupe_iou > 0.0 && self.dedupe_iou <= 1.0) {
            return Err(Error::config("minimizer dedupe_iou outside (0, 1]"));
        }
        if !(self.containment_frac > 0.0 && self.containment_frac <= 1.0) {
            return Err(Error::config("minimizer containment_frac outside (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub tile_id: TileId,
    pub dest_x: u32,
    pub dest_y: u32,
    /// Global rect of the packed tile.
    pub src_rect: BBox,
}

impl Placement {
    pub fn width(&self) -> u32 {
        self.src_rect.width() as u32
    }

    pub fn height(&self) -> u32 {
        self.src_rect.height() as u32
    }

    /// Destination rect in canvas pixels.
    pub fn dest_rect(&self) -> BBox {
        BBox {
            x_min: self.dest_x as f64,
            y_min: self.dest_y as f64,
            x_max: (self.dest_x + self.width()) as f64,
            y_max: (self.dest_y + self.height()) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeCanvas {
    pub canvas_id: TileId,
    pub width: u32,
    pub height: u32,
    pub placements: Vec<Placement>,
    pub fill: u8,
}

impl CompositeCanvas {
    /// Detector input for this canvas, without pixels.
    pub fn tile_image(&self) -> TileImage {
        TileImage {
            id: self.canvas_id.clone(),
            region: Region::Composite {
                width: self.width,
                height: self.height,
                slots: self
                    .placements
                    .iter()
                    .map(|p| CanvasSlot {
                        dest_x: p.dest_x as f64,
                        dest_y: p.dest_y as f64,
                        src_rect: p.src_rect,
                    })
                    .collect(),
            },
            hflip: false,
            pixels: None,
        }
    }
}

fn rect_key(r: &BBox) -> [f64; 4] {
    [r.x_min, r.y_min, r.x_max, r.y_max]
}

fn sort_proposals(p: &mut [DynamicTileProposal]) {
    p.sort_by(|a, b| {
        let (ka, kb) = (rect_key(&a.tile.rect), rect_key(&b.tile.rect));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.tile.id.cmp(&b.tile.id))
    });
}

/// Collapse proposals whose rects overlap by more than `dedupe_iou` into
/// their bounding union, provided the union still fits one canvas.
///
/// Merging repeats until stable. The merged proposal keeps the id and kind of
/// the first proposal in rect order and concatenates the origin groups.
/// Output is sorted by rect coordinates.
pub fn dedupe_proposals(
    proposals: &[DynamicTileProposal],
    canvas_dims: (u32, u32),
    cfg: &MinimizerConfig,
) -> Vec<DynamicTileProposal> {
    let mut out = proposals.to_vec();
    sort_proposals(&mut out);
    let fits = |r: &BBox| r.width() <= canvas_dims.0 as f64 && r.height() <= canvas_dims.1 as f64;
    'outer: loop {
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                let (a, b) = (&out[i].tile.rect, &out[j].tile.rect);
                let same = a == b;
                if !same && iou(a, b) <= cfg.dedupe_iou {
                    continue;
                }
                let union = a.union_bounds(b);
                if !same && !fits(&union) {
                    continue;
                }
                let absorbed = out.remove(j);
                out[i].tile.rect = union;
                out[i].origins.extend(absorbed.origins);
                sort_proposals(&mut out);
                continue 'outer;
            }
        }
        break;
    }
    out
}

struct Shelf {
    canvas: usize,
    y: u32,
    height: u32,
    next_x: u32,
}

/// First-fit-decreasing shelf packing into `canvas_dims` canvases.
///
/// Tiles are taken tallest first (ties: wider first, then rect order). Each
/// goes onto the first open shelf with room, else onto a new shelf in the
/// first canvas with vertical room, else into a new canvas. Neighbouring
/// placements are `gap_px` apart; no gap is kept at canvas borders.
pub fn pack(
    proposals: &[DynamicTileProposal],
    canvas_dims: (u32, u32),
    gap_px: u32,
    fill: u8,
    prefix: &str,
) -> Result<Vec<CompositeCanvas>> {
    let (cw, ch) = canvas_dims;
    let mut order: Vec<&DynamicTileProposal> = proposals.iter().collect();
    for p in &order {
        let r = &p.tile.rect;
        if r.width() > cw as f64 || r.height() > ch as f64 || r.width().fract() != 0.0 || r.height().fract() != 0.0 {
            return Err(Error::contract(format!(
                "tile {} ({}x{}) does not fit a {cw}x{ch} canvas on whole pixels",
                p.tile.id,
                r.width(),
                r.height()
            )));
        }
    }
    order.sort_by(|a, b| {
        let (ra, rb) = (&a.tile.rect, &b.tile.rect);
        rb.height()
            .total_cmp(&ra.height())
            .then(rb.width().total_cmp(&ra.width()))
            .then_with(|| {
                rect_key(ra)
                    .iter()
                    .zip(&rect_key(rb))
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| a.tile.id.cmp(&b.tile.id))
    });

    let mut canvases: Vec<CompositeCanvas> = Vec::new();
    let mut used_height: Vec<u32> = Vec::new();
    let mut shelves: Vec<Shelf> = Vec::new();
    for p in order {
        let (w, h) = (p.tile.rect.width() as u32, p.tile.rect.height() as u32);
        let slot = shelves.iter_mut().find(|s| h <= s.height && s.next_x + w <= cw);
        let (canvas, x, y) = match slot {
            Some(s) => {
                let x = s.next_x;
                s.next_x += w + gap_px;
                (s.canvas, x, s.y)
            }
            None => {
                let found = used_height
                    .iter()
                    .position(|&used| used + gap_px + h <= ch)
                    .map(|c| (c, used_height[c] + gap_px));
                let (canvas, y) = found.unwrap_or_else(|| {
                    canvases.push(CompositeCanvas {
                        canvas_id: TileId(format!("{prefix}/canvas/{}", canvases.len())),
                        width: cw,
                        height: ch,
                        placements: Vec::new(),
                        fill,
                    });
                    used_height.push(0);
                    (canvases.len() - 1, 0)
                });
                used_height[canvas] = y + h;
                shelves.push(Shelf {
                    canvas,
                    y,
                    height: h,
                    next_x: w + gap_px,
                });
                (canvas, 0, y)
            }
        };
        canvases[canvas].placements.push(Placement {
            tile_id: p.tile.id.clone(),
            dest_x: x,
            dest_y: y,
            src_rect: p.tile.rect,
        });
    }
    Ok(canvases)
}

/// Copy `rect` out of `source`. The rect must lie on whole pixels inside it.
pub fn crop_pixels(source: &RgbImage, rect: &BBox) -> Result<RgbImage> {
    let (w, h) = source.dimensions();
    let whole = [rect.x_min, rect.y_min, rect.x_max, rect.y_max]
        .iter()
        .all(|v| v.fract() == 0.0 && *v >= 0.0);
    if !whole || rect.x_max > w as f64 || rect.y_max > h as f64 {
        return Err(Error::contract(format!("crop {rect} outside {w}x{h} source or off-pixel")));
    }
    Ok(imageops::crop_imm(
        source,
        rect.x_min as u32,
        rect.y_min as u32,
        rect.width() as u32,
        rect.height() as u32,
    )
    .to_image())
}

pub fn render_composite(canvas: &CompositeCanvas, source: &RgbImage) -> Result<RgbImage> {
    let f = canvas.fill;
    let mut img = RgbImage::from_pixel(canvas.width, canvas.height, Rgb([f, f, f]));
    for p in &canvas.placements {
        let crop = crop_pixels(source, &p.src_rect)?;
        imageops::replace(&mut img, &crop, p.dest_x as i64, p.dest_y as i64);
    }
    Ok(img)
}

pub fn render_composites(canvases: &[CompositeCanvas], source: &RgbImage) -> Result<Vec<RgbImage>> {
    canvases.iter().map(|c| render_composite(c, source)).collect()
}

/// Map canvas-local detections back to the global frame.
///
/// Each detection belongs to the placement containing its center and must
/// have at least `containment_frac` of its area inside that placement.
/// Survivors are tagged with the placement's tile id. Returns the survivors
/// and the number discarded.
pub fn remap_composite_detections(
    dets: &[Detection],
    canvas: &CompositeCanvas,
    containment_frac: f64,
) -> (Vec<Detection>, usize) {
    let mut out = Vec::with_capacity(dets.len());
    let mut discarded = 0;
    for d in dets {
        let (cx, cy) = d.bbox.center();
        let hit = canvas.placements.iter().find(|p| {
            let r = p.dest_rect();
            cx >= r.x_min && cx < r.x_max && cy >= r.y_min && cy < r.y_max
        });
        let Some(p) = hit else {
            discarded += 1;
            continue;
        };
        let area = d.bbox.area();
        if area <= 0.0 || d.bbox.intersection_area(&p.dest_rect()) < containment_frac * area {
            discarded += 1;
            continue;
        }
        let dx = p.src_rect.x_min - p.dest_x as f64;
        let dy = p.src_rect.y_min - p.dest_y as f64;
        match d.bbox.translate(dx, dy).clamp_to(&p.src_rect) {
            Some(bbox) => out.push(Detection {
                bbox,
                category_id: d.category_id,
                score: d.score,
                source: p.tile_id.clone(),
            }),
            None => discarded += 1,
        }
    }
    (out, discarded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryRef, CornerRef, Orientation, PatchIndex, TileKind, TileSpec};
    use crate::tiler::{Anchor, BoundaryGroup};

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn edge(id: &str, rect: BBox) -> DynamicTileProposal {
        let boundary = BoundaryRef {
            orientation: Orientation::Vertical,
            position: 640,
            span: (0, 540),
            patches: [PatchIndex { row: 0, col: 0 }, PatchIndex { row: 0, col: 1 }],
        };
        DynamicTileProposal {
            tile: TileSpec {
                id: TileId::new(id),
                rect,
                kind: TileKind::DynamicEdge { boundary },
            },
            origins: vec![BoundaryGroup {
                anchor: Anchor::Edge(boundary),
                members: vec![],
            }],
        }
    }

    fn corner(id: &str) -> DynamicTileProposal {
        let corner = CornerRef { x: 640, y: 540, row: 1, col: 1 };
        DynamicTileProposal {
            tile: TileSpec {
                id: TileId::new(id),
                rect: b(320.0, 270.0, 960.0, 810.0),
                kind: TileKind::DynamicCorner { corner },
            },
            origins: vec![BoundaryGroup {
                anchor: Anchor::Corner(corner),
                members: vec![],
            }],
        }
    }

    const CANVAS: (u32, u32) = (640, 540);

    #[test]
    fn dedupe_examples() {
        let cfg = MinimizerConfig::default();
        let out = dedupe_proposals(&[corner("a"), corner("b")], CANVAS, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].origins.len(), 2);

        let (r1, r2) = (b(320.0, 65.0, 960.0, 195.0), b(320.0, 120.0, 960.0, 260.0));
        let v = iou(&r1, &r2);
        assert!((v - 75.0 / 195.0).abs() < 1e-12 && v < 0.8);
        assert_eq!(dedupe_proposals(&[edge("a", r1), edge("b", r2)], CANVAS, &cfg).len(), 2);

        let (r1, r2) = (b(320.0, 60.0, 960.0, 200.0), b(320.0, 70.0, 960.0, 210.0));
        assert!((iou(&r1, &r2) - 130.0 / 150.0).abs() < 1e-12);
        let out = dedupe_proposals(&[edge("b", r2), edge("a", r1)], CANVAS, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tile.rect, b(320.0, 60.0, 960.0, 210.0));
        assert_eq!(out[0].tile.id, TileId::new("a"));
    }

    #[test]
    fn pack_single_full_size() {
        let c = pack(&[corner("c")], CANVAS, 8, 128, "i").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].placements[0].dest_x, c[0].placements[0].dest_y), (0, 0));
    }

    #[test]
    fn pack_two_shelves() {
        let p = [edge("short", b(320.0, 0.0, 960.0, 180.0)), edge("tall", b(320.0, 300.0, 960.0, 500.0))];
        let c = pack(&p, CANVAS, 8, 128, "i").unwrap();
        assert_eq!(c.len(), 1);
        let pl = &c[0].placements;
        assert_eq!((pl[0].tile_id.as_str(), pl[0].dest_y), ("tall", 0));
        assert_eq!((pl[1].tile_id.as_str(), pl[1].dest_y), ("short", 208));
    }

    #[test]
    fn pack_three_needs_two_canvases() {
        let p: Vec<_> = (0..3)
            .map(|i| edge(&format!("e{i}"), b(320.0, 10.0 * i as f64, 960.0, 10.0 * i as f64 + 200.0)))
            .collect();
        let c = pack(&p, CANVAS, 8, 128, "i").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].placements.len(), 2);
        assert_eq!(c[1].placements.len(), 1);
        assert_eq!(c[1].canvas_id, TileId::new("i/canvas/1"));
    }

    #[test]
    fn pack_shares_shelves_horizontally() {
        let p = [
            edge("a", b(0.0, 0.0, 300.0, 100.0)),
            edge("b", b(0.0, 0.0, 300.0, 90.0)),
            edge("c", b(0.0, 0.0, 300.0, 80.0)),
        ];
        let c = pack(&p, CANVAS, 8, 128, "i").unwrap();
        let pos: Vec<_> = c[0].placements.iter().map(|p| (p.dest_x, p.dest_y)).collect();
        assert_eq!(pos, vec![(0, 0), (308, 0), (0, 108)]);
    }

    #[test]
    fn pack_rejects_oversize() {
        assert!(pack(&[edge("x", b(0.0, 0.0, 641.0, 10.0))], CANVAS, 8, 128, "i").is_err());
    }

    #[test]
    fn composite_pixels_match_source() {
        let src = RgbImage::from_fn(200, 100, |x, y| Rgb([x as u8, y as u8, (x ^ y) as u8]));
        let p = [edge("a", b(10.0, 20.0, 60.0, 50.0)), edge("b", b(100.0, 0.0, 130.0, 25.0))];
        let canvases = pack(&p, (100, 80), 8, 128, "i").unwrap();
        assert_eq!(canvases.len(), 1);
        let img = render_composite(&canvases[0], &src).unwrap();
        for pl in &canvases[0].placements {
            for (u, v) in [(0, 0), (3, 7), (pl.width() - 1, pl.height() - 1)] {
                let s = src.get_pixel(pl.src_rect.x_min as u32 + u, pl.src_rect.y_min as u32 + v);
                assert_eq!(img.get_pixel(pl.dest_x + u, pl.dest_y + v), s);
            }
        }
        assert_eq!(*img.get_pixel(99, 79), Rgb([128, 128, 128]));

        let whole = pack(&[edge("w", b(0.0, 0.0, 100.0, 80.0))], (100, 80), 8, 128, "i").unwrap();
        let img = render_composite(&whole[0], &src).unwrap();
        assert_eq!(img, crop_pixels(&src, &b(0.0, 0.0, 100.0, 80.0)).unwrap());

        let bad = CompositeCanvas {
            placements: vec![Placement {
                tile_id: TileId::new("x"),
                dest_x: 0,
                dest_y: 0,
                src_rect: b(190.0, 0.0, 210.0, 10.0),
            }],
            ..whole[0].clone()
        };
        assert!(render_composite(&bad, &src).is_err());
    }

    #[test]
    fn remap_examples() {
        let canvas = CompositeCanvas {
            canvas_id: TileId::new("i/canvas/0"),
            width: 640,
            height: 540,
            placements: vec![
                Placement {
                    tile_id: TileId::new("top"),
                    dest_x: 0,
                    dest_y: 0,
                    src_rect: b(320.0, 65.0, 960.0, 195.0),
                },
                Placement {
                    tile_id: TileId::new("below"),
                    dest_x: 0,
                    dest_y: 138,
                    src_rect: b(320.0, 300.0, 960.0, 400.0),
                },
            ],
            fill: 128,
        };
        let d = |x0, y0, x1, y1| Detection::new(b(x0, y0, x1, y1), 0, 0.9, TileId::new("i/canvas/0"));
        let (out, dropped) = remap_composite_detections(&[d(10.0, 10.0, 30.0, 30.0)], &canvas, 0.9);
        assert_eq!(dropped, 0);
        assert_eq!(out[0].bbox, b(330.0, 75.0, 350.0, 95.0));
        assert_eq!(out[0].source, TileId::new("top"));

        // centered in the 8 px gap strip
        let (out, dropped) = remap_composite_detections(&[d(10.0, 126.0, 30.0, 142.0)], &canvas, 0.9);
        assert!(out.is_empty() && dropped == 1);

        // half outside its placement
        let (out, dropped) = remap_composite_detections(&[d(10.0, 128.0, 30.0, 148.0)], &canvas, 0.9);
        assert!(out.is_empty() && dropped == 1);

        // empty canvas area
        let (_, dropped) = remap_composite_detections(&[d(10.0, 400.0, 30.0, 420.0)], &canvas, 0.9);
        assert_eq!(dropped, 1);
    }
}
