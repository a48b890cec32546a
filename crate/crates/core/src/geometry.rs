//! Boxes, grids and edge-proximity classification.
//!
//! Coordinates are continuous pixels. A pixel `(u, v)` is considered inside a
//! rectangle when its center `(u + 0.5, v + 0.5)` is, so integer-aligned
//! rectangles own exactly the pixels they visually cover.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a box lies inside a frame.
const FRAME_EPS: f64 = 1e-6;

/// Axis-aligned rectangle with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from COCO `[x, y, w, h]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract(format!("non-finite box {self}")));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::contract(format!("degenerate box {self}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Overlapping region, if it has positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min < x_max && y_min < y_max).then_some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Smallest box containing both.
    pub fn union_bounds(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    /// True when `other` lies inside `self` (within a small tolerance).
    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min - FRAME_EPS
            && other.y_min >= self.y_min - FRAME_EPS
            && other.x_max <= self.x_max + FRAME_EPS
            && other.y_max <= self.y_max + FRAME_EPS
    }

    /// Clip to `frame`, `None` when nothing of positive area remains.
    pub fn clamp_to(&self, frame: &BBox) -> Option<BBox> {
        self.intersection(frame)
    }

    /// Mirror horizontally inside a frame of the given width.
    pub fn hflip(&self, frame_width: f64) -> BBox {
        BBox {
            x_min: frame_width - self.x_max,
            y_min: self.y_min,
            x_max: frame_width - self.x_min,
            y_max: self.y_max,
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Identifier of a detector input. Stable and human-readable so replay files
/// can be keyed by it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TileId(pub String);

impl TileId {
    pub fn new(s: impl Into<String>) -> Self {
        TileId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub category_id: u32,
    pub score: f64,
    pub source: TileId,
}

impl Detection {
    pub fn new(bbox: BBox, category_id: u32, score: f64, source: TileId) -> Self {
        Self {
            bbox,
            category_id,
            score,
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: u32,
    pub height: u32,
    pub cols: u32,
    pub rows: u32,
    pub edge_threshold_frac: f64,
}

impl GridConfig {
    pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.02;

    pub fn new(width: u32, height: u32, cols: u32, rows: u32) -> Self {
        Self {
            width,
            height,
            cols,
            rows,
            edge_threshold_frac: Self::DEFAULT_EDGE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 || self.rows == 0 {
            return Err(Error::config("grid needs at least one column and row"));
        }
        if self.width < self.cols || self.height < self.rows {
            return Err(Error::config(format!(
                "grid {}x{} does not fit image {}x{}",
                self.cols, self.rows, self.width, self.height
            )));
        }
        let x = self.edge_threshold_frac;
        if !(x > 0.0 && x < 0.5) {
            return Err(Error::config(format!(
                "edge threshold fraction {x} outside (0, 0.5)"
            )));
        }
        Ok(())
    }

    /// Nominal patch width `floor(W / N)`.
    pub fn patch_width(&self) -> u32 {
        self.width / self.cols
    }

    pub fn patch_height(&self) -> u32 {
        self.height / self.rows
    }

    /// Threshold distance for vertical edges.
    pub fn threshold_x(&self) -> f64 {
        self.edge_threshold_frac * self.width as f64
    }

    /// Threshold distance for horizontal edges.
    pub fn threshold_y(&self) -> f64 {
        self.edge_threshold_frac * self.height as f64
    }

    pub fn image_rect(&self) -> BBox {
        BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: self.width as f64,
            y_max: self.height as f64,
        }
    }

    /// x coordinate of the left edge of column `col` (`col == cols` gives W).
    pub fn col_start(&self, col: u32) -> u32 {
        if col >= self.cols {
            self.width
        } else {
            col * self.patch_width()
        }
    }

    pub fn row_start(&self, row: u32) -> u32 {
        if row >= self.rows {
            self.height
        } else {
            row * self.patch_height()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchIndex {
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// A shared boundary between two grid-adjacent patches.
///
/// `position` is the cut line (x for vertical, y for horizontal) and `span`
/// the extent of the shared segment along it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundaryRef {
    pub orientation: Orientation,
    pub position: u32,
    pub span: (u32, u32),
    pub patches: [PatchIndex; 2],
}

/// An interior grid corner, the top-left corner of patch `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CornerRef {
    pub x: u32,
    pub y: u32,
    pub row: u32,
    pub col: u32,
}

impl CornerRef {
    pub fn patches(&self) -> [PatchIndex; 4] {
        let (r, c) = (self.row, self.col);
        [
            PatchIndex { row: r - 1, col: c - 1 },
            PatchIndex { row: r - 1, col: c },
            PatchIndex { row: r, col: c - 1 },
            PatchIndex { row: r, col: c },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TileKind {
    Base { row: u32, col: u32 },
    DynamicEdge { boundary: BoundaryRef },
    DynamicCorner { corner: CornerRef },
    FullImage,
    /// Cell of a fixed overlapping grid.
    Overlap { row: u32, col: u32 },
}

/// A region of the source image submitted to the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSpec {
    pub id: TileId,
    pub rect: BBox,
    pub kind: TileKind,
}

impl TileSpec {
    pub fn width(&self) -> f64 {
        self.rect.width()
    }

    pub fn height(&self) -> f64 {
        self.rect.height()
    }
}

/// Proximity of a detection to the interior boundaries of its base tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeClass {
    Central,
    NearEdge(BoundaryRef),
    NearCorner(CornerRef),
}

/// Partition the image into `cols x rows` base tiles, row-major.
///
/// Tiles are `floor(W/N) x floor(H/M)`; the last column and row absorb the
/// remainder. `prefix` namespaces the tile ids (usually the image id).
pub fn make_grid(cfg: &GridConfig, prefix: &str) -> Result<Vec<TileSpec>> {
    cfg.validate()?;
    let mut tiles = Vec::with_capacity((cfg.cols * cfg.rows) as usize);
    for row in 0..cfg.rows {
        for col in 0..cfg.cols {
            let rect = BBox {
                x_min: cfg.col_start(col) as f64,
                y_min: cfg.row_start(row) as f64,
                x_max: cfg.col_start(col + 1) as f64,
                y_max: cfg.row_start(row + 1) as f64,
            };
            tiles.push(TileSpec {
                id: base_tile_id(prefix, row, col),
                rect,
                kind: TileKind::Base { row, col },
            });
        }
    }
    Ok(tiles)
}

pub fn base_tile_id(prefix: &str, row: u32, col: u32) -> TileId {
    TileId(format!("{prefix}/base/r{row}c{col}"))
}

/// Which sides of a base tile a box is near, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Low,
    High,
}

/// Core of the classification rule, expressed in the tile-local frame.
///
/// `interior` flags are `[left, right, top, bottom]`; only interior sides can
/// be near. Returns the near vertical side and near horizontal side.
pub(crate) fn near_sides(
    local: &BBox,
    tile_w: f64,
    tile_h: f64,
    interior: [bool; 4],
    tx: f64,
    ty: f64,
) -> (Option<Side>, Option<Side>) {
    let pick = |d_low: f64, d_high: f64, low_ok: bool, high_ok: bool, t: f64| {
        let low = low_ok && d_low <= t;
        let high = high_ok && d_high <= t;
        match (low, high) {
            (true, true) => Some(if d_low <= d_high { Side::Low } else { Side::High }),
            (true, false) => Some(Side::Low),
            (false, true) => Some(Side::High),
            (false, false) => None,
        }
    };
    let v = pick(
        local.x_min,
        tile_w - local.x_max,
        interior[0],
        interior[1],
        tx,
    );
    let h = pick(
        local.y_min,
        tile_h - local.y_max,
        interior[2],
        interior[3],
        ty,
    );
    (v, h)
}

/// Classify a global-frame box against the base tile that produced it.
pub fn classify_detection(det_box: &BBox, tile: &TileSpec, cfg: &GridConfig) -> Result<EdgeClass> {
    let TileKind::Base { row, col } = tile.kind else {
        return Err(Error::contract(format!(
            "classify_detection needs a base tile, got {}",
            tile.id
        )));
    };
    let r = &tile.rect;
    let local = det_box.translate(-r.x_min, -r.y_min);
    let interior = [
        col > 0,
        col + 1 < cfg.cols,
        row > 0,
        row + 1 < cfg.rows,
    ];
    let (v, h) = near_sides(
        &local,
        r.width(),
        r.height(),
        interior,
        cfg.threshold_x(),
        cfg.threshold_y(),
    );

    let span_y = (r.y_min as u32, r.y_max as u32);
    let span_x = (r.x_min as u32, r.x_max as u32);
    // Vertical edge: cut column index and position.
    let v_edge = v.map(|s| match s {
        Side::Low => (col, r.x_min as u32),
        Side::High => (col + 1, r.x_max as u32),
    });
    let h_edge = h.map(|s| match s {
        Side::Low => (row, r.y_min as u32),
        Side::High => (row + 1, r.y_max as u32),
    });

    Ok(match (v_edge, h_edge) {
        (None, None) => EdgeClass::Central,
        (Some((cut, x)), None) => EdgeClass::NearEdge(BoundaryRef {
            orientation: Orientation::Vertical,
            position: x,
            span: span_y,
            patches: [
                PatchIndex { row, col: cut - 1 },
                PatchIndex { row, col: cut },
            ],
        }),
        (None, Some((cut, y))) => EdgeClass::NearEdge(BoundaryRef {
            orientation: Orientation::Horizontal,
            position: y,
            span: span_x,
            patches: [
                PatchIndex { row: cut - 1, col },
                PatchIndex { row: cut, col },
            ],
        }),
        (Some((ccut, x)), Some((rcut, y))) => EdgeClass::NearCorner(CornerRef {
            x,
            y,
            row: rcut,
            col: ccut,
        }),
    })
}

/// Translate a tile-local detection into the global frame.
pub fn to_global(det_local: &Detection, tile: &TileSpec) -> Result<Detection> {
    let frame = BBox {
        x_min: 0.0,
        y_min: 0.0,
        x_max: tile.width(),
        y_max: tile.height(),
    };
    if !frame.contains_box(&det_local.bbox) {
        return Err(Error::contract(format!(
            "local box {} outside tile {} of size {}x{}",
            det_local.bbox,
            tile.id,
            tile.width(),
            tile.height()
        )));
    }
    Ok(Detection {
        bbox: det_local.bbox.translate(tile.rect.x_min, tile.rect.y_min),
        ..det_local.clone()
    })
}

/// Translate a global detection into the frame of `tile`.
pub fn to_local(det_global: &Detection, tile: &TileSpec) -> Result<Detection> {
    if !tile.rect.contains_box(&det_global.bbox) {
        return Err(Error::contract(format!(
            "global box {} outside tile {} at {}",
            det_global.bbox, tile.id, tile.rect
        )));
    }
    Ok(Detection {
        bbox: det_global.bbox.translate(-tile.rect.x_min, -tile.rect.y_min),
        ..det_global.clone()
    })
}
