//! Dynamic tiles: group suspected fragments by the boundary they touch,
//! build one re-detection tile per boundary, and decide which re-detections
//! replace the fragments.
//!
//! Edge tiles always span half a patch on each side of their boundary. Along
//! the boundary they cover the union of their members, padded by `pad_frac`
//! of its length on each side, at least `min_extent_frac` of the patch and at
//! most the full patch. Corner tiles are one patch centered on the corner.
//! Tile rects are snapped outward to whole pixels.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    classify_detection, BBox, BoundaryRef, CornerRef, Detection, EdgeClass, GridConfig, Orientation, TileId,
    TileKind, TileSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilerConfig {
    /// Fragments scoring below this never trigger a dynamic tile.
    pub proposal_score_thresh: f64,
    pub pad_frac: f64,
    pub min_extent_frac: f64,
    /// Half-width of the acceptance band, as a fraction of W (vertical
    /// boundaries) or H (horizontal ones).
    pub band_frac: f64,
}

impl Default for TilerConfig {
    fn default() -> Self {
        Self {
            proposal_score_thresh: 0.10,
            pad_frac: 0.5,
            min_extent_frac: 0.25,
            band_frac: GridConfig::DEFAULT_EDGE_THRESHOLD,
        }
    }
}

impl TilerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.proposal_score_thresh) {
            return Err(Error::config("tiler proposal_score_thresh outside [0, 1]"));
        }
        if !(self.pad_frac >= 0.0) {
            return Err(Error::config("tiler pad_frac must be non-negative"));
        }
        if !(self.min_extent_frac > 0.0 && self.min_extent_frac <= 1.0) {
            return Err(Error::config("tiler min_extent_frac outside (0, 1]"));
        }
        if !(self.band_frac >= 0.0 && self.band_frac < 0.5) {
            return Err(Error::config("tiler band_frac outside [0, 0.5)"));
        }
        Ok(())
    }
}

/// The boundary or corner a group of fragments is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Anchor {
    Edge(BoundaryRef),
    Corner(CornerRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGroup {
    pub anchor: Anchor,
    /// Global-frame detections classified against `anchor`.
    pub members: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicTileProposal {
    pub tile: TileSpec,
    /// Usually one group; several after the minimizer merges proposals.
    pub origins: Vec<BoundaryGroup>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grouping {
    pub central: Vec<Detection>,
    pub groups: Vec<BoundaryGroup>,
    /// Near-boundary detections scoring below the proposal threshold.
    pub low_score: Vec<Detection>,
}

/// Classify base-tile detections and bucket them.
///
/// Each detection's `source` must name one of `base_tiles`. Central ones pass
/// through; near-boundary ones are grouped per boundary or corner, groups in
/// anchor order and members in input order.
pub fn group_by_boundary(
    dets: &[Detection],
    base_tiles: &[TileSpec],
    grid: &GridConfig,
    cfg: &TilerConfig,
) -> Result<Grouping> {
    let tiles: HashMap<&TileId, &TileSpec> = base_tiles.iter().map(|t| (&t.id, t)).collect();
    let mut out = Grouping::default();
    let mut buckets: BTreeMap<Anchor, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        let tile = tiles
            .get(&d.source)
            .ok_or_else(|| Error::contract(format!("detection from unknown base tile {}", d.source)))?;
        let anchor = match classify_detection(&d.bbox, tile, grid)? {
            EdgeClass::Central => {
                out.central.push(d.clone());
                continue;
            }
            EdgeClass::NearEdge(b) => Anchor::Edge(b),
            EdgeClass::NearCorner(c) => Anchor::Corner(c),
        };
        if d.score < cfg.proposal_score_thresh {
            out.low_score.push(d.clone());
            continue;
        }
        buckets.entry(anchor).or_default().push(d.clone());
    }
    out.groups = buckets
        .into_iter()
        .map(|(anchor, members)| BoundaryGroup { anchor, members })
        .collect();
    Ok(out)
}

/// Interval `[lo, lo + len)` of integer pixels, shifted (never shrunk) into
/// `[0, limit]`.
fn fit_interval(lo: f64, len: f64, limit: f64) -> (f64, f64) {
    let lo = lo.clamp(0.0, (limit - len).max(0.0));
    (lo, (lo + len).min(limit))
}

/// Along-boundary extent for an edge tile.
fn along_extent(members: &[Detection], vertical: bool, patch_len: f64, limit: f64, cfg: &TilerConfig) -> (f64, f64) {
    let (a, b) = members.iter().fold((f64::MAX, f64::MIN), |(a, b), d| {
        if vertical {
            (a.min(d.bbox.y_min), b.max(d.bbox.y_max))
        } else {
            (a.min(d.bbox.x_min), b.max(d.bbox.x_max))
        }
    });
    let floor_len = cfg.min_extent_frac * patch_len;
    let span = b - a;
    let (mut lo, mut hi) = if span > 0.0 {
        (a - cfg.pad_frac * span, b + cfg.pad_frac * span)
    } else {
        let c = members
            .iter()
            .map(|d| if vertical { d.bbox.center().1 } else { d.bbox.center().0 })
            .sum::<f64>()
            / members.len() as f64;
        (c - floor_len / 2.0, c + floor_len / 2.0)
    };
    let len = hi - lo;
    let mid = 0.5 * (lo + hi);
    if len < floor_len {
        lo = mid - floor_len / 2.0;
        hi = mid + floor_len / 2.0;
    } else if len > patch_len {
        lo = mid - patch_len / 2.0;
        hi = mid + patch_len / 2.0;
    }
    let lo = lo.floor();
    let len = (hi.ceil() - lo).min(patch_len);
    fit_interval(lo, len, limit)
}

fn edge_tile_id(prefix: &str, b: &BoundaryRef) -> TileId {
    let o = match b.orientation {
        Orientation::Vertical => 'v',
        Orientation::Horizontal => 'h',
    };
    TileId(format!("{prefix}/edge/{o}{}/{}-{}", b.position, b.span.0, b.span.1))
}

pub fn propose_edge_tile(
    group: &BoundaryGroup,
    grid: &GridConfig,
    cfg: &TilerConfig,
    prefix: &str,
) -> Result<DynamicTileProposal> {
    let Anchor::Edge(boundary) = group.anchor else {
        return Err(Error::contract("propose_edge_tile called on a corner group"));
    };
    if group.members.is_empty() {
        return Err(Error::contract("empty boundary group"));
    }
    let (pw, ph) = (grid.patch_width() as f64, grid.patch_height() as f64);
    let (w, h) = (grid.width as f64, grid.height as f64);
    let pos = boundary.position as f64;
    let rect = match boundary.orientation {
        Orientation::Vertical => {
            let (x0, x1) = fit_interval(pos - (pw / 2.0).floor(), pw, w);
            let (y0, y1) = along_extent(&group.members, true, ph, h, cfg);
            BBox::new(x0, y0, x1, y1)?
        }
        Orientation::Horizontal => {
            let (y0, y1) = fit_interval(pos - (ph / 2.0).floor(), ph, h);
            let (x0, x1) = along_extent(&group.members, false, pw, w, cfg);
            BBox::new(x0, y0, x1, y1)?
        }
    };
    Ok(DynamicTileProposal {
        tile: TileSpec {
            id: edge_tile_id(prefix, &boundary),
            rect,
            kind: TileKind::DynamicEdge { boundary },
        },
        origins: vec![group.clone()],
    })
}

pub fn propose_corner_tile(group: &BoundaryGroup, grid: &GridConfig, prefix: &str) -> Result<DynamicTileProposal> {
    let Anchor::Corner(corner) = group.anchor else {
        return Err(Error::contract("propose_corner_tile called on an edge group"));
    };
    let (pw, ph) = (grid.patch_width() as f64, grid.patch_height() as f64);
    let (x0, x1) = fit_interval(corner.x as f64 - (pw / 2.0).floor(), pw, grid.width as f64);
    let (y0, y1) = fit_interval(corner.y as f64 - (ph / 2.0).floor(), ph, grid.height as f64);
    Ok(DynamicTileProposal {
        tile: TileSpec {
            id: TileId(format!("{prefix}/corner/{}-{}", corner.x, corner.y)),
            rect: BBox::new(x0, y0, x1, y1)?,
            kind: TileKind::DynamicCorner { corner },
        },
        origins: vec![group.clone()],
    })
}

pub fn propose(group: &BoundaryGroup, grid: &GridConfig, cfg: &TilerConfig, prefix: &str) -> Result<DynamicTileProposal> {
    match group.anchor {
        Anchor::Edge(_) => propose_edge_tile(group, grid, cfg, prefix),
        Anchor::Corner(_) => propose_corner_tile(group, grid, prefix),
    }
}

fn near_vertical(b: &BBox, x: f64, band: f64) -> bool {
    b.x_min <= x + band && b.x_max >= x - band
}

fn near_horizontal(b: &BBox, y: f64, band: f64) -> bool {
    b.y_min <= y + band && b.y_max >= y - band
}

/// Whether a global-frame box crosses or hugs an anchor.
///
/// For corners, being near either of the two cut lines through the corner
/// counts.
pub fn anchor_accepts(anchor: &Anchor, b: &BBox, grid: &GridConfig, cfg: &TilerConfig) -> bool {
    let band_x = cfg.band_frac * grid.width as f64;
    let band_y = cfg.band_frac * grid.height as f64;
    match anchor {
        Anchor::Edge(e) => match e.orientation {
            Orientation::Vertical => near_vertical(b, e.position as f64, band_x),
            Orientation::Horizontal => near_horizontal(b, e.position as f64, band_y),
        },
        Anchor::Corner(c) => near_vertical(b, c.x as f64, band_x) || near_horizontal(b, c.y as f64, band_y),
    }
}

/// Keep the dynamic-tile detections that cross or hug any of the proposal's
/// originating boundaries.
pub fn accept_dynamic_predictions(
    dyn_dets: &[Detection],
    proposal: &DynamicTileProposal,
    grid: &GridConfig,
    cfg: &TilerConfig,
) -> Vec<Detection> {
    dyn_dets
        .iter()
        .filter(|d| {
            proposal
                .origins
                .iter()
                .any(|g| anchor_accepts(&g.anchor, &d.bbox, grid, cfg))
        })
        .cloned()
        .collect()
}
