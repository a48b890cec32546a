//! Replaying stored detections and recording live ones.
//!
//! Replay files are COCO-results-shaped JSON arrays keyed by tile id:
//! `[{"tile_id": "...", "category_id": 1, "bbox": [x, y, w, h], "score": 0.9}]`,
//! boxes in the tile-local frame.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    finalize_tile_detections, DetectRequest, DetectResponse, Detector, ImageContext, TileDetections,
    DEFAULT_MAX_DETS_PER_TILE,
};
use crate::coco::{read_json, write_json, xywh_box};
use crate::error::Result;
use crate::geometry::{Detection, TileId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub tile_id: TileId,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

pub struct FileDetector {
    by_tile: BTreeMap<TileId, Vec<Detection>>,
}

impl FileDetector {
    pub fn from_records(records: &[ReplayRecord]) -> Result<Self> {
        let mut by_tile: BTreeMap<TileId, Vec<Detection>> = BTreeMap::new();
        for r in records {
            let bbox = xywh_box(&r.bbox, &format!("replay record for tile {}", r.tile_id))?;
            by_tile
                .entry(r.tile_id.clone())
                .or_default()
                .push(Detection::new(bbox, r.category_id, r.score, r.tile_id.clone()));
        }
        Ok(Self { by_tile })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records: Vec<ReplayRecord> = read_json(path)?;
        Self::from_records(&records)
    }

    pub fn tile_count(&self) -> usize {
        self.by_tile.len()
    }
}

impl Detector for FileDetector {
    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        request.validate()?;
        let results = request
            .batch
            .iter()
            .map(|t| TileDetections {
                tile_id: t.id.clone(),
                detections: finalize_tile_detections(
                    self.by_tile.get(&t.id).cloned().unwrap_or_default(),
                    t.width(),
                    t.height(),
                    DEFAULT_MAX_DETS_PER_TILE,
                ),
            })
            .collect();
        Ok(DetectResponse { results })
    }
}

/// Shared store of recorded responses; several recorders may feed one sink.
pub type RecordSink = Arc<Mutex<Vec<ReplayRecord>>>;

/// Wraps a backend and keeps a copy of every response it produces.
pub struct RecordingDetector<D> {
    inner: D,
    sink: RecordSink,
}

impl<D: Detector> RecordingDetector<D> {
    pub fn new(inner: D) -> Self {
        Self::with_sink(inner, RecordSink::default())
    }

    pub fn with_sink(inner: D, sink: RecordSink) -> Self {
        Self { inner, sink }
    }

    pub fn records(&self) -> Vec<ReplayRecord> {
        self.sink.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_records(path, &self.records())
    }
}

/// Write records grouped by tile id. The sort is stable, so each tile keeps
/// its response order regardless of which worker recorded it.
pub fn save_records(path: &Path, records: &[ReplayRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
    write_json(path, &sorted)
}

impl<D: Detector> Detector for RecordingDetector<D> {
    fn begin_image(&mut self, ctx: &ImageContext) -> Result<()> {
        self.inner.begin_image(ctx)
    }

    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        let resp = self.inner.detect(request)?;
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        for r in &resp.results {
            sink.extend(r.detections.iter().map(|d| ReplayRecord {
                tile_id: r.tile_id.clone(),
                category_id: d.category_id,
                bbox: d.bbox.to_xywh(),
                score: d.score,
            }));
        }
        Ok(resp)
    }

    fn needs_pixels(&self) -> bool {
        self.inner.needs_pixels()
    }

    fn passes_per_tile(&self) -> usize {
        self.inner.passes_per_tile()
    }
}
