//! The detector boundary.
//!
//! A [`Detector`] receives a batch of tile-images and returns tile-local
//! detections for each. Every tile-image in a batch costs one forward pass.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, TileId};
use crate::scene::Scene;

mod blob;
mod replay;
mod sim;
mod stdio;
mod tta;

pub use blob::ColorBlobDetector;
pub use replay::{save_records, FileDetector, RecordSink, RecordingDetector, ReplayRecord};
pub use sim::{sim_detect_tile, SimDetector, SimDetectorConfig};
pub use stdio::{serve_stdio, StdioDetector, WireDetection, WireRequest, WireResponse, WireTile, WireTileResult};
pub use tta::TtaDetector;

/// Scores below this are never emitted by backends.
pub const BACKEND_MIN_SCORE: f64 = 0.05;
pub const DEFAULT_MAX_DETS_PER_TILE: usize = 1000;

/// One placed crop inside a composite canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasSlot {
    pub dest_x: f64,
    pub dest_y: f64,
    pub src_rect: BBox,
}

/// Where the pixels of a tile-image come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    /// A crop of the source image, global frame.
    Crop(BBox),
    /// Several crops packed into one canvas.
    Composite {
        width: u32,
        height: u32,
        slots: Vec<CanvasSlot>,
    },
}

/// A single detector input.
#[derive(Debug, Clone)]
pub struct TileImage {
    pub id: TileId,
    pub region: Region,
    /// The input is horizontally mirrored relative to `region`.
    pub hflip: bool,
    pub pixels: Option<RgbImage>,
}

impl TileImage {
    pub fn crop(id: TileId, rect: BBox) -> Self {
        Self {
            id,
            region: Region::Crop(rect),
            hflip: false,
            pixels: None,
        }
    }

    pub fn width(&self) -> f64 {
        match &self.region {
            Region::Crop(r) => r.width(),
            Region::Composite { width, .. } => *width as f64,
        }
    }

    pub fn height(&self) -> f64 {
        match &self.region {
            Region::Crop(r) => r.height(),
            Region::Composite { height, .. } => *height as f64,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectRequest {
    pub batch: Vec<TileImage>,
}

impl DetectRequest {
    pub fn new(batch: Vec<TileImage>) -> Self {
        Self { batch }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch.is_empty() {
            return Err(Error::contract("empty detect request"));
        }
        let mut seen = HashSet::new();
        for t in &self.batch {
            if !seen.insert(&t.id) {
                return Err(Error::contract(format!("duplicate tile id {} in request", t.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileDetections {
    pub tile_id: TileId,
    /// Tile-local detections.
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectResponse {
    pub results: Vec<TileDetections>,
}

impl DetectResponse {
    pub fn get(&self, id: &TileId) -> Option<&[Detection]> {
        self.results
            .iter()
            .find(|r| &r.tile_id == id)
            .map(|r| r.detections.as_slice())
    }

    /// Check that the response only talks about tiles that were requested.
    pub fn check_against(&self, request: &DetectRequest) -> Result<()> {
        let ids: HashSet<&TileId> = request.batch.iter().map(|t| &t.id).collect();
        for r in &self.results {
            if !ids.contains(&r.tile_id) {
                return Err(Error::protocol(format!("response names unknown tile {}", r.tile_id)));
            }
        }
        Ok(())
    }
}

/// Per-image context handed to backends before the first request.
#[derive(Debug, Clone)]
pub struct ImageContext {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub scene: Option<Arc<Scene>>,
}

pub trait Detector: Send {
    /// Called once per image before any request for it.
    fn begin_image(&mut self, _ctx: &ImageContext) -> Result<()> {
        Ok(())
    }

    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse>;

    /// Whether tile-images must carry pixels.
    fn needs_pixels(&self) -> bool {
        false
    }

    /// Forward passes spent per tile-image submitted.
    fn passes_per_tile(&self) -> usize {
        1
    }
}

impl<D: Detector + ?Sized> Detector for &mut D {
    fn begin_image(&mut self, ctx: &ImageContext) -> Result<()> {
        (**self).begin_image(ctx)
    }

    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        (**self).detect(request)
    }

    fn needs_pixels(&self) -> bool {
        (**self).needs_pixels()
    }

    fn passes_per_tile(&self) -> usize {
        (**self).passes_per_tile()
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn begin_image(&mut self, ctx: &ImageContext) -> Result<()> {
        (**self).begin_image(ctx)
    }

    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        (**self).detect(request)
    }

    fn needs_pixels(&self) -> bool {
        (**self).needs_pixels()
    }

    fn passes_per_tile(&self) -> usize {
        (**self).passes_per_tile()
    }
}

/// Bring raw tile-local detections into response shape: clamp to the tile,
/// drop degenerate boxes and low scores, sort by descending score and cap.
pub fn finalize_tile_detections(
    mut dets: Vec<Detection>,
    width: f64,
    height: f64,
    max_dets: usize,
) -> Vec<Detection> {
    let frame = BBox {
        x_min: 0.0,
        y_min: 0.0,
        x_max: width,
        y_max: height,
    };
    dets.retain_mut(|d| {
        if !(d.score >= BACKEND_MIN_SCORE && d.score <= 1.0) {
            return false;
        }
        match d.bbox.clamp_to(&frame) {
            Some(b) => {
                d.bbox = b;
                true
            }
            None => false,
        }
    });
    crate::fusion::sort_by_score(&mut dets);
    dets.truncate(max_dets);
    dets
}

/// Pass-through wrapper that counts every tile-image it receives.
pub struct CountingDetector<D> {
    inner: D,
    count: Arc<AtomicUsize>,
}

impl<D: Detector> CountingDetector<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            count: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Shared handle to the counter; stays valid after the wrapper moves.
    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.count)
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

impl<D: Detector> Detector for CountingDetector<D> {
    fn begin_image(&mut self, ctx: &ImageContext) -> Result<()> {
        self.inner.begin_image(ctx)
    }

    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        self.count.fetch_add(request.len() * self.inner.passes_per_tile(), Ordering::SeqCst);
        self.inner.detect(request)
    }

    fn needs_pixels(&self) -> bool {
        self.inner.needs_pixels()
    }

    fn passes_per_tile(&self) -> usize {
        self.inner.passes_per_tile()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn request_validation() {
        assert!(DetectRequest::default().validate().is_err());
        let t = TileImage::crop(TileId::new("a"), b(0.0, 0.0, 1.0, 1.0));
        assert!(DetectRequest::new(vec![t.clone(), t.clone()]).validate().is_err());
        assert!(DetectRequest::new(vec![t]).validate().is_ok());
    }

    #[test]
    fn finalize_clamps_sorts_and_caps() {
        let id = TileId::new("t");
        let dets = vec![
            Detection::new(b(-5.0, 0.0, 5.0, 5.0), 0, 0.3, id.clone()),
            Detection::new(b(1.0, 1.0, 2.0, 2.0), 0, 0.9, id.clone()),
            Detection::new(b(1.0, 1.0, 2.0, 2.0), 0, 0.01, id.clone()),
            Detection::new(b(20.0, 20.0, 30.0, 30.0), 0, 0.8, id.clone()),
        ];
        let out = finalize_tile_detections(dets, 10.0, 10.0, 1000);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[1].bbox, b(0.0, 0.0, 5.0, 5.0));

        let many = (0..5)
            .map(|i| Detection::new(b(0.0, 0.0, 1.0, 1.0), 0, 0.1 + i as f64 * 0.1, id.clone()))
            .collect();
        let out = finalize_tile_detections(many, 10.0, 10.0, 2);
        assert_eq!(out.len(), 2);
        assert!((out[0].score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn response_rejects_unknown_tiles() {
        let req = DetectRequest::new(vec![TileImage::crop(TileId::new("a"), b(0.0, 0.0, 1.0, 1.0))]);
        let resp = DetectResponse {
            results: vec![TileDetections {
                tile_id: TileId::new("zzz"),
                detections: vec![],
            }],
        };
        assert!(matches!(resp.check_against(&req), Err(Error::Protocol(_))));
    }
}
