use image::imageops;

use super::{DetectRequest, DetectResponse, Detector, ImageContext, TileDetections, TileImage};
use crate::error::{Error, Result};
use crate::fusion::nms;
use crate::geometry::TileId;

const FLIP_SUFFIX: &str = "#hflip";

/// Horizontal-flip test-time augmentation.
///
/// Each tile is sent twice in one batch, as-is and mirrored. The mirrored
/// results are reflected back and merged with the originals by NMS.
pub struct TtaDetector<D> {
    inner: D,
    nms_iou: f64,
    class_aware: bool,
}

impl<D: Detector> TtaDetector<D> {
    pub fn new(inner: D, nms_iou: f64, class_aware: bool) -> Self {
        Self {
            inner,
            nms_iou,
            class_aware,
        }
    }

    pub fn into_inner(self) -> D {
        self.inner
    }
}

fn flipped(tile: &TileImage) -> TileImage {
    TileImage {
        id: TileId(format!("{}{FLIP_SUFFIX}", tile.id)),
        region: tile.region.clone(),
        hflip: !tile.hflip,
        pixels: tile.pixels.as_ref().map(imageops::flip_horizontal),
    }
}

impl<D: Detector> Detector for TtaDetector<D> {
    fn begin_image(&mut self, ctx: &ImageContext) -> Result<()> {
        self.inner.begin_image(ctx)
    }

    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        request.validate()?;
        let mut batch = Vec::with_capacity(2 * request.len());
        for t in &request.batch {
            batch.push(t.clone());
            batch.push(flipped(t));
        }
        let doubled = DetectRequest::new(batch);
        let resp = self.inner.detect(&doubled)?;
        resp.check_against(&doubled)?;

        let mut results = Vec::with_capacity(request.len());
        for t in &request.batch {
            let flip_id = TileId(format!("{}{FLIP_SUFFIX}", t.id));
            let mut merged: Vec<_> = resp.get(&t.id).unwrap_or_default().to_vec();
            let width = t.width();
            for d in resp.get(&flip_id).unwrap_or_default() {
                let mut d = d.clone();
                d.bbox = d.bbox.hflip(width);
                d.source = t.id.clone();
                merged.push(d);
            }
            if merged.iter().any(|d| d.bbox.validate().is_err()) {
                return Err(Error::backend(format!("invalid box after un-mirroring tile {}", t.id)));
            }
            results.push(TileDetections {
                tile_id: t.id.clone(),
                detections: nms(&merged, self.nms_iou, self.class_aware),
            });
        }
        Ok(DetectResponse { results })
    }

    fn needs_pixels(&self) -> bool {
        self.inner.needs_pixels()
    }

    fn passes_per_tile(&self) -> usize {
        2 * self.inner.passes_per_tile()
    }
}
