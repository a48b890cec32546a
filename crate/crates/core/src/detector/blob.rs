use std::collections::HashMap;

use image::RgbImage;

use super::{
    finalize_tile_detections, DetectRequest, DetectResponse, Detector, TileDetections,
    DEFAULT_MAX_DETS_PER_TILE,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, TileId};
use crate::scene::category_color;

/// Pixel-based detector for rendered synthetic scenes.
///
/// Finds 4-connected components of exact category colors and reports their
/// bounding boxes with score 1. Touching objects of the same category merge,
/// which is fine for a smoke-test model.
pub struct ColorBlobDetector {
    colors: HashMap<[u8; 3], u32>,
    min_area_px: usize,
}

impl ColorBlobDetector {
    pub fn new(num_categories: u32, min_area_px: usize) -> Self {
        let colors = (0..num_categories).map(|c| (category_color(c).0, c)).collect();
        Self { colors, min_area_px }
    }

    pub fn detect_image(&self, img: &RgbImage, source: &TileId) -> Vec<Detection> {
        let (w, h) = img.dimensions();
        let mut seen = vec![false; (w as usize) * (h as usize)];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for y0 in 0..h {
            for x0 in 0..w {
                let idx0 = (y0 * w + x0) as usize;
                if seen[idx0] {
                    continue;
                }
                seen[idx0] = true;
                let color = img.get_pixel(x0, y0).0;
                let Some(&category) = self.colors.get(&color) else {
                    continue;
                };
                let (mut x_min, mut y_min, mut x_max, mut y_max) = (x0, y0, x0, y0);
                let mut area = 0usize;
                stack.push((x0, y0));
                while let Some((x, y)) = stack.pop() {
                    area += 1;
                    x_min = x_min.min(x);
                    x_max = x_max.max(x);
                    y_min = y_min.min(y);
                    y_max = y_max.max(y);
                    let neighbours = [
                        (x.wrapping_sub(1), y),
                        (x + 1, y),
                        (x, y.wrapping_sub(1)),
                        (x, y + 1),
                    ];
                    for (nx, ny) in neighbours {
                        if nx >= w || ny >= h {
                            continue;
                        }
                        let i = (ny * w + nx) as usize;
                        if !seen[i] && img.get_pixel(nx, ny).0 == color {
                            seen[i] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
                if area < self.min_area_px {
                    continue;
                }
                let bbox = BBox {
                    x_min: x_min as f64,
                    y_min: y_min as f64,
                    x_max: (x_max + 1) as f64,
                    y_max: (y_max + 1) as f64,
                };
                out.push(Detection::new(bbox, category, 1.0, source.clone()));
            }
        }
        out
    }
}

impl Detector for ColorBlobDetector {
    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        request.validate()?;
        let mut results = Vec::with_capacity(request.len());
        for t in &request.batch {
            let img = t
                .pixels
                .as_ref()
                .ok_or_else(|| Error::backend(format!("tile {} carries no pixels", t.id)))?;
            let dets = self.detect_image(img, &t.id);
            results.push(TileDetections {
                tile_id: t.id.clone(),
                detections: finalize_tile_detections(
                    dets,
                    img.width() as f64,
                    img.height() as f64,
                    DEFAULT_MAX_DETS_PER_TILE,
                ),
            });
        }
        Ok(DetectResponse { results })
    }

    fn needs_pixels(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use image::Rgb;

    use super::*;

    #[test]
    fn finds_colored_rectangles() {
        let mut img = RgbImage::from_pixel(50, 40, Rgb([128, 128, 128]));
        for y in 5..15 {
            for x in 10..30 {
                img.put_pixel(x, y, category_color(1));
            }
        }
        for y in 20..40 {
            for x in 0..5 {
                img.put_pixel(x, y, category_color(3));
            }
        }
        // too small to count
        img.put_pixel(45, 2, category_color(0));
        let det = ColorBlobDetector::new(5, 4);
        let mut got = det.detect_image(&img, &TileId::new("t"));
        got.sort_by_key(|d| d.category_id);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].category_id, 1);
        assert_eq!(got[0].bbox, BBox::new(10.0, 5.0, 30.0, 15.0).unwrap());
        assert_eq!(got[1].bbox, BBox::new(0.0, 20.0, 5.0, 40.0).unwrap());
    }
}
