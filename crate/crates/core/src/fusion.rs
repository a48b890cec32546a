//! Final assembly: large-small size filtering, class-aware NMS and the
//! per-image detection cap.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Size threshold as a fraction of the image area.
    pub alpha: f64,
    pub nms_iou: f64,
    pub class_aware: bool,
    pub max_dets: usize,
    pub final_score_thresh: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            nms_iou: 0.6,
            class_aware: true,
            max_dets: 1000,
            final_score_thresh: 0.05,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("fusion alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::config(format!("fusion nms_iou {} outside (0, 1)", self.nms_iou)));
        }
        if self.max_dets == 0 {
            return Err(Error::config("fusion max_dets must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.final_score_thresh) {
            return Err(Error::config("fusion final_score_thresh outside [0, 1]"));
        }
        Ok(())
    }

    /// `theta = alpha * W * H`.
    pub fn size_threshold(&self, width: u32, height: u32) -> f64 {
        self.alpha * width as f64 * height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    FullImage,
    Tile,
}

/// Full-image predictions survive only when larger than `theta`, tile
/// predictions only when smaller. Area exactly `theta` is dropped by both.
pub fn size_filter(dets: &[Detection], stream: Stream, theta: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| {
            let a = d.bbox.area();
            match stream {
                Stream::FullImage => a > theta,
                Stream::Tile => a < theta,
            }
        })
        .cloned()
        .collect()
}

/// Descending score, then ascending category, then box coordinates.
pub fn score_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.category_id.cmp(&b.category_id))
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
}

pub fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(score_order);
}

/// Greedy NMS. Output is in descending score order.
pub fn nms(dets: &[Detection], iou_thresh: f64, class_aware: bool) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| score_order(a, b));
    let mut kept: Vec<&Detection> = Vec::with_capacity(order.len());
    for d in order {
        let suppressed = kept.iter().any(|k| {
            (!class_aware || k.category_id == d.category_id) && iou(&k.bbox, &d.bbox) > iou_thresh
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Combine the tile streams with the optional full-image stream.
///
/// The size filter only applies when a full-image stream exists; without it
/// nothing would cover objects larger than `theta`.
pub fn fuse(
    central: &[Detection],
    dynamic: &[Detection],
    full_image: Option<&[Detection]>,
    cfg: &FusionConfig,
    image_dims: (u32, u32),
) -> Vec<Detection> {
    let theta = cfg.size_threshold(image_dims.0, image_dims.1);
    let mut pool: Vec<Detection> = match full_image {
        Some(full) => {
            let mut p = size_filter(central, Stream::Tile, theta);
            p.extend(size_filter(dynamic, Stream::Tile, theta));
            p.extend(size_filter(full, Stream::FullImage, theta));
            p
        }
        None => central.iter().chain(dynamic).cloned().collect(),
    };
    pool.retain(|d| d.score >= cfg.final_score_thresh);
    let mut out = nms(&pool, cfg.nms_iou, cfg.class_aware);
    out.truncate(cfg.max_dets);
    out
}

/// NMS, score threshold and cap without the size filter, for the fixed
/// tiling baselines.
pub fn merge_plain(dets: &[Detection], cfg: &FusionConfig) -> Vec<Detection> {
    fuse(dets, &[], None, cfg, (1, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, TileId};

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, cat: u32, score: f64) -> Detection {
        Detection::new(BBox::new(x0, y0, x1, y1).unwrap(), cat, score, TileId::new("t"))
    }

    #[test]
    fn nms_examples() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0, 0.9);
        let b = det(1.0, 0.0, 11.0, 10.0, 0, 0.7);
        assert!((iou(&a.bbox, &b.bbox) - 9.0 / 11.0).abs() < 1e-12);
        assert_eq!(nms(&[b.clone(), a.clone()], 0.6, true), vec![a.clone()]);

        let b_other = det(1.0, 0.0, 11.0, 10.0, 1, 0.7);
        assert_eq!(nms(&[a.clone(), b_other.clone()], 0.6, true).len(), 2);
        assert_eq!(nms(&[a.clone(), b_other], 0.6, false).len(), 1);

        let far = det(50.0, 50.0, 60.0, 60.0, 0, 0.95);
        let out = nms(&[a.clone(), far.clone()], 0.6, true);
        assert_eq!(out, vec![far, a]);
    }

    #[test]
    fn nms_tie_break_is_deterministic() {
        let a = det(0.0, 0.0, 10.0, 10.0, 1, 0.5);
        let b = det(0.5, 0.0, 10.5, 10.0, 0, 0.5);
        // equal scores: smaller category first, and it suppresses the other
        assert_eq!(nms(&[a.clone(), b.clone()], 0.6, false), vec![b.clone()]);
        assert_eq!(nms(&[b.clone(), a], 0.6, false), vec![b]);
    }

    #[test]
    fn size_filter_examples() {
        let theta = FusionConfig::default().size_threshold(1920, 1080);
        assert_eq!(theta, 20736.0);
        let big = det(0.0, 0.0, 500.0, 300.0, 0, 0.9); // 150000
        assert_eq!(size_filter(std::slice::from_ref(&big), Stream::FullImage, theta).len(), 1);
        assert!(size_filter(&[big], Stream::Tile, theta).is_empty());
        let small = det(0.0, 0.0, 10.0, 10.0, 0, 0.9);
        assert_eq!(size_filter(&[small], Stream::Tile, theta).len(), 1);

        let exact = det(0.0, 0.0, 144.0, 144.0, 0, 0.9);
        assert!(size_filter(std::slice::from_ref(&exact), Stream::Tile, theta).is_empty());
        assert!(size_filter(&[exact], Stream::FullImage, theta).is_empty());

        // alpha = 1: nothing exceeds the image area
        let whole = det(0.0, 0.0, 1920.0, 1080.0, 0, 0.9);
        let theta1 = 1920.0 * 1080.0;
        assert!(size_filter(std::slice::from_ref(&whole), Stream::FullImage, theta1).is_empty());
        assert!(size_filter(&[det(0.0, 0.0, 1919.0, 1080.0, 0, 0.9)], Stream::Tile, theta1).len() == 1);
    }

    #[test]
    fn fuse_basics() {
        let cfg = FusionConfig::default();
        assert!(fuse(&[], &[], Some(&[]), &cfg, (1920, 1080)).is_empty());

        let many: Vec<Detection> = (0..1500)
            .map(|i| {
                let x = (i % 100) as f64 * 15.0;
                let y = (i / 100) as f64 * 15.0;
                det(x, y, x + 10.0, y + 10.0, 0, 0.1 + 0.8 * (i as f64 / 1500.0))
            })
            .collect();
        let out = fuse(&many, &[], None, &cfg, (1920, 1080));
        assert_eq!(out.len(), 1000);
        let min_kept = out.last().unwrap().score;
        let dropped_max = many
            .iter()
            .map(|d| d.score)
            .filter(|s| *s < min_kept)
            .fold(0.0, f64::max);
        assert!(dropped_max <= min_kept);
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn fuse_prefers_full_image_for_large_objects() {
        let cfg = FusionConfig::default();
        let frag_l = det(500.0, 100.0, 640.0, 400.0, 0, 0.5);
        let frag_r = det(640.0, 100.0, 790.0, 400.0, 0, 0.5);
        let whole = det(500.0, 100.0, 790.0, 400.0, 0, 0.95);
        let small = det(10.0, 10.0, 30.0, 30.0, 1, 0.9);
        let out = fuse(&[frag_l, frag_r, small.clone()], &[], Some(&[whole.clone(), small.clone()]), &cfg, (1920, 1080));
        assert_eq!(out, vec![whole, small]);
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            alpha: 1.0,
            ..FusionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FusionConfig {
            max_dets: 0,
            ..FusionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
