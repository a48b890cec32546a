//! Simulated detector driven by scene ground truth.
//!
//! Each ground-truth object visible in a tile produces at most one detection:
//! the visible part of its box, perturbed per side, scored by how much of the
//! object the tile shows. Randomness is seeded by `(seed, tile rect, object
//! id, flip)`, so results do not depend on batch composition or order.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    finalize_tile_detections, DetectRequest, DetectResponse, Detector, ImageContext, Region,
    TileDetections, DEFAULT_MAX_DETS_PER_TILE,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, TileId};
use crate::rng::{hash_words, SplitMix64};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDetectorConfig {
    /// Per-side location noise, as a fraction of the visible side length.
    pub loc_jitter_frac: f64,
    pub score_gamma: f64,
    pub score_noise: f64,
    pub miss_prob: f64,
    pub confuse_prob: f64,
    pub confuse_visibility: f64,
    pub min_visible_area_px: f64,
    /// Symmetric pairs of categories the detector mixes up on fragments.
    pub confusable: Vec<(u32, u32)>,
    pub seed: u64,
}

impl Default for SimDetectorConfig {
    fn default() -> Self {
        Self {
            loc_jitter_frac: 0.02,
            score_gamma: 1.0,
            score_noise: 0.05,
            miss_prob: 0.0,
            confuse_prob: 0.5,
            confuse_visibility: 0.5,
            min_visible_area_px: 4.0,
            confusable: vec![(2, 3)],
            seed: 0,
        }
    }
}

impl SimDetectorConfig {
    /// No location noise, no score noise, no misses. Category confusion on
    /// weakly visible fragments stays on.
    pub fn noiseless() -> Self {
        Self {
            loc_jitter_frac: 0.0,
            score_noise: 0.0,
            miss_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.miss_prob) && unit(self.confuse_prob) && unit(self.confuse_visibility)) {
            return Err(Error::config("sim probabilities must lie in [0, 1]"));
        }
        if !(self.loc_jitter_frac >= 0.0) || !(self.score_noise >= 0.0) {
            return Err(Error::config("sim noise levels must be non-negative"));
        }
        if !(self.score_gamma > 0.0) {
            return Err(Error::config("sim score_gamma must be positive"));
        }
        if !(self.min_visible_area_px >= 0.0) {
            return Err(Error::config("sim min_visible_area_px must be non-negative"));
        }
        Ok(())
    }

    fn partner(&self, category: u32) -> Option<u32> {
        self.confusable.iter().find_map(|&(a, b)| {
            if a == category {
                Some(b)
            } else if b == category {
                Some(a)
            } else {
                None
            }
        })
    }
}

/// Simulated detections for one source rect, tile-local, unsorted.
///
/// `hflip` mirrors the output inside the rect and reseeds the noise.
pub fn sim_detect_tile(
    scene: &Scene,
    rect: &BBox,
    hflip: bool,
    cfg: &SimDetectorConfig,
    source: &TileId,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for obj in &scene.objects {
        let Some(visible) = obj.bbox.intersection(rect) else {
            continue;
        };
        if visible.area() < cfg.min_visible_area_px {
            continue;
        }
        let visibility = visible.area() / obj.bbox.area();
        let mut rng = SplitMix64::new(hash_words(&[
            cfg.seed,
            rect.x_min.to_bits(),
            rect.y_min.to_bits(),
            rect.x_max.to_bits(),
            rect.y_max.to_bits(),
            obj.id,
            hflip as u64,
        ]));
        // fixed draw order keeps streams aligned across configurations
        let missed = rng.bernoulli(cfg.miss_prob);
        let (w, h) = (visible.width(), visible.height());
        let noise: [f64; 4] = std::array::from_fn(|_| rng.normal());
        let score_jitter = rng.uniform(-1.0, 1.0);
        let swap = rng.bernoulli(cfg.confuse_prob);
        if missed {
            continue;
        }
        let s = cfg.loc_jitter_frac;
        let jittered = BBox {
            x_min: visible.x_min + noise[0] * s * w,
            y_min: visible.y_min + noise[1] * s * h,
            x_max: visible.x_max + noise[2] * s * w,
            y_max: visible.y_max + noise[3] * s * h,
        };
        let Some(boxed) = jittered.clamp_to(rect) else {
            continue;
        };
        if boxed.validate().is_err() {
            continue;
        }
        let score =
            (visibility.powf(cfg.score_gamma) + cfg.score_noise * score_jitter).clamp(0.0, 1.0);
        let category_id = match cfg.partner(obj.category_id) {
            Some(p) if visibility < cfg.confuse_visibility && swap => p,
            _ => obj.category_id,
        };
        let mut local = boxed.translate(-rect.x_min, -rect.y_min);
        if hflip {
            local = local.hflip(rect.width());
        }
        out.push(Detection::new(local, category_id, score, source.clone()));
    }
    out
}

/// Backend that answers from the current image's scene.
pub struct SimDetector {
    cfg: SimDetectorConfig,
    scene: Option<Arc<Scene>>,
    max_dets_per_tile: usize,
}

impl SimDetector {
    pub fn new(cfg: SimDetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            scene: None,
            max_dets_per_tile: DEFAULT_MAX_DETS_PER_TILE,
        })
    }

    pub fn with_scene(cfg: SimDetectorConfig, scene: Arc<Scene>) -> Result<Self> {
        let mut d = Self::new(cfg)?;
        d.scene = Some(scene);
        Ok(d)
    }

    pub fn config(&self) -> &SimDetectorConfig {
        &self.cfg
    }
}

impl Detector for SimDetector {
    fn begin_image(&mut self, ctx: &ImageContext) -> Result<()> {
        let scene = ctx
            .scene
            .clone()
            .ok_or_else(|| Error::backend(format!("simulated detector needs a scene for image {}", ctx.image_id)))?;
        self.scene = Some(scene);
        Ok(())
    }

    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        request.validate()?;
        let scene = self
            .scene
            .as_ref()
            .ok_or_else(|| Error::backend("simulated detector has no scene loaded"))?;
        let mut results = Vec::with_capacity(request.len());
        for tile in &request.batch {
            let dets = match &tile.region {
                Region::Crop(rect) => sim_detect_tile(scene, rect, tile.hflip, &self.cfg, &tile.id),
                Region::Composite { width, slots, .. } => {
                    let mut all = Vec::new();
                    for slot in slots {
                        let part = sim_detect_tile(scene, &slot.src_rect, false, &self.cfg, &tile.id);
                        all.extend(part.into_iter().map(|mut d| {
                            d.bbox = d.bbox.translate(slot.dest_x, slot.dest_y);
                            if tile.hflip {
                                d.bbox = d.bbox.hflip(*width as f64);
                            }
                            d
                        }));
                    }
                    all
                }
            };
            results.push(TileDetections {
                tile_id: tile.id.clone(),
                detections: finalize_tile_detections(dets, tile.width(), tile.height(), self.max_dets_per_tile),
            });
        }
        Ok(DetectResponse { results })
    }
}
