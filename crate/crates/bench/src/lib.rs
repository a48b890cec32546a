//! Fixtures shared by the criterion benchmarks.

use std::sync::Arc;

use dyntile::benchmark::suite;
use dyntile::geometry::Detection;
use dyntile::rng::SplitMix64;
use dyntile::{BBox, ImageInput, RunConfig, Scene, SimDetectorConfig, TileId};

/// Boundary-heavy 1920x1080 scenes with a noiseless simulated detector.
pub fn boundary_config(count: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scene.boundary_bias = 0.4;
    cfg.scene.corner_bias = 0.1;
    cfg.scene_count = count;
    cfg.sim = SimDetectorConfig::noiseless();
    cfg
}

pub fn scenes(cfg: &RunConfig) -> Vec<Scene> {
    suite(cfg).expect("benchmark suite generates")
}

pub fn inputs(scenes: &[Scene]) -> Vec<ImageInput> {
    scenes.iter().map(|s| ImageInput::from_scene(Arc::new(s.clone()))).collect()
}

/// `n` random detections in a 1920x1080 frame, clustered so NMS has work.
pub fn random_detections(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = SplitMix64::new(seed);
    let centers: Vec<(f64, f64)> = (0..n.div_ceil(5).max(1))
        .map(|_| (rng.uniform(50.0, 1870.0), rng.uniform(50.0, 1030.0)))
        .collect();
    (0..n)
        .map(|i| {
            let (cx, cy) = centers[i % centers.len()];
            let (x, y) = (cx + rng.uniform(-8.0, 8.0), cy + rng.uniform(-8.0, 8.0));
            let (w, h) = (rng.uniform(10.0, 80.0), rng.uniform(10.0, 80.0));
            let bbox = BBox::new(x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0).expect("positive size");
            Detection::new(bbox, rng.below(3) as u32, rng.uniform(0.05, 1.0), TileId::new("bench"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(random_detections(50, 7), random_detections(50, 7));
        let cfg = boundary_config(2);
        let s = scenes(&cfg);
        assert_eq!(s.len(), 2);
        assert_eq!(inputs(&s).len(), 2);
    }
}
