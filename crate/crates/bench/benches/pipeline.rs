use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use dyntile::detector::SimDetector;
use dyntile::fusion::nms;
use dyntile::geometry::TileKind;
use dyntile::minimizer::{pack, MinimizerConfig};
use dyntile::scene::scenes_to_coco;
use dyntile::tiler::DynamicTileProposal;
use dyntile::{evaluate, run_image, BBox, EvalConfig, Strategy, TileId, TileSpec};
use dyntile_bench::{boundary_config, inputs, random_detections, scenes};

fn bench_nms(c: &mut Criterion) {
    let mut group = c.benchmark_group("nms");
    for n in [100, 1000] {
        let dets = random_detections(n, 42);
        group.bench_with_input(BenchmarkId::from_parameter(n), &dets, |b, dets| {
            b.iter(|| nms(black_box(dets), 0.6, true))
        });
    }
    group.finish();
}

fn bench_pack(c: &mut Criterion) {
    let proposals: Vec<DynamicTileProposal> = (0..12)
        .map(|i| {
            let w = 161.0 + 40.0 * (i % 4) as f64;
            let h = 136.0 + 60.0 * (i % 3) as f64;
            DynamicTileProposal {
                tile: TileSpec {
                    id: TileId(format!("d{i}")),
                    rect: BBox::new(0.0, 0.0, w, h).expect("positive size"),
                    kind: TileKind::FullImage,
                },
                origins: vec![],
            }
        })
        .collect();
    let gap = MinimizerConfig::default().gap_px;
    c.bench_function("pack/12", |b| b.iter(|| pack(black_box(&proposals), (640, 540), gap, 128, "b")));
}

fn bench_strategies(c: &mut Criterion) {
    let cfg = boundary_config(4);
    let scenes = scenes(&cfg);
    let inputs = inputs(&scenes);
    let mut group = c.benchmark_group("run_image");
    for name in ["fixed-grid", "fixed-overlap", "dynamic", "dynamic,fi,minimizer"] {
        let strategy: Strategy = name.parse().expect("valid strategy");
        group.bench_function(name, |b| {
            b.iter_batched(
                || SimDetector::new(cfg.sim.clone()).expect("valid sim config"),
                |mut det| {
                    for input in &inputs {
                        black_box(run_image(input, &strategy, &cfg.pipeline, &mut det).expect("run succeeds"));
                    }
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let cfg = boundary_config(20);
    let scenes = scenes(&cfg);
    let gt = scenes_to_coco(&scenes, cfg.scene.num_categories);
    let preds: Vec<_> = gt
        .annotations
        .iter()
        .enumerate()
        .map(|(i, a)| dyntile::coco::CocoResult {
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: [a.bbox[0] + (i % 5) as f64, a.bbox[1], a.bbox[2], a.bbox[3]],
            score: 1.0 - (i % 97) as f64 / 100.0,
        })
        .collect();
    let eval_cfg = EvalConfig::default();
    c.bench_function("evaluate/20-scenes", |b| b.iter(|| evaluate(black_box(&gt), black_box(&preds), &eval_cfg)));
}

criterion_group!(benches, bench_nms, bench_pack, bench_strategies, bench_evaluate);
criterion_main!(benches);
