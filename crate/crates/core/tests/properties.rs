use dyntile::coco::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage, CocoResult};
use dyntile::eval::{average_precision, EvalConfig};
use dyntile::fusion::{fuse, nms, FusionConfig};
use dyntile::geometry::{classify_detection, make_grid, EdgeClass, Orientation, TileKind};
use dyntile::minimizer::{dedupe_proposals, MinimizerConfig};
use dyntile::tiler::{group_by_boundary, propose, Anchor, DynamicTileProposal, TilerConfig};
use dyntile::{evaluate, iou, BBox, Detection, GridConfig, Strategy, TileId, TileSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config() -> Config {
    Config {
        cases: 1000,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

prop_compose! {
    fn bbox()(x in -50.0..500.0f64, y in -50.0..500.0f64, w in 0.5..200.0f64, h in 0.5..200.0f64) -> BBox {
        BBox::new(x, y, x + w, y + h).unwrap()
    }
}

prop_compose! {
    fn det()(b in bbox(), cat in 0u32..3, score in 0.01..1.0f64) -> Detection {
        Detection::new(b, cat, score, TileId::new("t"))
    }
}

prop_compose! {
    /// A grid over a realistic image, with patches of at least 32 px.
    fn grid()(w in 64u32..2000, h in 64u32..1200, cols in 1u32..5, rows in 1u32..5) -> GridConfig {
        GridConfig::new(w, h, cols.min(w / 32), rows.min(h / 32))
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!(close(iou(&a, &a), 1.0));
        prop_assert!(a.intersection_area(&b) <= a.area().min(b.area()) + 1e-9);
    }

    #[test]
    fn iou_is_invariant_under_translation_and_scaling(a in bbox(), b in bbox(), dx in -300.0..300.0f64, s in 0.1..10.0f64) {
        let v = iou(&a, &b);
        prop_assert!(close(v, iou(&a.translate(dx, -dx), &b.translate(dx, -dx))));
        let scale = |r: &BBox| BBox::new(r.x_min * s, r.y_min * s, r.x_max * s, r.y_max * s).unwrap();
        prop_assert!((v - iou(&scale(&a), &scale(&b))).abs() <= 1e-9);
    }

    #[test]
    fn hflip_is_an_involution(a in bbox(), w in 500.0..1000.0f64) {
        let f = a.hflip(w);
        prop_assert!(close(f.width(), a.width()));
        let back = f.hflip(w);
        prop_assert!(close(back.x_min, a.x_min) && close(back.x_max, a.x_max));
        prop_assert_eq!((back.y_min, back.y_max), (a.y_min, a.y_max));
    }

    #[test]
    fn nms_ignores_input_order(dets in prop::collection::vec(det(), 0..30), rot in 0usize..30, t in 0.1..0.9f64, aware: bool) {
        let mut shuffled = dets.clone();
        shuffled.reverse();
        if !shuffled.is_empty() {
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
        }
        let out = nms(&dets, t, aware);
        prop_assert_eq!(&out, &nms(&shuffled, t, aware));
        prop_assert!(out.iter().all(|d| dets.contains(d)));
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn fusion_respects_cap_and_threshold(
        central in prop::collection::vec(det(), 0..25),
        dynamic in prop::collection::vec(det(), 0..25),
        full in prop::option::of(prop::collection::vec(det(), 0..10)),
        max_dets in 1usize..30,
        thresh in 0.0..0.5f64,
    ) {
        let cfg = FusionConfig { max_dets, final_score_thresh: thresh, ..FusionConfig::default() };
        let out = fuse(&central, &dynamic, full.as_deref(), &cfg, (500, 500));
        prop_assert!(out.len() <= max_dets);
        prop_assert!(out.iter().all(|d| d.score >= thresh));
        let theta = cfg.size_threshold(500, 500);
        if let Some(full) = &full {
            for d in &out {
                // With a full-image stream, tile boxes are small and full-image boxes large.
                let from_full = full.contains(d) && d.bbox.area() > theta;
                let from_tiles = (central.contains(d) || dynamic.contains(d)) && d.bbox.area() < theta;
                prop_assert!(from_full || from_tiles);
            }
        }
    }

    #[test]
    fn classification_matches_side_distances(g in grid(), fx in 0.0..1.0f64, fy in 0.0..1.0f64, w in 1.0..120.0f64, h in 1.0..120.0f64, pick in 0usize..64) {
        let tiles = make_grid(&g, "p").unwrap();
        let tile = &tiles[pick % tiles.len()];
        let r = tile.rect;
        let w = w.min(r.width());
        let h = h.min(r.height());
        let x0 = r.x_min + fx * (r.width() - w);
        let y0 = r.y_min + fy * (r.height() - h);
        let b = BBox::new(x0, y0, x0 + w, y0 + h).unwrap();
        let (tx, ty) = (g.threshold_x(), g.threshold_y());
        let near_x = |x: f64| x > 0.0 && x < g.width as f64 && ((x - b.x_min).abs() <= tx || (b.x_max - x).abs() <= tx);
        let near_y = |y: f64| y > 0.0 && y < g.height as f64 && ((y - b.y_min).abs() <= ty || (b.y_max - y).abs() <= ty);
        let any_x = near_x(r.x_min) || near_x(r.x_max);
        let any_y = near_y(r.y_min) || near_y(r.y_max);
        match classify_detection(&b, tile, &g).unwrap() {
            EdgeClass::Central => prop_assert!(!any_x && !any_y),
            EdgeClass::NearEdge(e) => {
                let pos = e.position as f64;
                match e.orientation {
                    Orientation::Vertical => prop_assert!(any_x && !any_y && (pos == r.x_min || pos == r.x_max) && near_x(pos)),
                    Orientation::Horizontal => prop_assert!(any_y && !any_x && (pos == r.y_min || pos == r.y_max) && near_y(pos)),
                }
            }
            EdgeClass::NearCorner(c) => {
                let (cx, cy) = (c.x as f64, c.y as f64);
                prop_assert!(cx == r.x_min || cx == r.x_max);
                prop_assert!(cy == r.y_min || cy == r.y_max);
                prop_assert!(near_x(cx) && near_y(cy));
            }
        }
    }

    #[test]
    fn dynamic_tiles_are_well_formed(g in grid(), boxes in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 2.0..150.0f64, 2.0..150.0f64, 0.0..1.0f64), 1..25)) {
        let tiles = make_grid(&g, "p").unwrap();
        let cfg = TilerConfig::default();
        let dets: Vec<Detection> = boxes
            .iter()
            .enumerate()
            .map(|(i, &(fx, fy, w, h, s))| {
                let t = &tiles[i % tiles.len()];
                let w = w.min(t.rect.width());
                let h = h.min(t.rect.height());
                let x0 = t.rect.x_min + fx * (t.rect.width() - w);
                let y0 = t.rect.y_min + fy * (t.rect.height() - h);
                Detection::new(BBox::new(x0, y0, x0 + w, y0 + h).unwrap(), 0, s, t.id.clone())
            })
            .collect();
        let grouping = group_by_boundary(&dets, &tiles, &g, &cfg).unwrap();
        let grouped: usize = grouping.groups.iter().map(|gr| gr.members.len()).sum();
        prop_assert_eq!(grouping.central.len() + grouped + grouping.low_score.len(), dets.len());

        let (pw, ph) = (g.patch_width() as f64, g.patch_height() as f64);
        for group in &grouping.groups {
            let p = propose(group, &g, &cfg, "p").unwrap();
            let r = p.tile.rect;
            prop_assert!(g.image_rect().contains_box(&r));
            for v in [r.x_min, r.y_min, r.x_max, r.y_max] {
                prop_assert_eq!(v, v.round());
            }
            let members = group.members.iter().skip(1).fold(group.members[0].bbox, |u, m| u.union_bounds(&m.bbox));
            match group.anchor {
                Anchor::Edge(e) => {
                    let pos = e.position as f64;
                    let (across, along, lo, hi, patch_along) = match e.orientation {
                        Orientation::Vertical => (r.width(), r.height(), members.y_min, members.y_max, ph),
                        Orientation::Horizontal => (r.height(), r.width(), members.x_min, members.x_max, pw),
                    };
                    let (line_lo, line_hi, tile_lo, tile_hi) = match e.orientation {
                        Orientation::Vertical => (r.x_min, r.x_max, r.y_min, r.y_max),
                        Orientation::Horizontal => (r.y_min, r.y_max, r.x_min, r.x_max),
                    };
                    let patch_across = if e.orientation == Orientation::Vertical { pw } else { ph };
                    prop_assert_eq!(across, patch_across);
                    prop_assert!(line_lo < pos && pos < line_hi);
                    prop_assert!(along <= patch_along);
                    if hi - lo <= patch_along {
                        prop_assert!(tile_lo <= lo.floor() && hi.ceil() <= tile_hi, "members {}..{} outside {}..{}", lo, hi, tile_lo, tile_hi);
                    }
                }
                Anchor::Corner(c) => {
                    prop_assert_eq!((r.width(), r.height()), (pw, ph));
                    prop_assert!(r.contains_point(c.x as f64, c.y as f64));
                }
            }
        }
    }

    #[test]
    fn dedupe_is_stable_and_covering(rects in prop::collection::vec((0.0..400.0f64, 0.0..300.0f64, 10.0..200.0f64, 10.0..200.0f64), 0..12)) {
        let proposals: Vec<DynamicTileProposal> = rects
            .iter()
            .enumerate()
            .map(|(i, &(x, y, w, h))| DynamicTileProposal {
                tile: TileSpec {
                    id: TileId(format!("d{i}")),
                    rect: BBox::new(x.round(), y.round(), (x + w).round(), (y + h).round()).unwrap(),
                    kind: TileKind::FullImage,
                },
                origins: vec![],
            })
            .collect();
        let cfg = MinimizerConfig::default();
        let dims = (220, 220);
        let out = dedupe_proposals(&proposals, dims, &cfg);
        prop_assert!(out.len() <= proposals.len());
        prop_assert_eq!(&dedupe_proposals(&out, dims, &cfg), &out);
        for p in &proposals {
            prop_assert!(out.iter().any(|o| o.tile.rect.contains_box(&p.tile.rect)));
        }
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                let u = a.tile.rect.union_bounds(&b.tile.rect);
                let fits = u.width() <= dims.0 as f64 && u.height() <= dims.1 as f64;
                prop_assert!(!(fits && iou(&a.tile.rect, &b.tile.rect) > cfg.dedupe_iou));
            }
        }
    }

    #[test]
    fn ap_is_bounded_and_monotone(flags in prop::collection::vec(any::<bool>(), 0..40), extra in 0usize..5, flip in 0usize..40) {
        let tps = flags.iter().filter(|&&f| f).count();
        let num_gt = tps + extra;
        let ap = average_precision(&flags, num_gt, 101);
        prop_assert!((0.0..=1.0).contains(&ap));

        // A false positive ranked last never raises AP.
        let mut with_fp = flags.clone();
        with_fp.push(false);
        prop_assert!(average_precision(&with_fp, num_gt, 101) <= ap + 1e-12);

        // Turning a false positive into a true positive never lowers AP.
        if let Some(i) = (0..flags.len()).map(|k| (k + flip) % flags.len()).find(|&k| !flags[k]) {
            let mut better = flags.clone();
            better[i] = true;
            prop_assert!(average_precision(&better, num_gt + 1, 101) + 1e-12 >= average_precision(&flags, num_gt + 1, 101));
        }
    }

    #[test]
    fn evaluation_ignores_prediction_order(
        gts in prop::collection::vec((bbox(), 0u32..2), 0..6),
        preds in prop::collection::vec((bbox(), 0u32..2, 0.01..1.0f64), 0..8),
        rot in 0usize..8,
    ) {
        let ds = CocoDataset {
            images: vec![CocoImage { id: 1, width: 600, height: 600, file_name: String::new() }],
            annotations: gts
                .iter()
                .enumerate()
                .map(|(i, (b, c))| CocoAnnotation {
                    id: i as u64 + 1,
                    image_id: 1,
                    category_id: *c,
                    bbox: b.to_xywh(),
                    area: b.area(),
                    iscrowd: 0,
                })
                .collect(),
            categories: (0..2).map(|id| CocoCategory { id, name: format!("c{id}") }).collect(),
        };
        let results: Vec<CocoResult> = preds
            .iter()
            .map(|(b, c, s)| CocoResult { image_id: 1, category_id: *c, bbox: b.to_xywh(), score: *s })
            .collect();
        let mut permuted = results.clone();
        permuted.reverse();
        if !permuted.is_empty() {
            let k = rot % permuted.len();
            permuted.rotate_left(k);
        }
        let cfg = EvalConfig::default();
        let a = evaluate(&ds, &results, &cfg).unwrap();
        let b = evaluate(&ds, &permuted, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn strategy_names_round_trip(kind in 0usize..4, fi: bool, minimizer: bool, tta: bool, overlap in 0.0..0.49f64) {
        let mut name = match kind {
            0 => "full-image".to_string(),
            1 => "fixed-grid".to_string(),
            2 => format!("fixed-overlap:{overlap}"),
            _ => {
                let mut s = "dynamic".to_string();
                if fi { s.push_str("+fi"); }
                if minimizer { s.push_str("+minimizer"); }
                s
            }
        };
        if tta {
            name.push_str(",tta");
        }
        let s: Strategy = name.parse().unwrap();
        let again: Strategy = s.to_string().parse().unwrap();
        prop_assert_eq!(s, again);
    }
}
