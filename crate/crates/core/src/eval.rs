//! COCO-protocol box evaluation: greedy matching, 101-point interpolated AP,
//! and area-range ignore semantics.
//!
//! Areas are taken from the boxes themselves. Area ranges are half-open, so
//! small, medium and large partition all boxes. A bucket without ground truth
//! yields `None` rather than zero.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::coco::{CocoDataset, CocoResult};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub min: f64,
    pub max: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange {
        min: 0.0,
        max: f64::INFINITY,
    };
    pub const SMALL: AreaRange = AreaRange { min: 0.0, max: 1024.0 };
    pub const MEDIUM: AreaRange = AreaRange {
        min: 1024.0,
        max: 9216.0,
    };
    pub const LARGE: AreaRange = AreaRange {
        min: 9216.0,
        max: f64::INFINITY,
    };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.min && area < self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Detections kept per image, highest scores first, across categories.
    pub max_dets: usize,
    pub recall_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            max_dets: 1000,
            recall_points: 101,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.iter().any(|v| !(*v > 0.0 && *v < 1.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("iou thresholds must be strictly increasing in (0, 1)"));
        }
        if !t.contains(&0.5) {
            return Err(Error::config("iou thresholds must include 0.5"));
        }
        if self.max_dets == 0 {
            return Err(Error::config("eval max_dets must be at least 1"));
        }
        if self.recall_points < 2 {
            return Err(Error::config("eval needs at least 2 recall points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category_id: u32,
    pub gt_count: usize,
    pub ap_50: Option<f64>,
    pub ap_5095: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub map_50: Option<f64>,
    pub map_5095: Option<f64>,
    pub map_50_small: Option<f64>,
    pub map_50_medium: Option<f64>,
    pub map_50_large: Option<f64>,
    pub per_category: Vec<CategoryAp>,
}

/// Greedy matching of one image and category.
///
/// `preds` must be in descending score order. Each prediction claims the
/// unmatched ground truth with the highest IoU at or above `iou_thresh`.
/// Returns the matched ground-truth index per prediction.
pub fn match_detections(preds: &[BBox], gts: &[BBox], iou_thresh: f64) -> Vec<Option<usize>> {
    let ignore = vec![false; gts.len()];
    match_with_ignore(preds, gts, &ignore, iou_thresh)
}

/// Matching with ignored ground truth. Non-ignored ground truth is preferred
/// whenever one qualifies; otherwise the best ignored one is taken.
fn match_with_ignore(preds: &[BBox], gts: &[BBox], ignore: &[bool], iou_thresh: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for pass_ignored in [false, true] {
                for (g, gt) in gts.iter().enumerate() {
                    if taken[g] || ignore[g] != pass_ignored {
                        continue;
                    }
                    let v = iou(p, gt);
                    if v >= iou_thresh && best.is_none_or(|(_, b)| v >= b) {
                        best = Some((g, v));
                    }
                }
                if best.is_some() {
                    break;
                }
            }
            let g = best.map(|(g, _)| g);
            if let Some(g) = g {
                taken[g] = true;
            }
            g
        })
        .collect()
}

/// 101-point interpolated AP from score-ordered TP flags.
pub fn average_precision(tp_flags: &[bool], num_gt: usize, recall_points: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let steps = recall_points - 1;
    let total: f64 = (0..recall_points)
        .map(|k| {
            let r = k as f64 / steps as f64;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    total / recall_points as f64
}

struct Pred {
    bbox: BBox,
    score: f64,
}

struct Gt {
    bbox: BBox,
}

fn by_score(a: &Pred, b: &Pred) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
}

type Key = (u32, u64);

/// AP for one category at one threshold and range, or `None` when the range
/// holds no ground truth of that category.
fn category_ap(
    images: &BTreeSet<u64>,
    preds: &HashMap<Key, Vec<Pred>>,
    gts: &HashMap<Key, Vec<Gt>>,
    category: u32,
    thresh: f64,
    range: AreaRange,
    recall_points: usize,
) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut num_gt = 0;
    let empty_p: Vec<Pred> = Vec::new();
    let empty_g: Vec<Gt> = Vec::new();
    for &img in images {
        let ps = preds.get(&(category, img)).unwrap_or(&empty_p);
        let gs = gts.get(&(category, img)).unwrap_or(&empty_g);
        let ignore: Vec<bool> = gs.iter().map(|g| !range.contains(g.bbox.area())).collect();
        num_gt += ignore.iter().filter(|i| !**i).count();
        let pboxes: Vec<BBox> = ps.iter().map(|p| p.bbox).collect();
        let gboxes: Vec<BBox> = gs.iter().map(|g| g.bbox).collect();
        let m = match_with_ignore(&pboxes, &gboxes, &ignore, thresh);
        for (p, g) in ps.iter().zip(m) {
            match g {
                Some(g) if ignore[g] => {}
                Some(_) => scored.push((p.score, true)),
                None if !range.contains(p.bbox.area()) => {}
                None => scored.push((p.score, false)),
            }
        }
    }
    if num_gt == 0 {
        return None;
    }
    // stable: ties keep image order, then in-image order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let flags: Vec<bool> = scored.iter().map(|s| s.1).collect();
    Some(average_precision(&flags, num_gt, recall_points))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn evaluate(gt: &CocoDataset, preds: &[CocoResult], cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let images: BTreeSet<u64> = gt.images.iter().map(|i| i.id).collect();
    let mut gts: HashMap<Key, Vec<Gt>> = HashMap::new();
    let mut categories: BTreeSet<u32> = gt.categories.iter().map(|c| c.id).collect();
    let mut seen_ann = HashSet::new();
    for a in &gt.annotations {
        if !images.contains(&a.image_id) {
            return Err(Error::parse("annotations", format!("annotation {} names unknown image {}", a.id, a.image_id)));
        }
        if !seen_ann.insert(a.id) {
            return Err(Error::parse("annotations", format!("duplicate annotation id {}", a.id)));
        }
        categories.insert(a.category_id);
        gts.entry((a.category_id, a.image_id)).or_default().push(Gt { bbox: a.bbox()? });
    }

    let mut per_image: BTreeMap<u64, Vec<(u32, Pred)>> = BTreeMap::new();
    for p in preds {
        if !images.contains(&p.image_id) {
            return Err(Error::parse("results", format!("prediction for unknown image {}", p.image_id)));
        }
        if !p.score.is_finite() {
            return Err(Error::parse("results", format!("non-finite score for image {}", p.image_id)));
        }
        per_image.entry(p.image_id).or_default().push((
            p.category_id,
            Pred {
                bbox: p.bbox()?,
                score: p.score,
            },
        ));
    }
    let mut by_key: HashMap<Key, Vec<Pred>> = HashMap::new();
    for (img, mut list) in per_image {
        list.sort_by(|a, b| by_score(&a.1, &b.1).then(a.0.cmp(&b.0)));
        list.truncate(cfg.max_dets);
        for (cat, p) in list {
            by_key.entry((cat, img)).or_default().push(p);
        }
    }

    let at = |cat: u32, t: f64, r: AreaRange| category_ap(&images, &by_key, &gts, cat, t, r, cfg.recall_points);
    let mut per_category = Vec::new();
    let (mut ap50, mut ap_all) = (Vec::new(), Vec::new());
    let (mut small, mut medium, mut large) = (Vec::new(), Vec::new(), Vec::new());
    for &cat in &categories {
        let gt_count = images
            .iter()
            .map(|i| gts.get(&(cat, *i)).map_or(0, Vec::len))
            .sum();
        let per_t: Vec<Option<f64>> = cfg.iou_thresholds.iter().map(|&t| at(cat, t, AreaRange::ALL)).collect();
        let a50 = at(cat, 0.5, AreaRange::ALL);
        let a5095 = per_t.iter().copied().collect::<Option<Vec<f64>>>().and_then(|v| mean(&v));
        if let Some(v) = a50 {
            ap50.push(v);
        }
        if let Some(v) = a5095 {
            ap_all.push(v);
        }
        for (bucket, range) in [
            (&mut small, AreaRange::SMALL),
            (&mut medium, AreaRange::MEDIUM),
            (&mut large, AreaRange::LARGE),
        ] {
            if let Some(v) = at(cat, 0.5, range) {
                bucket.push(v);
            }
        }
        per_category.push(CategoryAp {
            category_id: cat,
            gt_count,
            ap_50: a50,
            ap_5095: a5095,
        });
    }
    Ok(EvalResult {
        map_50: mean(&ap50),
        map_5095: mean(&ap_all),
        map_50_small: mean(&small),
        map_50_medium: mean(&medium),
        map_50_large: mean(&large),
        per_category,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::{CocoAnnotation, CocoCategory, CocoImage};

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn dataset(boxes: &[(u64, u32, BBox)]) -> CocoDataset {
        let mut ds = CocoDataset::default();
        let ids: BTreeSet<u64> = boxes.iter().map(|b| b.0).collect();
        for id in ids {
            ds.images.push(CocoImage {
                id,
                width: 2000,
                height: 2000,
                file_name: String::new(),
            });
        }
        for (i, (img, cat, bb)) in boxes.iter().enumerate() {
            ds.annotations.push(CocoAnnotation {
                id: i as u64 + 1,
                image_id: *img,
                category_id: *cat,
                bbox: bb.to_xywh(),
                area: bb.area(),
                iscrowd: 0,
            });
        }
        ds
    }

    fn pred(img: u64, cat: u32, bb: BBox, score: f64) -> CocoResult {
        CocoResult {
            image_id: img,
            category_id: cat,
            bbox: bb.to_xywh(),
            score,
        }
    }

    #[test]
    fn matching_examples() {
        let gt = [b(0.0, 0.0, 10.0, 10.0)];
        assert_eq!(match_detections(&[b(0.0, 0.0, 10.0, 6.0)], &gt, 0.5), vec![Some(0)]);
        let two = [b(0.0, 0.0, 10.0, 9.0), b(0.0, 0.0, 10.0, 8.0)];
        assert_eq!(match_detections(&two, &gt, 0.5), vec![Some(0), None]);
        // IoU 0.45
        assert_eq!(match_detections(&[b(0.0, 0.0, 10.0, 4.5)], &gt, 0.5), vec![None]);
    }

    #[test]
    fn ap_basics() {
        assert_eq!(average_precision(&[true, true], 2, 101), 1.0);
        assert_eq!(average_precision(&[], 3, 101), 0.0);
        // TP, FP, TP over 2 GT: precision 1 up to r=0.5, then 2/3
        let ap = average_precision(&[true, false, true], 2, 101);
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
        // trailing FP changes nothing
        assert_eq!(average_precision(&[true, false], 1, 101), 1.0);
    }

    #[test]
    fn hand_fixture() {
        let ds = dataset(&[(1, 0, b(0.0, 0.0, 10.0, 10.0))]);
        let r = evaluate(&ds, &[pred(1, 0, b(0.0, 0.0, 10.0, 6.0), 0.9)], &EvalConfig::default()).unwrap();
        assert_eq!(r.map_50, Some(1.0));
        assert_eq!(r.map_5095, Some(0.3));
        assert_eq!(r.map_50_small, Some(1.0));
        assert_eq!(r.map_50_medium, None);
        assert_eq!(r.map_50_large, None);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let boxes = [
            (1, 0, b(0.0, 0.0, 20.0, 20.0)),
            (1, 1, b(100.0, 100.0, 160.0, 150.0)),
            (2, 0, b(10.0, 10.0, 200.0, 300.0)),
        ];
        let ds = dataset(&boxes);
        let preds: Vec<_> = boxes.iter().map(|(i, c, bb)| pred(*i, *c, *bb, 1.0)).collect();
        let r = evaluate(&ds, &preds, &EvalConfig::default()).unwrap();
        for v in [r.map_50, r.map_5095, r.map_50_small, r.map_50_medium, r.map_50_large] {
            assert_eq!(v, Some(1.0));
        }
        let none = evaluate(&ds, &[], &EvalConfig::default()).unwrap();
        assert_eq!(none.map_50, Some(0.0));
    }

    #[test]
    fn no_ground_truth_is_undefined() {
        let mut ds = dataset(&[]);
        ds.images.push(CocoImage {
            id: 1,
            width: 10,
            height: 10,
            file_name: String::new(),
        });
        ds.categories.push(CocoCategory { id: 0, name: "a".into() });
        let r = evaluate(&ds, &[pred(1, 0, b(0.0, 0.0, 5.0, 5.0), 0.9)], &EvalConfig::default()).unwrap();
        assert_eq!(r.map_50, None);
        assert_eq!(r.per_category[0].ap_50, None);
    }

    #[test]
    fn ignore_semantics_for_size_buckets() {
        // one small and one large GT; the large prediction must not count as
        // a false positive in the small bucket
        let ds = dataset(&[(1, 0, b(0.0, 0.0, 10.0, 10.0)), (1, 0, b(100.0, 100.0, 300.0, 300.0))]);
        let preds = [
            pred(1, 0, b(100.0, 100.0, 300.0, 300.0), 0.99),
            pred(1, 0, b(0.0, 0.0, 10.0, 10.0), 0.5),
            pred(1, 0, b(500.0, 500.0, 505.0, 505.0), 0.4),
        ];
        let r = evaluate(&ds, &preds, &EvalConfig::default()).unwrap();
        assert_eq!(r.map_50_small, Some(1.0));
        assert_eq!(r.map_50_large, Some(1.0));
        assert_eq!(r.map_50_medium, None);
    }

    #[test]
    fn max_dets_is_enforced() {
        let ds = dataset(&[(1, 0, b(0.0, 0.0, 10.0, 10.0))]);
        let mut preds: Vec<_> = (0..5).map(|i| pred(1, 0, b(50.0 + i as f64 * 20.0, 0.0, 60.0 + i as f64 * 20.0, 10.0), 0.9)).collect();
        preds.push(pred(1, 0, b(0.0, 0.0, 10.0, 10.0), 0.1));
        let cfg = EvalConfig {
            max_dets: 5,
            ..EvalConfig::default()
        };
        assert_eq!(evaluate(&ds, &preds, &cfg).unwrap().map_50, Some(0.0));
        assert!(evaluate(&ds, &preds, &EvalConfig::default()).unwrap().map_50.unwrap() > 0.0);
    }

    #[test]
    fn unknown_image_is_rejected() {
        let ds = dataset(&[(1, 0, b(0.0, 0.0, 10.0, 10.0))]);
        assert!(evaluate(&ds, &[pred(9, 0, b(0.0, 0.0, 10.0, 10.0), 0.9)], &EvalConfig::default()).is_err());
    }
}
