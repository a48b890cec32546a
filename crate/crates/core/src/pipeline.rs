//! Strategy orchestration and forward-pass accounting.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::CocoResult;
use crate::detector::{DetectRequest, DetectResponse, Detector, ImageContext, Region, TileImage, TtaDetector};
use crate::error::{Error, Result};
use crate::fusion::{fuse, merge_plain, FusionConfig};
use crate::geometry::{make_grid, to_global, BBox, Detection, GridConfig, TileId, TileKind, TileSpec};
use crate::minimizer::{crop_pixels, dedupe_proposals, pack, remap_composite_detections, MinimizerConfig};
use crate::scene::{render_scene, Scene};
use crate::tiler::{accept_dynamic_predictions, group_by_boundary, propose, DynamicTileProposal, TilerConfig};

pub const DEFAULT_OVERLAP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    FullImage,
    FixedGrid,
    FixedOverlap { overlap: f64 },
    Dynamic { fi: bool, minimizer: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub tta: bool,
}

impl Strategy {
    pub const fn new(kind: StrategyKind) -> Self {
        Self { kind, tta: false }
    }

    pub const fn dynamic(fi: bool, minimizer: bool) -> Self {
        Self::new(StrategyKind::Dynamic { fi, minimizer })
    }

    pub fn validate(&self) -> Result<()> {
        if let StrategyKind::FixedOverlap { overlap } = self.kind {
            if !(0.0..0.5).contains(&overlap) {
                return Err(Error::config(format!("overlap fraction {overlap} outside [0, 0.5)")));
            }
        }
        Ok(())
    }
}

/// Parses `full-image`, `fixed-grid`, `fixed-overlap[:FRAC]` and
/// `dynamic[,fi][,minimizer]`, each optionally followed by `,tta`.
/// Modifiers may be separated by `,` or `+`.
impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split([',', '+']).map(str::trim);
        let head = parts.next().unwrap_or_default();
        let mut kind = match head {
            "full-image" => StrategyKind::FullImage,
            "fixed-grid" => StrategyKind::FixedGrid,
            "fixed-overlap" => StrategyKind::FixedOverlap { overlap: DEFAULT_OVERLAP },
            "dynamic" => StrategyKind::Dynamic {
                fi: false,
                minimizer: false,
            },
            h => match h.strip_prefix("fixed-overlap:") {
                Some(v) => StrategyKind::FixedOverlap {
                    overlap: v
                        .parse()
                        .map_err(|_| Error::config(format!("bad overlap fraction '{v}' in strategy '{s}'")))?,
                },
                None => return Err(Error::config(format!("unknown strategy '{s}'"))),
            },
        };
        let mut tta = false;
        for m in parts {
            match (m, &mut kind) {
                ("tta", _) if !tta => tta = true,
                ("fi", StrategyKind::Dynamic { fi, .. }) if !*fi => *fi = true,
                ("minimizer", StrategyKind::Dynamic { minimizer, .. }) if !*minimizer => *minimizer = true,
                _ => return Err(Error::config(format!("unexpected modifier '{m}' in strategy '{s}'"))),
            }
        }
        let st = Strategy { kind, tta };
        st.validate()?;
        Ok(st)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            StrategyKind::FullImage => f.write_str("full-image")?,
            StrategyKind::FixedGrid => f.write_str("fixed-grid")?,
            StrategyKind::FixedOverlap { overlap } => write!(f, "fixed-overlap:{overlap}")?,
            StrategyKind::Dynamic { fi, minimizer } => {
                f.write_str("dynamic")?;
                if fi {
                    f.write_str(",fi")?;
                }
                if minimizer {
                    f.write_str(",minimizer")?;
                }
            }
        }
        if self.tta {
            f.write_str(",tta")?;
        }
        Ok(())
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything besides the strategy that shapes a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cols: u32,
    pub rows: u32,
    pub edge_threshold_frac: f64,
    pub tiler: TilerConfig,
    pub minimizer: MinimizerConfig,
    pub fusion: FusionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cols: 3,
            rows: 2,
            edge_threshold_frac: GridConfig::DEFAULT_EDGE_THRESHOLD,
            tiler: TilerConfig::default(),
            minimizer: MinimizerConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn grid_for(&self, width: u32, height: u32) -> GridConfig {
        GridConfig {
            width,
            height,
            cols: self.cols,
            rows: self.rows,
            edge_threshold_frac: self.edge_threshold_frac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_for(self.cols.max(1) * 64, self.rows.max(1) * 64).validate()?;
        self.tiler.validate()?;
        self.minimizer.validate()?;
        self.fusion.validate()
    }
}

/// One image to process. Pixels come from `pixels`, else `path`, else are
/// rendered from `scene`, and are only materialized for backends that need
/// them.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub scene: Option<Arc<Scene>>,
    pub pixels: Option<Arc<RgbImage>>,
    pub path: Option<PathBuf>,
}

impl ImageInput {
    pub fn from_scene(scene: Arc<Scene>) -> Self {
        Self {
            image_id: scene.image_id,
            width: scene.width,
            height: scene.height,
            scene: Some(scene),
            pixels: None,
            path: None,
        }
    }

    fn load_pixels(&self) -> Result<Arc<RgbImage>> {
        if let Some(p) = &self.pixels {
            return Ok(p.clone());
        }
        if let Some(path) = &self.path {
            let img = image::open(path)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
                .to_rgb8();
            if img.dimensions() != (self.width, self.height) {
                return Err(Error::contract(format!(
                    "{} is {}x{}, expected {}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    self.width,
                    self.height
                )));
            }
            return Ok(Arc::new(img));
        }
        match &self.scene {
            Some(s) => Ok(Arc::new(render_scene(s))),
            None => Err(Error::contract(format!("image {} has no pixel source", self.image_id))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub image_id: u64,
    pub time_s: f64,
    pub forward_passes: usize,
    pub dynamic_tiles: usize,
    pub canvases: usize,
    /// Global xyxy rects of the dynamic tiles that were detected on.
    pub dynamic_rects: Vec<[f64; 4]>,
    /// Canvas detections dropped by the straddler rule.
    pub discarded: usize,
}

#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub detections: Vec<Detection>,
    pub stats: ImageStats,
}

/// Sends requests and keeps the forward-pass ledger.
struct Session<'a> {
    det: Box<dyn Detector + 'a>,
    source: Option<Arc<RgbImage>>,
    fill: u8,
    passes: usize,
}

impl Session<'_> {
    fn submit(&mut self, mut tiles: Vec<TileImage>) -> Result<DetectResponse> {
        if let Some(src) = &self.source {
            for t in &mut tiles {
                t.pixels = Some(tile_pixels(&t.region, src, self.fill)?);
            }
        }
        let req = DetectRequest::new(tiles);
        req.validate()?;
        self.passes += req.len() * self.det.passes_per_tile();
        let resp = self.det.detect(&req)?;
        resp.check_against(&req)?;
        Ok(resp)
    }

    /// Detect on crops and return global detections tagged by tile.
    fn detect_crops(&mut self, tiles: &[TileSpec]) -> Result<Vec<Detection>> {
        if tiles.is_empty() {
            return Ok(Vec::new());
        }
        let resp = self.submit(tiles.iter().map(|t| TileImage::crop(t.id.clone(), t.rect)).collect())?;
        let mut out = Vec::new();
        for t in tiles {
            for d in resp.get(&t.id).unwrap_or_default() {
                let mut g = to_global(d, t)?;
                g.source = t.id.clone();
                out.push(g);
            }
        }
        Ok(out)
    }
}

fn tile_pixels(region: &Region, src: &RgbImage, fill: u8) -> Result<RgbImage> {
    match region {
        Region::Crop(r) => crop_pixels(src, r),
        Region::Composite { width, height, slots } => {
            let mut img = RgbImage::from_pixel(*width, *height, image::Rgb([fill, fill, fill]));
            for s in slots {
                let crop = crop_pixels(src, &s.src_rect)?;
                image::imageops::replace(&mut img, &crop, s.dest_x as i64, s.dest_y as i64);
            }
            Ok(img)
        }
    }
}

/// Cells of a fixed overlapping grid. The stride is
/// `floor((1 - overlap) * patch)` and the last row and column sit flush with
/// the image edge.
pub fn overlap_grid(grid: &GridConfig, overlap: f64, prefix: &str) -> Result<Vec<TileSpec>> {
    grid.validate()?;
    if !(0.0..0.5).contains(&overlap) {
        return Err(Error::config(format!("overlap fraction {overlap} outside [0, 0.5)")));
    }
    let starts = |extent: u32, patch: u32| -> Vec<u32> {
        let stride = (((1.0 - overlap) * patch as f64).floor() as u32).max(1);
        let mut v: Vec<u32> = (0..).map(|i| i * stride).take_while(|s| s + patch < extent).collect();
        v.push(extent - patch);
        v
    };
    let (pw, ph) = (grid.patch_width(), grid.patch_height());
    let mut out = Vec::new();
    for (row, y) in starts(grid.height, ph).into_iter().enumerate() {
        for (col, x) in starts(grid.width, pw).into_iter().enumerate() {
            let (row, col) = (row as u32, col as u32);
            out.push(TileSpec {
                id: TileId(format!("{prefix}/overlap/r{row}c{col}")),
                rect: BBox {
                    x_min: x as f64,
                    y_min: y as f64,
                    x_max: (x + pw) as f64,
                    y_max: (y + ph) as f64,
                },
                kind: TileKind::Overlap { row, col },
            });
        }
    }
    Ok(out)
}

fn full_image_tile(grid: &GridConfig, prefix: &str) -> TileSpec {
    TileSpec {
        id: TileId(format!("{prefix}/full")),
        rect: grid.image_rect(),
        kind: TileKind::FullImage,
    }
}

fn xyxy(b: &BBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

/// Run one strategy on one image.
///
/// The ledger counts every tile-image submitted, times the backend's passes
/// per tile (two under flip augmentation).
pub fn run_image(
    input: &ImageInput,
    strategy: &Strategy,
    cfg: &PipelineConfig,
    backend: &mut dyn Detector,
) -> Result<ImageOutcome> {
    strategy.validate()?;
    let grid = cfg.grid_for(input.width, input.height);
    grid.validate()?;
    let source = if backend.needs_pixels() {
        Some(input.load_pixels()?)
    } else {
        None
    };
    let start = Instant::now();
    let det: Box<dyn Detector + '_> = if strategy.tta {
        Box::new(TtaDetector::new(backend, cfg.fusion.nms_iou, cfg.fusion.class_aware))
    } else {
        Box::new(backend)
    };
    let mut session = Session {
        det,
        source,
        fill: cfg.minimizer.fill,
        passes: 0,
    };
    session.det.begin_image(&ImageContext {
        image_id: input.image_id,
        width: input.width,
        height: input.height,
        scene: input.scene.clone(),
    })?;

    let prefix = input.image_id.to_string();
    let mut stats = ImageStats {
        image_id: input.image_id,
        time_s: 0.0,
        forward_passes: 0,
        dynamic_tiles: 0,
        canvases: 0,
        dynamic_rects: Vec::new(),
        discarded: 0,
    };
    let detections = match strategy.kind {
        StrategyKind::FullImage => {
            let dets = session.detect_crops(&[full_image_tile(&grid, &prefix)])?;
            merge_plain(&dets, &cfg.fusion)
        }
        StrategyKind::FixedGrid => {
            let dets = session.detect_crops(&make_grid(&grid, &prefix)?)?;
            merge_plain(&dets, &cfg.fusion)
        }
        StrategyKind::FixedOverlap { overlap } => {
            let dets = session.detect_crops(&overlap_grid(&grid, overlap, &prefix)?)?;
            merge_plain(&dets, &cfg.fusion)
        }
        StrategyKind::Dynamic { fi, minimizer } => {
            run_dynamic(&mut session, &grid, cfg, &prefix, fi, minimizer, &mut stats)?
        }
    };
    stats.forward_passes = session.passes;
    stats.time_s = start.elapsed().as_secs_f64();
    Ok(ImageOutcome { detections, stats })
}

fn run_dynamic(
    session: &mut Session<'_>,
    grid: &GridConfig,
    cfg: &PipelineConfig,
    prefix: &str,
    use_fi: bool,
    use_minimizer: bool,
    stats: &mut ImageStats,
) -> Result<Vec<Detection>> {
    let base = make_grid(grid, prefix)?;
    let base_dets = session.detect_crops(&base)?;
    let grouping = group_by_boundary(&base_dets, &base, grid, &cfg.tiler)?;
    let mut proposals = grouping
        .groups
        .iter()
        .map(|g| propose(g, grid, &cfg.tiler, prefix))
        .collect::<Result<Vec<_>>>()?;
    let canvas_dims = (grid.patch_width(), grid.patch_height());
    if use_minimizer {
        proposals = dedupe_proposals(&proposals, canvas_dims, &cfg.minimizer);
    }
    stats.dynamic_tiles = proposals.len();
    stats.dynamic_rects = proposals.iter().map(|p| xyxy(&p.tile.rect)).collect();

    let raw = if proposals.is_empty() {
        Vec::new()
    } else if use_minimizer {
        let canvases = pack(&proposals, canvas_dims, cfg.minimizer.gap_px, cfg.minimizer.fill, prefix)?;
        stats.canvases = canvases.len();
        let resp = session.submit(canvases.iter().map(|c| c.tile_image()).collect())?;
        let mut out = Vec::new();
        for c in &canvases {
            let (dets, dropped) =
                remap_composite_detections(resp.get(&c.canvas_id).unwrap_or_default(), c, cfg.minimizer.containment_frac);
            stats.discarded += dropped;
            out.extend(dets);
        }
        out
    } else {
        let tiles: Vec<TileSpec> = proposals.iter().map(|p| p.tile.clone()).collect();
        session.detect_crops(&tiles)?
    };

    let mut by_tile: HashMap<&TileId, Vec<Detection>> = HashMap::new();
    for d in raw {
        if let Some(p) = proposals.iter().find(|p| p.tile.id == d.source) {
            by_tile.entry(&p.tile.id).or_default().push(d);
        }
    }
    let accepted: Vec<Detection> = proposals
        .iter()
        .flat_map(|p: &DynamicTileProposal| {
            let dets = by_tile.get(&p.tile.id).map(Vec::as_slice).unwrap_or_default();
            accept_dynamic_predictions(dets, p, grid, &cfg.tiler)
        })
        .collect();

    let full = if use_fi {
        Some(session.detect_crops(&[full_image_tile(grid, prefix)])?)
    } else {
        None
    };
    Ok(fuse(
        &grouping.central,
        &accepted,
        full.as_deref(),
        &cfg.fusion,
        (grid.width, grid.height),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedImage {
    pub image_id: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub t_avg: f64,
    /// Population standard deviation of per-image time.
    pub t_std: f64,
    pub total_passes: usize,
}

impl Aggregate {
    pub fn from_stats(stats: &[ImageStats]) -> Self {
        let times: Vec<f64> = stats.iter().map(|s| s.time_s).collect();
        let (t_avg, t_std) = mean_std(&times);
        Self {
            images: stats.len(),
            t_avg,
            t_std,
            total_passes: stats.iter().map(|s| s.forward_passes).sum(),
        }
    }
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub config: PipelineConfig,
    pub per_image: Vec<ImageStats>,
    pub failed: Vec<FailedImage>,
    pub aggregate: Aggregate,
}

impl RunReport {
    /// The report with every timing field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for s in &mut r.per_image {
            s.time_s = 0.0;
        }
        r.aggregate.t_avg = 0.0;
        r.aggregate.t_std = 0.0;
        r
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Final detections per successful image, in image-id order.
    pub detections: Vec<(u64, Vec<Detection>)>,
}

impl RunOutput {
    pub fn coco_results(&self) -> Vec<CocoResult> {
        to_coco_results(&self.detections)
    }
}

pub fn to_coco_results(dets: &[(u64, Vec<Detection>)]) -> Vec<CocoResult> {
    dets.iter()
        .flat_map(|(id, ds)| {
            ds.iter().map(move |d| CocoResult {
                image_id: *id,
                category_id: d.category_id,
                bbox: d.bbox.to_xywh(),
                score: d.score,
            })
        })
        .collect()
}

/// Creates one backend per worker.
pub type BackendFactory<'a> = dyn Fn() -> Result<Box<dyn Detector>> + Sync + 'a;

/// Run a strategy over many images.
///
/// Images are split into `jobs` contiguous chunks processed in parallel, each
/// with its own backend. A failing image is recorded and skipped; the run
/// fails only when no image succeeds. Output is ordered by image id.
pub fn run_dataset(
    inputs: &[ImageInput],
    strategy: &Strategy,
    cfg: &PipelineConfig,
    factory: &BackendFactory<'_>,
    jobs: usize,
) -> Result<RunOutput> {
    if inputs.is_empty() {
        return Err(Error::Run("no images to process".into()));
    }
    strategy.validate()?;
    cfg.validate()?;
    let jobs = jobs.clamp(1, inputs.len());
    let chunk = inputs.len().div_ceil(jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Run(format!("thread pool: {e}")))?;
    type Chunk = Vec<(u64, Result<ImageOutcome>)>;
    let chunks: Vec<Result<Chunk>> = pool.install(|| {
        inputs
            .par_chunks(chunk)
            .map(|part| {
                let mut backend = factory()?;
                Ok(part
                    .iter()
                    .map(|input| {
                        let r = run_image(input, strategy, cfg, backend.as_mut());
                        if let Err(e) = &r {
                            log::warn!("image {} failed: {e}", input.image_id);
                        }
                        (input.image_id, r)
                    })
                    .collect())
            })
            .collect()
    });

    let mut results = Vec::with_capacity(inputs.len());
    for c in chunks {
        results.extend(c?);
    }
    results.sort_by_key(|(id, _)| *id);
    let mut per_image = Vec::new();
    let mut failed = Vec::new();
    let mut detections = Vec::new();
    for (image_id, r) in results {
        match r {
            Ok(o) => {
                per_image.push(o.stats);
                detections.push((image_id, o.detections));
            }
            Err(e) => failed.push(FailedImage {
                image_id,
                error: e.to_string(),
            }),
        }
    }
    if per_image.is_empty() {
        let first = failed.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::Run(format!("all {} images failed; first error: {first}", failed.len())));
    }
    let aggregate = Aggregate::from_stats(&per_image);
    Ok(RunOutput {
        report: RunReport {
            strategy: *strategy,
            config: cfg.clone(),
            per_image,
            failed,
            aggregate,
        },
        detections,
    })
}
