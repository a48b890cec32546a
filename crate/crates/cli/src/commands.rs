use std::collections::BTreeSet;
use std::io::{self, Cursor};
use std::path::Path;

use anyhow::{anyhow, bail, Result};
use dyntile::benchmark::{format_table, parse_strategy_list, run_benchmark, suite, BenchRow, DEFAULT_STRATEGIES};
use dyntile::coco::{read_json, CocoDataset, CocoResult};
use dyntile::detector::{serve_stdio, ReplayRecord};
use dyntile::pipeline::RunOutput;
use dyntile::scene::{render_scene, scenes_from_coco, scenes_to_coco};
use dyntile::{evaluate, BBox, ColorBlobDetector, Error, EvalConfig, EvalResult, RunConfig, RunReport};
use image::{ImageFormat, RgbImage};
use serde::Serialize;

use crate::inputs::{jobs, load_inputs, resolve_config, BackendPlan};
use crate::output::Staged;
use crate::render::{annotate, Overlay};
use crate::{BenchArgs, EvalArgs, GenArgs, RenderArgs, RunArgs, WorkerArgs};

/// Exit status by error class: 2 configuration, 3 input files, 4 detector
/// backend, 1 anything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Parse { .. } | Error::Io { .. } | Error::Image(_) | Error::Json(_)) => 3,
        Some(Error::Backend(_) | Error::Protocol(_)) => 4,
        _ => 1,
    }
}

fn summary(rows: &[BenchRow], output: &RunOutput) -> String {
    let mut s = format_table(rows);
    for f in &output.report.failed {
        s.push_str(&format!("image {} failed: {}\n", f.image_id, f.error));
    }
    s
}

fn stage_run(staged: &mut Staged, output: &RunOutput, eval: Option<&EvalResult>, suffix: &str) -> Result<()> {
    staged.json(&format!("detections{suffix}.json"), &output.coco_results())?;
    staged.json(&format!("report{suffix}.json"), &output.report)?;
    if let Some(e) = eval {
        staged.json(&format!("eval{suffix}.json"), e)?;
    }
    Ok(())
}

fn config_snapshot(cfg: &RunConfig) -> String {
    format!("# fully resolved configuration; rerun with --config on this file\n{}", cfg.snapshot())
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    let jobs = jobs(args.jobs)?;
    let inputs = load_inputs(&args, &cfg)?;
    let plan = BackendPlan::new(&args, &cfg, &inputs)?;

    let output = dyntile::run_dataset(&inputs.images, &cfg.strategy, &cfg.pipeline, &|| plan.build(), jobs)?;
    let eval = match &inputs.gt {
        Some(gt) => Some(evaluate(gt, &output.coco_results(), &cfg.eval)?),
        None => None,
    };

    let mut staged = Staged::default();
    stage_run(&mut staged, &output, eval.as_ref(), "")?;
    let text = summary(&[BenchRow::from_output(&output, eval.as_ref())], &output);
    staged.text("summary.txt", text.clone());
    staged.text("config.toml", config_snapshot(&cfg));
    if let Some(sink) = &plan.sink {
        let mut records: Vec<ReplayRecord> = sink.lock().map_err(|_| anyhow!("recorder poisoned"))?.clone();
        records.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
        staged.json("replay.json", &records)?;
    }
    staged.commit(&args.out)?;
    print!("{text}");
    Ok(())
}

/// File-name-safe form of a strategy name.
fn slug(name: &str) -> String {
    name.replace(',', "+").replace(':', "_")
}

#[derive(Serialize)]
struct BenchEntry<'a> {
    row: &'a BenchRow,
    eval: &'a EvalResult,
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let cfg = resolve_config(args.suite.as_deref(), &args.overrides)?;
    let list = args.strategies.unwrap_or_else(|| DEFAULT_STRATEGIES.join(";"));
    let strategies = parse_strategy_list(&list)?;
    let jobs = jobs(args.jobs)?;
    let scenes = suite(&cfg)?;
    let runs = run_benchmark(&scenes, &strategies, &cfg, jobs)?;

    let mut staged = Staged::default();
    let rows: Vec<BenchRow> = runs.iter().map(|r| r.row.clone()).collect();
    let entries: Vec<BenchEntry> = runs.iter().map(|r| BenchEntry { row: &r.row, eval: &r.eval }).collect();
    staged.json("bench.json", &entries)?;
    let table = format_table(&rows);
    staged.text("bench.txt", table.clone());
    staged.text("config.toml", config_snapshot(&cfg));
    staged.json("scenes.json", &scenes_to_coco(&scenes, cfg.scene.num_categories))?;
    for r in &runs {
        stage_run(&mut staged, &r.output, None, &format!("-{}", slug(&r.row.strategy)))?;
    }
    staged.commit(&args.out)?;
    print!("{table}");
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let gt: CocoDataset = read_json(&args.gt)?;
    let preds: Vec<CocoResult> = read_json(&args.preds)?;
    let mut cfg = EvalConfig::default();
    if let Some(m) = args.max_dets {
        cfg.max_dets = m;
    }
    cfg.validate()?;
    let result = evaluate(&gt, &preds, &cfg)?;
    let mut staged = Staged::default();
    staged.json("eval.json", &result)?;
    staged.commit_file(&args.out)?;
    println!(
        "mAP@0.5 {}  mAP@0.5:0.95 {}  small {}  medium {}  large {}",
        fmt_metric(result.map_50),
        fmt_metric(result.map_5095),
        fmt_metric(result.map_50_small),
        fmt_metric(result.map_50_medium),
        fmt_metric(result.map_50_large)
    );
    Ok(())
}

/// The image id a render refers to: given explicitly, matched by file name,
/// or the only id mentioned anywhere.
fn pick_image_id(
    explicit: Option<u64>,
    image_path: Option<&Path>,
    gt: Option<&CocoDataset>,
    dets: &[CocoResult],
    report: Option<&RunReport>,
) -> Result<Option<u64>> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    if let (Some(path), Some(gt)) = (image_path, gt) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(im) = gt.images.iter().find(|im| im.file_name == name) {
            return Ok(Some(im.id));
        }
    }
    let mut ids: BTreeSet<u64> = dets.iter().map(|d| d.image_id).collect();
    if let Some(gt) = gt {
        ids.extend(gt.images.iter().map(|im| im.id));
    }
    if let Some(r) = report {
        ids.extend(r.per_image.iter().map(|s| s.image_id));
    }
    match ids.len() {
        0 => Ok(None),
        1 => Ok(ids.first().copied()),
        n => bail!(Error::config(format!("inputs mention {n} images; choose one with --image-id"))),
    }
}

fn xyxy(v: &[f64; 4]) -> Result<BBox> {
    Ok(BBox::new(v[0], v[1], v[2], v[3])?)
}

pub fn render(args: RenderArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let gt: Option<CocoDataset> = match (&args.gt, &args.scenes) {
        (Some(p), _) | (None, Some(p)) => Some(read_json(p)?),
        (None, None) => None,
    };
    let dets: Vec<CocoResult> = match &args.dets {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let report: Option<RunReport> = match &args.report {
        Some(p) => Some(read_json(p)?),
        None => None,
    };
    let image_id = pick_image_id(args.image_id, args.image.as_deref(), gt.as_ref(), &dets, report.as_ref())?;

    let base: RgbImage = if let Some(path) = &args.image {
        image::open(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
            .to_rgb8()
    } else {
        let scenes = scenes_from_coco(gt.as_ref().expect("--scenes was read"))?;
        let scene = scenes
            .iter()
            .find(|s| Some(s.image_id) == image_id)
            .ok_or_else(|| Error::config("no scene with the requested image id"))?;
        render_scene(scene)
    };
    let (w, h) = base.dimensions();

    let mut overlay = Overlay::default();
    if let (Some(gt), Some(id)) = (&gt, image_id) {
        if let Some(im) = gt.images.iter().find(|im| im.id == id) {
            if (im.width, im.height) != (w, h) {
                bail!(Error::contract(format!(
                    "image is {w}x{h} but ground truth image {id} is {}x{}",
                    im.width, im.height
                )));
            }
        }
        for a in gt.annotations.iter().filter(|a| a.image_id == id) {
            overlay.ground_truth.push(a.bbox()?);
        }
    }
    for d in dets.iter().filter(|d| Some(d.image_id) == image_id && d.score >= args.min_score) {
        overlay.detections.push(d.bbox()?);
    }
    if args.show_tiles {
        overlay.grid = Some(cfg.pipeline.grid_for(w, h));
        if let Some(stats) = report.as_ref().and_then(|r| r.per_image.iter().find(|s| Some(s.image_id) == image_id)) {
            overlay.dynamic_tiles = stats.dynamic_rects.iter().map(xyxy).collect::<Result<_>>()?;
        }
    }

    let out = annotate(&base, &overlay);
    let mut png = Cursor::new(Vec::new());
    out.write_to(&mut png, ImageFormat::Png)?;
    let mut staged = Staged::default();
    staged.bytes("render.png", png.into_inner());
    staged.commit_file(&args.out)
}

pub fn gen(args: GenArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let scenes = suite(&cfg)?;
    let ds = scenes_to_coco(&scenes, cfg.scene.num_categories);
    let mut staged = Staged::default();
    staged.json("scenes.json", &ds)?;
    staged.text("config.toml", config_snapshot(&cfg));
    if args.png {
        for (scene, im) in scenes.iter().zip(&ds.images) {
            let mut png = Cursor::new(Vec::new());
            render_scene(scene).write_to(&mut png, ImageFormat::Png)?;
            staged.bytes(&im.file_name, png.into_inner());
        }
    }
    staged.commit(&args.out)?;
    println!("{} scenes, {} objects", ds.images.len(), ds.annotations.len());
    Ok(())
}

pub fn worker(args: WorkerArgs) -> Result<()> {
    let mut det = ColorBlobDetector::new(args.categories, args.min_area);
    serve_stdio(io::stdin().lock(), io::stdout().lock(), &mut det)?;
    Ok(())
}
