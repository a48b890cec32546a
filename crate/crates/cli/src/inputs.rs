//! Turning command-line arguments into configs, images and backends.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use dyntile::benchmark::suite;
use dyntile::coco::{read_json, CocoDataset};
use dyntile::detector::{FileDetector, RecordSink, RecordingDetector, ReplayRecord};
use dyntile::scene::{scenes_from_coco, scenes_to_coco};
use dyntile::{Detector, Error, ImageInput, RunConfig, SimDetector, StdioDetector};

use crate::{ConfigArgs, DetectorKind, RunArgs};

pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        resolve_config(self.config.as_deref(), &self.overrides)
    }
}

pub fn jobs(requested: Option<usize>) -> Result<usize> {
    match requested {
        Some(0) => Err(Error::config("--jobs must be at least 1").into()),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Images to process plus the ground truth they came with, if any.
pub struct Inputs {
    pub images: Vec<ImageInput>,
    pub gt: Option<CocoDataset>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Image files of `dir` in name order.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!(Error::config(format!("no PNG or JPEG images in {}", dir.display())));
    }
    Ok(files)
}

fn image_dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()).into())
}

fn from_directory(dir: &Path, gt_path: Option<&Path>) -> Result<Inputs> {
    let files = list_images(dir)?;
    let Some(gt_path) = gt_path else {
        let images = files
            .into_iter()
            .zip(1u64..)
            .map(|(path, id)| {
                let (width, height) = image_dims(&path)?;
                Ok(ImageInput { image_id: id, width, height, scene: None, pixels: None, path: Some(path) })
            })
            .collect::<Result<_>>()?;
        return Ok(Inputs { images, gt: None });
    };

    let gt: CocoDataset = read_json(gt_path)?;
    let scenes: HashMap<u64, _> = scenes_from_coco(&gt)?.into_iter().map(|s| (s.image_id, Arc::new(s))).collect();
    let by_name: HashMap<&str, u64> = gt.images.iter().map(|im| (im.file_name.as_str(), im.id)).collect();
    let mut images = Vec::with_capacity(files.len());
    for path in files {
        let name = file_name(&path);
        let id = *by_name.get(name.as_str()).ok_or_else(|| {
            Error::parse(
                gt_path.display().to_string(),
                format!("images[].file_name: no entry for {name}"),
            )
        })?;
        let scene = scenes[&id].clone();
        let (width, height) = image_dims(&path)?;
        if (width, height) != (scene.width, scene.height) {
            bail!(Error::contract(format!(
                "{name} is {width}x{height} but the ground truth says {}x{}",
                scene.width, scene.height
            )));
        }
        images.push(ImageInput { image_id: id, width, height, scene: Some(scene), pixels: None, path: Some(path) });
    }
    images.sort_by_key(|i| i.image_id);
    Ok(Inputs { images, gt: Some(gt) })
}

pub fn load_inputs(args: &RunArgs, cfg: &RunConfig) -> Result<Inputs> {
    if let Some(path) = &args.scenes {
        let gt: CocoDataset = read_json(path)?;
        let images = scenes_from_coco(&gt)?.into_iter().map(|s| ImageInput::from_scene(Arc::new(s))).collect();
        return Ok(Inputs { images, gt: Some(gt) });
    }
    if let Some(dir) = &args.images {
        return from_directory(dir, args.gt.as_deref());
    }
    let scenes = suite(cfg)?;
    let gt = scenes_to_coco(&scenes, cfg.scene.num_categories);
    let images = scenes.into_iter().map(|s| ImageInput::from_scene(Arc::new(s))).collect();
    Ok(Inputs { images, gt: Some(gt) })
}

/// Backend construction for one run, checked up front so argument mistakes
/// surface before any work starts.
pub struct BackendPlan {
    kind: Plan,
    pub sink: Option<RecordSink>,
}

enum Plan {
    Sim(dyntile::SimDetectorConfig),
    File(Vec<ReplayRecord>),
    Stdio { program: String, args: Vec<String> },
}

impl BackendPlan {
    pub fn new(args: &RunArgs, cfg: &RunConfig, inputs: &Inputs) -> Result<Self> {
        let kind = match args.detector {
            DetectorKind::Sim => {
                if let Some(i) = inputs.images.iter().find(|i| i.scene.is_none()) {
                    bail!(Error::config(format!(
                        "the sim detector needs ground truth, but image {} has none; use --scenes, --generate or --gt",
                        i.image_id
                    )));
                }
                Plan::Sim(cfg.sim.clone())
            }
            DetectorKind::File => {
                let path = args
                    .replay
                    .as_ref()
                    .ok_or_else(|| Error::config("--detector file needs --replay FILE"))?;
                let records: Vec<ReplayRecord> = read_json(path)?;
                FileDetector::from_records(&records).with_context(|| format!("loading {}", path.display()))?;
                Plan::File(records)
            }
            DetectorKind::Stdio => {
                let program = args
                    .detector_cmd
                    .clone()
                    .ok_or_else(|| Error::config("--detector stdio needs --detector-cmd PROGRAM"))?;
                Plan::Stdio { program, args: args.detector_args.clone() }
            }
        };
        Ok(Self { kind, sink: args.record.then(RecordSink::default) })
    }

    pub fn build(&self) -> dyntile::Result<Box<dyn Detector>> {
        let det: Box<dyn Detector> = match &self.kind {
            Plan::Sim(c) => Box::new(SimDetector::new(c.clone())?),
            Plan::File(records) => Box::new(FileDetector::from_records(records)?),
            Plan::Stdio { program, args } => Box::new(StdioDetector::spawn(program, args)?),
        };
        Ok(match &self.sink {
            Some(sink) => Box::new(RecordingDetector::with_sink(det, sink.clone())),
            None => det,
        })
    }
}
