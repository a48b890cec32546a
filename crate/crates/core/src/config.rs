//! Flat `section.key = value` run configuration.
//!
//! Files are TOML. Keys may be written dotted (`grid.cols = 3`) or inside a
//! `[grid]` table; both flatten to the same key. Unknown keys are rejected
//! and every section is validated after loading. [`RunConfig::snapshot`]
//! writes the fully resolved configuration back in the same format.

use std::fmt::Write as _;
use std::path::Path;

use toml::{Table, Value};

use crate::detector::SimDetectorConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::pipeline::{PipelineConfig, Strategy};
use crate::scene::SceneConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub strategy: Strategy,
    pub sim: SimDetectorConfig,
    pub scene: SceneConfig,
    /// Number of scenes in a generated suite.
    pub scene_count: usize,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            strategy: Strategy::dynamic(true, true),
            sim: SimDetectorConfig::default(),
            scene: SceneConfig::default(),
            scene_count: 20,
            eval: EvalConfig::default(),
        }
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::config(format!("{key}: expected a number, got {v}"))),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::config(format!("{key}: expected a non-negative integer, got {v}"))),
    }
}

fn as_u32(key: &str, v: &Value) -> Result<u32> {
    u32::try_from(as_u64(key, v)?).map_err(|_| Error::config(format!("{key}: {v} out of range")))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::config(format!("{key}: expected true or false, got {v}")))
}

fn as_pairs(key: &str, v: &Value) -> Result<Vec<(u32, u32)>> {
    let bad = || Error::config(format!("{key}: expected a list of [a, b] category pairs"));
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|p| match p.as_array().map(Vec::as_slice) {
            Some([a, b]) => Ok((as_u32(key, a)?, as_u32(key, b)?)),
            _ => Err(bad()),
        })
        .collect()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("config syntax: {e}")))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = RunConfig::default();
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.strategy.validate()?;
        self.sim.validate()?;
        self.scene.validate()?;
        self.eval.validate()?;
        if self.scene_count == 0 {
            return Err(Error::config("scene.count must be at least 1"));
        }
        Ok(())
    }

    /// Apply one flattened key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let p = &mut self.pipeline;
        let s = &mut self.scene;
        let d = &mut self.sim;
        match key {
            "grid.cols" => p.cols = as_u32(key, v)?,
            "grid.rows" => p.rows = as_u32(key, v)?,
            "grid.edge_threshold" => p.edge_threshold_frac = as_f64(key, v)?,
            "tiler.proposal_score_thresh" => p.tiler.proposal_score_thresh = as_f64(key, v)?,
            "tiler.pad_frac" => p.tiler.pad_frac = as_f64(key, v)?,
            "tiler.min_extent_frac" => p.tiler.min_extent_frac = as_f64(key, v)?,
            "tiler.band_frac" => p.tiler.band_frac = as_f64(key, v)?,
            "minimizer.dedupe_iou" => p.minimizer.dedupe_iou = as_f64(key, v)?,
            "minimizer.gap_px" => p.minimizer.gap_px = as_u32(key, v)?,
            "minimizer.containment_frac" => p.minimizer.containment_frac = as_f64(key, v)?,
            "minimizer.fill" => {
                p.minimizer.fill =
                    u8::try_from(as_u64(key, v)?).map_err(|_| Error::config(format!("{key}: {v} exceeds 255")))?
            }
            "fusion.alpha" => p.fusion.alpha = as_f64(key, v)?,
            "fusion.nms_iou" => p.fusion.nms_iou = as_f64(key, v)?,
            "fusion.class_aware" => p.fusion.class_aware = as_bool(key, v)?,
            "fusion.max_dets" => p.fusion.max_dets = as_u64(key, v)? as usize,
            "fusion.final_score_thresh" => p.fusion.final_score_thresh = as_f64(key, v)?,
            "strategy.name" => {
                let text = v
                    .as_str()
                    .ok_or_else(|| Error::config(format!("{key}: expected a string")))?;
                self.strategy = text.parse()?;
            }
            "sim.loc_jitter_frac" => d.loc_jitter_frac = as_f64(key, v)?,
            "sim.score_gamma" => d.score_gamma = as_f64(key, v)?,
            "sim.score_noise" => d.score_noise = as_f64(key, v)?,
            "sim.miss_prob" => d.miss_prob = as_f64(key, v)?,
            "sim.confuse_prob" => d.confuse_prob = as_f64(key, v)?,
            "sim.confuse_visibility" => d.confuse_visibility = as_f64(key, v)?,
            "sim.min_visible_area_px" => d.min_visible_area_px = as_f64(key, v)?,
            "sim.confusable" => d.confusable = as_pairs(key, v)?,
            "sim.seed" => d.seed = as_u64(key, v)?,
            "scene.width" => s.width = as_u32(key, v)?,
            "scene.height" => s.height = as_u32(key, v)?,
            "scene.object_count" => s.object_count = as_u64(key, v)? as usize,
            "scene.num_categories" => s.num_categories = as_u32(key, v)?,
            "scene.area_min" => s.area_min = as_f64(key, v)?,
            "scene.area_max" => s.area_max = as_f64(key, v)?,
            "scene.aspect_min" => s.aspect_min = as_f64(key, v)?,
            "scene.aspect_max" => s.aspect_max = as_f64(key, v)?,
            "scene.boundary_bias" => s.boundary_bias = as_f64(key, v)?,
            "scene.corner_bias" => s.corner_bias = as_f64(key, v)?,
            "scene.max_overlap_iou" => s.max_overlap_iou = as_f64(key, v)?,
            "scene.seed" => s.seed = as_u64(key, v)?,
            "scene.count" => self.scene_count = as_u64(key, v)? as usize,
            "eval.max_dets" => self.eval.max_dets = as_u64(key, v)? as usize,
            _ => return Err(Error::config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override. The value is read as a TOML literal and
    /// falls back to a plain string, so `strategy.name=fixed-grid` needs no
    /// quotes. The result is validated.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{assignment}' is not of the form key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)?;
        self.validate()
    }

    /// Every key with its resolved value, in documentation order.
    pub fn entries(&self) -> Vec<(&'static str, Value)> {
        let p = &self.pipeline;
        let s = &self.scene;
        let d = &self.sim;
        let f = Value::Float;
        let i = |v: u64| Value::Integer(v as i64);
        vec![
            ("grid.cols", i(p.cols.into())),
            ("grid.rows", i(p.rows.into())),
            ("grid.edge_threshold", f(p.edge_threshold_frac)),
            ("tiler.proposal_score_thresh", f(p.tiler.proposal_score_thresh)),
            ("tiler.pad_frac", f(p.tiler.pad_frac)),
            ("tiler.min_extent_frac", f(p.tiler.min_extent_frac)),
            ("tiler.band_frac", f(p.tiler.band_frac)),
            ("minimizer.dedupe_iou", f(p.minimizer.dedupe_iou)),
            ("minimizer.gap_px", i(p.minimizer.gap_px.into())),
            ("minimizer.containment_frac", f(p.minimizer.containment_frac)),
            ("minimizer.fill", i(p.minimizer.fill.into())),
            ("fusion.alpha", f(p.fusion.alpha)),
            ("fusion.nms_iou", f(p.fusion.nms_iou)),
            ("fusion.class_aware", Value::Boolean(p.fusion.class_aware)),
            ("fusion.max_dets", i(p.fusion.max_dets as u64)),
            ("fusion.final_score_thresh", f(p.fusion.final_score_thresh)),
            ("strategy.name", Value::String(self.strategy.to_string())),
            ("sim.loc_jitter_frac", f(d.loc_jitter_frac)),
            ("sim.score_gamma", f(d.score_gamma)),
            ("sim.score_noise", f(d.score_noise)),
            ("sim.miss_prob", f(d.miss_prob)),
            ("sim.confuse_prob", f(d.confuse_prob)),
            ("sim.confuse_visibility", f(d.confuse_visibility)),
            ("sim.min_visible_area_px", f(d.min_visible_area_px)),
            (
                "sim.confusable",
                Value::Array(
                    d.confusable
                        .iter()
                        .map(|&(a, b)| Value::Array(vec![i(a.into()), i(b.into())]))
                        .collect(),
                ),
            ),
            ("sim.seed", i(d.seed)),
            ("scene.width", i(s.width.into())),
            ("scene.height", i(s.height.into())),
            ("scene.object_count", i(s.object_count as u64)),
            ("scene.num_categories", i(s.num_categories.into())),
            ("scene.area_min", f(s.area_min)),
            ("scene.area_max", f(s.area_max)),
            ("scene.aspect_min", f(s.aspect_min)),
            ("scene.aspect_max", f(s.aspect_max)),
            ("scene.boundary_bias", f(s.boundary_bias)),
            ("scene.corner_bias", f(s.corner_bias)),
            ("scene.max_overlap_iou", f(s.max_overlap_iou)),
            ("scene.seed", i(s.seed)),
            ("scene.count", i(self.scene_count as u64)),
            ("eval.max_dets", i(self.eval.max_dets as u64)),
        ]
    }

    /// Resolved configuration as flat `key = value` lines.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
