//! Strategy comparison on a synthetic suite with the simulated detector.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::detector::{Detector, SimDetector};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult};
use crate::pipeline::{run_dataset, ImageInput, RunOutput, Strategy};
use crate::scene::{generate_suite, scenes_to_coco, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: String,
    pub images: usize,
    pub failed: usize,
    pub t_avg: f64,
    pub t_std: f64,
    pub total_passes: usize,
    pub mean_passes: f64,
    pub map_50: Option<f64>,
    pub map_5095: Option<f64>,
    pub map_50_small: Option<f64>,
    pub map_50_medium: Option<f64>,
    pub map_50_large: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub output: RunOutput,
    pub eval: EvalResult,
    pub row: BenchRow,
}

impl BenchRow {
    /// Summary row for a finished run; metrics are empty without an evaluation.
    pub fn from_output(output: &RunOutput, eval: Option<&EvalResult>) -> Self {
        let agg = &output.report.aggregate;
        let m = |f: fn(&EvalResult) -> Option<f64>| eval.and_then(f);
        Self {
            strategy: output.report.strategy.to_string(),
            images: agg.images,
            failed: output.report.failed.len(),
            t_avg: agg.t_avg,
            t_std: agg.t_std,
            total_passes: agg.total_passes,
            mean_passes: if agg.images == 0 { 0.0 } else { agg.total_passes as f64 / agg.images as f64 },
            map_50: m(|e| e.map_50),
            map_5095: m(|e| e.map_5095),
            map_50_small: m(|e| e.map_50_small),
            map_50_medium: m(|e| e.map_50_medium),
            map_50_large: m(|e| e.map_50_large),
        }
    }
}

/// The strategies compared when none are named: every baseline and every
/// dynamic variant, ending with the TTA configuration.
pub const DEFAULT_STRATEGIES: &[&str] = &[
    "full-image",
    "fixed-grid",
    "fixed-overlap:0.25",
    "dynamic",
    "dynamic,fi",
    "dynamic,minimizer",
    "dynamic,fi,minimizer",
    "dynamic,fi,minimizer,tta",
];

/// Parse a list of strategies separated by `;` or `,`. A bare modifier
/// (`fi`, `minimizer`, `tta`) attaches to the strategy before it, so
/// `fixed-grid,dynamic,fi` names two strategies.
pub fn parse_strategy_list(list: &str) -> Result<Vec<Strategy>> {
    let mut names: Vec<String> = Vec::new();
    for tok in list.split([';', ',']).map(str::trim).filter(|t| !t.is_empty()) {
        match names.last_mut() {
            Some(prev) if matches!(tok, "fi" | "minimizer" | "tta") => {
                prev.push(',');
                prev.push_str(tok);
            }
            _ => names.push(tok.to_string()),
        }
    }
    if names.is_empty() {
        return Err(Error::config("empty strategy list"));
    }
    names.iter().map(|n| n.parse()).collect()
}

/// Generate the suite described by `cfg.scene` and `cfg.scene_count`.
pub fn suite(cfg: &RunConfig) -> Result<Vec<Scene>> {
    let grid = cfg.pipeline.grid_for(cfg.scene.width, cfg.scene.height);
    generate_suite(&cfg.scene, &grid, cfg.scene_count)
}

/// Run one strategy over `scenes` with the simulated detector and score it.
pub fn run_strategy(scenes: &[Scene], strategy: &Strategy, cfg: &RunConfig, jobs: usize) -> Result<StrategyRun> {
    let inputs: Vec<ImageInput> = scenes.iter().map(|s| ImageInput::from_scene(Arc::new(s.clone()))).collect();
    let sim = cfg.sim.clone();
    let factory = move || -> Result<Box<dyn Detector>> { Ok(Box::new(SimDetector::new(sim.clone())?)) };
    let output = run_dataset(&inputs, strategy, &cfg.pipeline, &factory, jobs)?;
    let gt = scenes_to_coco(scenes, cfg.scene.num_categories);
    let eval = evaluate(&gt, &output.coco_results(), &cfg.eval)?;
    let row = BenchRow::from_output(&output, Some(&eval));
    Ok(StrategyRun { output, eval, row })
}

/// Run every strategy on the same scenes and detector settings.
pub fn run_benchmark(scenes: &[Scene], strategies: &[Strategy], cfg: &RunConfig, jobs: usize) -> Result<Vec<StrategyRun>> {
    if strategies.is_empty() {
        return Err(Error::config("no strategies to benchmark"));
    }
    strategies.iter().map(|s| run_strategy(scenes, s, cfg, jobs)).collect()
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Aligned text table, one row per strategy.
pub fn format_table(rows: &[BenchRow]) -> String {
    let header = [
        "strategy", "images", "t_avg_ms", "t_std_ms", "passes", "passes/img", "mAP50", "mAP50-95", "mAP50_s",
        "mAP50_m", "mAP50_l",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                r.images.to_string(),
                format!("{:.3}", r.t_avg * 1e3),
                format!("{:.3}", r.t_std * 1e3),
                r.total_passes.to_string(),
                format!("{:.2}", r.mean_passes),
                metric(r.map_50),
                metric(r.map_5095),
                metric(r.map_50_small),
                metric(r.map_50_medium),
                metric(r.map_50_large),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for r in &body {
        line(r.iter().map(String::as_str).collect());
    }
    out
}
