//! Pipeline orchestration for the spine-age estimation workflow: config
//! parsing, stage execution with input-hash skipping, and artifact output.
//!
//! The pipeline stages, in dependency order:
//!
//! 1. `generate` — synthetic cohort (subjects + condition reports)
//! 2. `cluster` — per-bracket UMAP + HDBSCAN normality verdicts
//! 3. `split` — stratified train/val/test assignment
//! 4. `train` — 3D CNN regression on cluster-normal subjects
//! 5. `evaluate` — predictions, bias correction, accuracy metrics
//! 6. `biomarkers` — SAG regressions, odds ratios, scan-rescan ICC
//! 7. `gradcam` — attention maps for sample test subjects
//!
//! `ablation` retrains one model per configured arm and is requested
//! explicitly. All tables are CSV; images are portable graymaps.

pub mod config;
pub mod manifest;
pub mod stages;
pub mod workdir;

use anyhow::{anyhow, Result};

use config::PipelineConfig;
use manifest::Manifest;
use stages::{run_stage, Ctx, Stage};
use workdir::{acquire_lock, resolve_workdir, Layout};

/// Runs the given stages in order against one locked working directory.
pub fn execute(config: &PipelineConfig, stages: &[Stage], force: bool) -> Result<()> {
    let root = resolve_workdir(&config.workdir);
    let _lock = acquire_lock(&root)?;
    let layout = Layout::new(root);
    let mut manifest = Manifest::load_or_default(&layout.root)?;
    let ctx = Ctx {
        config,
        layout: &layout,
    };
    for &stage in stages {
        run_stage(stage, &ctx, &mut manifest, force)
            .map_err(|e| anyhow!("stage '{stage}' failed: {e}"))?;
    }
    Ok(())
}

/// Expands stage names, with `all` meaning the seven pipeline stages.
pub fn parse_stage_list(names: &[String]) -> Result<Vec<Stage>> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(Stage::PIPELINE);
        } else {
            out.push(name.parse::<Stage>()?);
        }
    }
    Ok(out)
}
