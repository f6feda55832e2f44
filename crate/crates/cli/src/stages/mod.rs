//! Pipeline stages and the shared orchestration plumbing.
//!
//! Every stage declares the hash of everything it reads; the runner skips a
//! stage when that hash matches the manifest record and all recorded outputs
//! still exist. Volumes are never stored — each downstream stage regenerates
//! them from the subject seeds recorded in `subjects.csv`.

pub mod ablation;
pub mod biomarkers;
pub mod cluster;
pub mod evaluate;
pub mod generate;
pub mod gradcam;
pub mod split;
pub mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use spineage_core::model::volume_to_input;
use spineage_core::synth::generate_subject;
use spineage_core::volume::preprocess;
use spineage_core::{Region, Subject, SynthConfig};

use crate::config::{ModelSection, PipelineConfig};
use crate::manifest::{hash_inputs, HashPart, Manifest};
use crate::workdir::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Cluster,
    Split,
    Train,
    Evaluate,
    Biomarkers,
    Gradcam,
    Ablation,
}

impl Stage {
    /// The seven stages `all` expands to, in dependency order. Ablation is
    /// requested explicitly because it retrains one model per arm.
    pub const PIPELINE: [Stage; 7] = [
        Stage::Generate,
        Stage::Cluster,
        Stage::Split,
        Stage::Train,
        Stage::Evaluate,
        Stage::Biomarkers,
        Stage::Gradcam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Cluster => "cluster",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Biomarkers => "biomarkers",
            Stage::Gradcam => "gradcam",
            Stage::Ablation => "ablation",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "generate" => Stage::Generate,
            "cluster" => Stage::Cluster,
            "split" => Stage::Split,
            "train" => Stage::Train,
            "evaluate" => Stage::Evaluate,
            "biomarkers" => Stage::Biomarkers,
            "gradcam" => Stage::Gradcam,
            "ablation" => Stage::Ablation,
            other => bail!(
                "unknown stage {other:?}; expected one of generate, cluster, split, \
                 train, evaluate, biomarkers, gradcam, ablation, all"
            ),
        })
    }
}

/// Everything a stage needs to run.
pub struct Ctx<'a> {
    pub config: &'a PipelineConfig,
    pub layout: &'a Layout,
}

impl Ctx<'_> {
    /// Fails with a dependency error naming the producer stage when an
    /// upstream artifact is missing.
    pub fn require(&self, current: Stage, path: &Path, producer: Stage) -> Result<()> {
        if !path.exists() {
            return Err(anyhow!(
                "stage '{current}' requires {}; run stage '{producer}' first",
                self.layout.rel(path)
            ));
        }
        Ok(())
    }
}

/// Runs one stage through the manifest. Returns true when the stage ran,
/// false when it was skipped as up to date.
pub fn run_stage(stage: Stage, ctx: &Ctx<'_>, manifest: &mut Manifest, force: bool) -> Result<bool> {
    let hash = input_hash(stage, ctx)?;
    if !force && manifest.is_current(stage.name(), &hash) {
        log::info!("stage '{stage}' is up to date; skipping");
        return Ok(false);
    }
    log::info!("running stage '{stage}'");
    let outputs = match stage {
        Stage::Generate => generate::run(ctx)?,
        Stage::Cluster => cluster::run(ctx)?,
        Stage::Split => split::run(ctx)?,
        Stage::Train => train::run(ctx, &hash)?,
        Stage::Evaluate => evaluate::run(ctx)?,
        Stage::Biomarkers => biomarkers::run(ctx)?,
        Stage::Gradcam => gradcam::run(ctx)?,
        Stage::Ablation => ablation::run(ctx, &hash)?,
    };
    manifest.record(stage.name(), &hash, &outputs)?;
    Ok(true)
}

/// Hash of a stage's inputs: the config sections it reads plus the bytes of
/// every upstream artifact. Missing artifacts surface as dependency errors.
pub fn input_hash(stage: Stage, ctx: &Ctx<'_>) -> Result<String> {
    let c = ctx.config;
    let l = ctx.layout;
    let seed = c.section_string("seed");
    let synth = c.section_string("synth");
    let model = c.section_string("model");

    let mut strings: Vec<String> = vec![seed];
    let mut files: Vec<std::path::PathBuf> = Vec::new();
    match stage {
        Stage::Generate => {
            strings.push(c.section_string("cohort"));
            strings.push(synth);
        }
        Stage::Cluster => {
            ctx.require(stage, &l.subjects_csv(), Stage::Generate)?;
            ctx.require(stage, &l.records_csv(), Stage::Generate)?;
            files.push(l.subjects_csv());
            files.push(l.records_csv());
        }
        Stage::Split => {
            ctx.require(stage, &l.subjects_csv(), Stage::Generate)?;
            files.push(l.subjects_csv());
            for bracket in spineage_core::synth::BRACKETS {
                ctx.require(stage, &l.cluster_csv(bracket), Stage::Cluster)?;
                files.push(l.cluster_csv(bracket));
            }
            strings.push(c.section_string("split"));
        }
        Stage::Train => {
            ctx.require(stage, &l.subjects_csv(), Stage::Generate)?;
            ctx.require(stage, &l.splits_csv(), Stage::Split)?;
            files.push(l.subjects_csv());
            files.push(l.splits_csv());
            strings.push(c.section_string("train"));
            strings.push(model);
            strings.push(synth);
        }
        Stage::Evaluate => {
            ctx.require(stage, &l.subjects_csv(), Stage::Generate)?;
            ctx.require(stage, &l.splits_csv(), Stage::Split)?;
            ctx.require(stage, &l.checkpoint(), Stage::Train)?;
            ctx.require(stage, &l.train_meta_csv(), Stage::Train)?;
            files.push(l.subjects_csv());
            files.push(l.splits_csv());
            files.push(l.checkpoint());
            files.push(l.train_meta_csv());
            strings.push(model);
            strings.push(synth);
        }
        Stage::Biomarkers => {
            ctx.require(stage, &l.subjects_csv(), Stage::Generate)?;
            ctx.require(stage, &l.records_csv(), Stage::Generate)?;
            ctx.require(stage, &l.predictions_csv(), Stage::Evaluate)?;
            ctx.require(stage, &l.bias_csv(), Stage::Evaluate)?;
            ctx.require(stage, &l.checkpoint(), Stage::Train)?;
            ctx.require(stage, &l.train_meta_csv(), Stage::Train)?;
            files.push(l.subjects_csv());
            files.push(l.records_csv());
            files.push(l.predictions_csv());
            files.push(l.bias_csv());
            files.push(l.checkpoint());
            files.push(l.train_meta_csv());
            strings.push(c.section_string("icc"));
            strings.push(model);
            strings.push(synth);
        }
        Stage::Gradcam => {
            ctx.require(stage, &l.subjects_csv(), Stage::Generate)?;
            ctx.require(stage, &l.splits_csv(), Stage::Split)?;
            ctx.require(stage, &l.checkpoint(), Stage::Train)?;
            files.push(l.subjects_csv());
            files.push(l.splits_csv());
            files.push(l.checkpoint());
            strings.push(c.section_string("gradcam"));
            strings.push(model);
            strings.push(synth);
        }
        Stage::Ablation => {
            ctx.require(stage, &l.subjects_csv(), Stage::Generate)?;
            ctx.require(stage, &l.splits_csv(), Stage::Split)?;
            ctx.require(stage, &l.metrics_csv(), Stage::Evaluate)?;
            files.push(l.subjects_csv());
            files.push(l.splits_csv());
            files.push(l.metrics_csv());
            strings.push(c.section_string("ablation"));
            strings.push(c.section_string("train"));
            strings.push(model);
            strings.push(synth);
        }
    }

    let mut parts: Vec<HashPart<'_>> = Vec::new();
    parts.push(HashPart::Str(stage.name()));
    for s in &strings {
        parts.push(HashPart::Str(s));
    }
    for f in &files {
        parts.push(HashPart::File(f));
    }
    hash_inputs(&parts)
}

/// A subject joined with its split assignment and cluster verdict.
#[derive(Debug, Clone)]
pub struct CohortRow {
    pub subject: Subject,
    pub normal: bool,
}

/// Reads subjects.csv joined with splits.csv. Row order follows splits.csv,
/// which is sorted by subject id at write time.
pub fn load_cohort(layout: &Layout) -> Result<Vec<CohortRow>> {
    let subjects = spineage_core::synth::read_subjects_csv(&layout.subjects_csv())
        .map_err(|e| anyhow!("{e}"))?;
    let by_id: std::collections::BTreeMap<String, Subject> =
        subjects.into_iter().map(|s| (s.id.clone(), s)).collect();

    let mut rdr = csv::Reader::from_path(layout.splits_csv())?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec
            .get(0)
            .ok_or_else(|| anyhow!("splits.csv row without subject_id"))?;
        let split: spineage_core::Split = rec
            .get(1)
            .ok_or_else(|| anyhow!("splits.csv row without split"))?
            .parse()
            .map_err(|e| anyhow!("{e}"))?;
        let normal = rec
            .get(2)
            .ok_or_else(|| anyhow!("splits.csv row without normal flag"))?
            == "true";
        let mut subject = by_id
            .get(id)
            .ok_or_else(|| anyhow!("splits.csv references unknown subject {id}"))?
            .clone();
        subject.split = Some(split);
        rows.push(CohortRow { subject, normal });
    }
    Ok(rows)
}

/// Regenerates a subject's volume from its seed and preprocesses it into
/// network input order. The volume itself is never persisted.
pub fn subject_input(
    synth: &SynthConfig,
    model: &ModelSection,
    region: Option<Region>,
    subject: &Subject,
) -> Result<(Vec<f32>, [usize; 3])> {
    let (vol, _records, _subject) = generate_subject(
        synth,
        &subject.id,
        subject.age,
        subject.sex,
        subject.seed,
    )
    .map_err(|e| anyhow!("{e}"))?;
    let pre = preprocess(&vol, model.spacing, model.input, model.dilation, region)
        .map_err(|e| anyhow!("{e}"))?;
    Ok(volume_to_input(&pre))
}

/// Network input shape [depth, height, width] for a model section whose
/// `input` is the (x, y, z) grid.
pub fn net_shape(model: &ModelSection) -> [usize; 3] {
    [model.input[2], model.input[1], model.input[0]]
}
