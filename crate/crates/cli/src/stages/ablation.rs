//! Ablation arms: retrain the model under named overrides of training-set
//! size, loss, or input region, and tabulate the six accuracy metrics per
//! arm. An arm whose effective settings equal the base configuration reuses
//! the base pipeline's model and metrics instead of retraining.

use std::collections::BTreeMap;
use std::fs;

use anyhow::{anyhow, bail, Result};
use rand::seq::SliceRandom;
use spineage_core::model::checkpoint::{load_checkpoint, restore};
use spineage_core::model::train::{train, write_train_log, LossKind, TrainConfig, TrainSample};
use spineage_core::model::{predict, volume_to_input, SpineAgeNet};
use spineage_core::rngs::{domain, rng_for};
use spineage_core::stats::fit_bias;
use spineage_core::synth::generate_subject;
use spineage_core::volume::{preprocess, Volume};
use spineage_core::{Region, Split, Subject, SynthConfig};

use super::evaluate::{six_metrics, EVAL_BATCH};
use super::train::config_hash_u64;
use super::{net_shape, Ctx};
use crate::config::{AblationArm, RegionChoice};

/// An arm with every override resolved against the base configuration.
struct ArmSpec {
    name: String,
    data_size: f64,
    loss: LossKind,
    region: RegionChoice,
}

fn resolve(arm: &AblationArm, ctx: &Ctx<'_>) -> Result<ArmSpec> {
    Ok(ArmSpec {
        name: arm.name.clone(),
        data_size: arm.data_size.unwrap_or(1.0),
        loss: match &arm.loss {
            Some(l) => l.parse::<LossKind>().map_err(|e| anyhow!("{e}"))?,
            None => ctx.config.loss_kind()?,
        },
        region: match &arm.region {
            Some(r) => r.parse()?,
            None => ctx.config.region_choice()?,
        },
    })
}

fn is_base(spec: &ArmSpec, ctx: &Ctx<'_>) -> Result<bool> {
    Ok(spec.data_size == 1.0
        && spec.loss == ctx.config.loss_kind()?
        && spec.region == ctx.config.region_choice()?)
}

/// Regenerates and preprocesses one subject, enforcing the region contract:
/// with a region override every voxel outside that region's labels must be
/// exactly zero.
fn arm_input(
    synth: &SynthConfig,
    ctx: &Ctx<'_>,
    region: Option<Region>,
    subject: &Subject,
) -> Result<Vec<f32>> {
    let c = ctx.config;
    let (vol, _recs, _s) = generate_subject(synth, &subject.id, subject.age, subject.sex, subject.seed)
        .map_err(|e| anyhow!("{e}"))?;
    let pre = preprocess(&vol, c.model.spacing, c.model.input, c.model.dilation, region)
        .map_err(|e| anyhow!("{e}"))?;
    if let Some(r) = region {
        verify_region_zeroing(&pre, r, &subject.id)?;
    }
    Ok(volume_to_input(&pre).0)
}

fn verify_region_zeroing(vol: &Volume, region: Region, subject_id: &str) -> Result<()> {
    let label = spineage_core::RegionLabel::from_region(region) as u8;
    for (i, &l) in vol.labels.iter().enumerate() {
        if l != label && vol.intensities[i] != 0.0 {
            bail!(
                "subject {subject_id}: voxel {i} outside the {region:?} region has \
                 intensity {}; region masking is broken",
                vol.intensities[i]
            );
        }
    }
    Ok(())
}

fn read_base_metrics(ctx: &Ctx<'_>) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(ctx.layout.metrics_csv())?;
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).ok_or_else(|| anyhow!("metrics.csv row without name"))?;
        let value: f64 = rec
            .get(1)
            .ok_or_else(|| anyhow!("metrics.csv row without value"))?
            .parse()?;
        map.insert(name.to_string(), value);
    }
    Ok(map)
}

const METRIC_ORDER: [&str; 6] = [
    "mae_raw",
    "r2_raw",
    "wmae_raw",
    "mae_corrected",
    "r2_corrected",
    "wmae_corrected",
];

pub fn run(ctx: &Ctx<'_>, stage_hash: &str) -> Result<Vec<String>> {
    let c = ctx.config;
    let l = ctx.layout;
    let cohort = super::load_cohort(l)?;
    let synth = c.synth.to_synth_config();

    let mut train_subjects: Vec<&Subject> = Vec::new();
    let mut val_subjects: Vec<&Subject> = Vec::new();
    let mut test_normal: Vec<&Subject> = Vec::new();
    for row in &cohort {
        match row.subject.split {
            Some(Split::Train) => train_subjects.push(&row.subject),
            Some(Split::Val) => val_subjects.push(&row.subject),
            Some(Split::Test) if row.normal => test_normal.push(&row.subject),
            _ => {}
        }
    }
    if train_subjects.is_empty() || val_subjects.is_empty() || test_normal.is_empty() {
        bail!("ablation needs non-empty train, val, and normal-test sets");
    }

    let mut outputs = Vec::new();
    let ablation_path = l.ablation_csv();
    l.ensure_parent(&ablation_path)?;
    let mut w = csv::Writer::from_path(&ablation_path)?;
    let mut header = vec![
        "arm".to_string(),
        "data_size".to_string(),
        "loss".to_string(),
        "region".to_string(),
        "n_train".to_string(),
    ];
    header.extend(METRIC_ORDER.iter().map(|s| s.to_string()));
    w.write_record(&header)?;

    for (ai, arm) in c.ablation.arm.iter().enumerate() {
        let spec = resolve(arm, ctx)?;
        let (n_train, metrics) = if is_base(&spec, ctx)? {
            log::info!("arm '{}' matches the base configuration; reusing base metrics", spec.name);
            let base = read_base_metrics(ctx)?;
            let mut values = Vec::with_capacity(6);
            for name in METRIC_ORDER {
                values.push(*base.get(name).ok_or_else(|| {
                    anyhow!("metrics.csv is missing {name}; rerun stage 'evaluate'")
                })?);
            }
            (train_subjects.len(), values)
        } else {
            let (n, values, log_rel) =
                run_arm(ctx, &synth, ai, &spec, &train_subjects, &val_subjects, &test_normal, stage_hash)?;
            outputs.push(log_rel);
            (n, values)
        };

        let mut record = vec![
            spec.name.clone(),
            format!("{:.4}", spec.data_size),
            spec.loss.to_string(),
            spec.region.to_string(),
            n_train.to_string(),
        ];
        record.extend(metrics.iter().map(|v| format!("{v:.10}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    outputs.insert(0, l.rel(&ablation_path));
    Ok(outputs)
}

#[allow(clippy::too_many_arguments)]
fn run_arm(
    ctx: &Ctx<'_>,
    synth: &SynthConfig,
    arm_index: usize,
    spec: &ArmSpec,
    train_subjects: &[&Subject],
    val_subjects: &[&Subject],
    test_normal: &[&Subject],
    stage_hash: &str,
) -> Result<(usize, Vec<f64>, String)> {
    let c = ctx.config;
    let l = ctx.layout;
    let region = spec.region.to_region();

    // Seeded subset of the training split.
    let mut ids: Vec<usize> = (0..train_subjects.len()).collect();
    ids.shuffle(&mut rng_for(c.seed, domain::ABLATION, arm_index as u64));
    let k = ((spec.data_size * train_subjects.len() as f64).round() as usize)
        .clamp(1, train_subjects.len());
    ids.truncate(k);
    ids.sort_unstable();
    let subset: Vec<&Subject> = ids.iter().map(|&i| train_subjects[i]).collect();
    log::info!(
        "arm '{}': {} train subjects, loss {}, region {}",
        spec.name,
        subset.len(),
        spec.loss,
        spec.region
    );

    let mean = subset.iter().map(|s| s.age).sum::<f64>() / subset.len() as f64;
    let var = subset.iter().map(|s| (s.age - mean).powi(2)).sum::<f64>() / subset.len() as f64;
    let std = var.sqrt();
    if std <= f64::EPSILON {
        bail!("arm '{}': training subset ages have zero variance", spec.name);
    }

    let to_samples = |subjects: &[&Subject]| -> Result<Vec<TrainSample>> {
        subjects
            .iter()
            .map(|s| {
                Ok(TrainSample {
                    input: arm_input(synth, ctx, region, s)?,
                    target: ((s.age - mean) / std) as f32,
                })
            })
            .collect()
    };
    let train_set = to_samples(&subset)?;
    let val_set = to_samples(val_subjects)?;

    let ck_path = l.root.join(format!("ablation/checkpoint_{}.bin", spec.name));
    l.ensure_parent(&ck_path)?;
    let mut cfg = TrainConfig::new(net_shape(&c.model), c.seed);
    cfg.epochs = c.train.epochs;
    cfg.batch_size = c.train.batch_size;
    cfg.lr = c.train.lr;
    cfg.loss = spec.loss;
    cfg.config_hash = config_hash_u64(stage_hash);
    cfg.checkpoint_path = Some(ck_path.clone());

    let mut net = SpineAgeNet::<f32>::new(c.seed);
    let report = train(&mut net, &cfg, &train_set, &val_set).map_err(|e| anyhow!("{e}"))?;
    let log_path = l.ablation_train_log_csv(&spec.name);
    write_train_log(&log_path, &report.rows).map_err(|e| anyhow!("{e}"))?;

    // Evaluate the best-validation weights, mirroring the main pipeline.
    let ck = load_checkpoint(&ck_path).map_err(|e| anyhow!("{e}"))?;
    restore(&mut net, &ck).map_err(|e| anyhow!("{e}"))?;
    fs::remove_file(&ck_path)?;

    let shape = net_shape(&c.model);
    let to_years = |zs: Vec<f64>| -> Vec<f64> { zs.iter().map(|z| z * std + mean).collect() };
    let val_inputs: Vec<Vec<f32>> = val_set.into_iter().map(|s| s.input).collect();
    let val_raw = to_years(predict(&mut net, &val_inputs, shape, EVAL_BATCH).map_err(|e| anyhow!("{e}"))?);
    let val_ages: Vec<f64> = val_subjects.iter().map(|s| s.age).collect();

    let mut test_inputs = Vec::with_capacity(test_normal.len());
    for s in test_normal {
        test_inputs.push(arm_input(synth, ctx, region, s)?);
    }
    let test_raw = to_years(predict(&mut net, &test_inputs, shape, EVAL_BATCH).map_err(|e| anyhow!("{e}"))?);
    let test_ages: Vec<f64> = test_normal.iter().map(|s| s.age).collect();
    let brackets: Vec<u32> = test_normal.iter().map(|s| s.bracket).collect();

    // A barely-trained arm can predict near-constant ages, which makes the
    // bias refit degenerate; fall back to the identity so the arm still
    // reports all six metrics.
    let corrected = match fit_bias(&val_ages, &val_raw) {
        Ok(bias) => test_raw.iter().map(|&p| bias.apply(p)).collect::<Vec<f64>>(),
        Err(e) => {
            log::warn!("arm '{}': bias fit degenerate ({e}); using identity", spec.name);
            test_raw.clone()
        }
    };
    let metrics = six_metrics(&test_ages, &test_raw, &corrected, &brackets)?;
    Ok((
        subset.len(),
        metrics.iter().map(|(_, v)| *v).collect(),
        l.rel(&log_path),
    ))
}
