//! Prediction and accuracy metrics.
//!
//! The bias correction is fitted on validation predictions only, then
//! applied to validation and test. Accuracy metrics are computed on the
//! cluster-normal portion of the test split — the abnormal subjects mixed
//! into test carry deliberate age offsets and are scored by the biomarker
//! stage instead.

use anyhow::{anyhow, bail, Result};
use spineage_core::model::checkpoint::load_checkpoint;
use spineage_core::model::{predict, SpineAgeNet};
use spineage_core::stats::{fit_bias, mae, r2, wmae, BiasFit};
use spineage_core::{Sex, Split, Subject, SynthConfig};

use super::train::{read_train_meta, TargetScale};
use super::{load_cohort, net_shape, subject_input, Ctx};
use crate::config::ModelSection;

pub const EVAL_BATCH: usize = 8;

/// Loads the best-validation network from the checkpoint file.
pub fn load_net(ctx: &Ctx<'_>) -> Result<SpineAgeNet<f32>> {
    let ck = load_checkpoint(&ctx.layout.checkpoint()).map_err(|e| anyhow!("{e}"))?;
    let mut net = SpineAgeNet::<f32>::new(ctx.config.seed);
    spineage_core::model::checkpoint::restore(&mut net, &ck).map_err(|e| anyhow!("{e}"))?;
    Ok(net)
}

/// Raw age predictions (years) for a list of subjects.
pub fn predict_ages(
    net: &mut SpineAgeNet<f32>,
    subjects: &[&Subject],
    synth: &SynthConfig,
    model: &ModelSection,
    region: Option<spineage_core::Region>,
    scale: &TargetScale,
) -> Result<Vec<f64>> {
    let mut inputs = Vec::with_capacity(subjects.len());
    for s in subjects {
        let (input, _dims) = subject_input(synth, model, region, s)?;
        inputs.push(input);
    }
    let preds_z = predict(net, &inputs, net_shape(model), EVAL_BATCH).map_err(|e| anyhow!("{e}"))?;
    Ok(preds_z.iter().map(|z| z * scale.std + scale.mean).collect())
}

/// The six pipeline metrics, in stable order. WMAE averages the brackets
/// that actually appear in the evaluated set.
pub fn six_metrics(
    ages: &[f64],
    raw: &[f64],
    corrected: &[f64],
    brackets: &[u32],
) -> Result<Vec<(&'static str, f64)>> {
    let mut required: Vec<u32> = brackets.to_vec();
    required.sort_unstable();
    required.dedup();
    let e = |err: spineage_core::Error| anyhow!("{err}");
    Ok(vec![
        ("mae_raw", mae(raw, ages).map_err(e)?),
        ("r2_raw", r2(raw, ages).map_err(e)?),
        ("wmae_raw", wmae(raw, ages, brackets, &required).map_err(e)?),
        ("mae_corrected", mae(corrected, ages).map_err(e)?),
        ("r2_corrected", r2(corrected, ages).map_err(e)?),
        (
            "wmae_corrected",
            wmae(corrected, ages, brackets, &required).map_err(e)?,
        ),
    ])
}

pub fn run(ctx: &Ctx<'_>) -> Result<Vec<String>> {
    let c = ctx.config;
    let l = ctx.layout;
    let cohort = load_cohort(l)?;
    let synth = c.synth.to_synth_config();
    let region = c.region_choice()?.to_region();
    let scale = read_train_meta(&l.train_meta_csv())?;
    let mut net = load_net(ctx)?;

    let val: Vec<&Subject> = cohort
        .iter()
        .filter(|r| r.subject.split == Some(Split::Val))
        .map(|r| &r.subject)
        .collect();
    let test: Vec<(&Subject, bool)> = cohort
        .iter()
        .filter(|r| r.subject.split == Some(Split::Test))
        .map(|r| (&r.subject, r.normal))
        .collect();
    if val.is_empty() || test.is_empty() {
        bail!("evaluation needs non-empty val and test splits");
    }

    let val_raw = predict_ages(&mut net, &val, &synth, &c.model, region, &scale)?;
    let val_ages: Vec<f64> = val.iter().map(|s| s.age).collect();
    let bias = fit_bias(&val_ages, &val_raw).map_err(|e| anyhow!("{e}"))?;

    let test_subjects: Vec<&Subject> = test.iter().map(|(s, _)| *s).collect();
    let test_raw = predict_ages(&mut net, &test_subjects, &synth, &c.model, region, &scale)?;

    let bias_path = l.bias_csv();
    l.ensure_parent(&bias_path)?;
    let mut w = csv::Writer::from_path(&bias_path)?;
    w.write_record(["alpha", "beta"])?;
    w.write_record([format!("{:.10}", bias.alpha), format!("{:.10}", bias.beta)])?;
    w.flush()?;

    let predictions_path = l.predictions_csv();
    let mut w = csv::Writer::from_path(&predictions_path)?;
    w.write_record([
        "subject_id",
        "split",
        "age",
        "bracket",
        "sex",
        "normal",
        "raw_pred",
        "corrected_pred",
    ])?;
    let mut write_row = |s: &Subject, normal: bool, raw: f64, bias: &BiasFit| {
        w.write_record([
            s.id.clone(),
            s.split.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.10}", s.age),
            s.bracket.to_string(),
            match s.sex {
                Sex::Male => "male".to_string(),
                Sex::Female => "female".to_string(),
            },
            if normal { "true" } else { "false" }.to_string(),
            format!("{raw:.10}"),
            format!("{:.10}", bias.apply(raw)),
        ])
    };
    for (s, &raw) in val.iter().zip(&val_raw) {
        write_row(s, true, raw, &bias)?;
    }
    for ((s, normal), &raw) in test.iter().zip(&test_raw) {
        write_row(s, *normal, raw, &bias)?;
    }
    w.flush()?;

    // Metrics on the cluster-normal test subjects.
    let mut ages = Vec::new();
    let mut raw = Vec::new();
    let mut corrected = Vec::new();
    let mut brackets = Vec::new();
    for ((s, normal), &r) in test.iter().zip(&test_raw) {
        if *normal {
            ages.push(s.age);
            raw.push(r);
            corrected.push(bias.apply(r));
            brackets.push(s.bracket);
        }
    }
    if ages.is_empty() {
        bail!("no cluster-normal subjects in the test split; metrics undefined");
    }
    let metrics = six_metrics(&ages, &raw, &corrected, &brackets)?;

    let metrics_path = l.metrics_csv();
    let mut w = csv::Writer::from_path(&metrics_path)?;
    w.write_record(["metric", "value"])?;
    for (name, value) in &metrics {
        w.write_record([name.to_string(), format!("{value:.10}")])?;
    }
    w.flush()?;
    for (name, value) in &metrics {
        log::info!("{name} = {value:.4}");
    }

    Ok(vec![
        l.rel(&bias_path),
        l.rel(&predictions_path),
        l.rel(&metrics_path),
    ])
}
