//! Spine-age-gap biomarker statistics on the full test split.
//!
//! SAG = bias-corrected prediction minus chronological age. The test split
//! deliberately mixes every cluster-abnormal subject with the held-out
//! normals, so condition effects show up as positive SAG shifts.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Result};
use spineage_core::report::{aggregate, dense_cell_index, group_by_subject, read_records_csv};
use spineage_core::stats::{
    fit_sag_ols, icc_with_bootstrap, mean_sag_by_bracket, odds_ratio, CovariateGroup,
    RegressionSubject, SAG_HIGH_CUT, SAG_LOW_CUT,
};
use spineage_core::synth::rescan_volume;
use spineage_core::volume::preprocess;
use spineage_core::model::{predict, volume_to_input};
use spineage_core::{DegenerativeKind, DenseFeatures, Region, Split, StructuralPathology};

use super::evaluate::{load_net, EVAL_BATCH};
use super::train::read_train_meta;
use super::{load_cohort, net_shape, Ctx};

struct TestRow {
    subject: spineage_core::Subject,
    sag: f64,
    dense: DenseFeatures,
}

fn read_corrected_predictions(ctx: &Ctx<'_>) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(ctx.layout.predictions_csv())?;
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec
            .get(0)
            .ok_or_else(|| anyhow!("predictions.csv row without subject_id"))?;
        let split = rec.get(1).unwrap_or_default();
        if split != "test" {
            continue;
        }
        let corrected: f64 = rec
            .get(7)
            .ok_or_else(|| anyhow!("predictions.csv row without corrected_pred"))?
            .parse()?;
        map.insert(id.to_string(), corrected);
    }
    Ok(map)
}

pub fn run(ctx: &Ctx<'_>) -> Result<Vec<String>> {
    let c = ctx.config;
    let l = ctx.layout;
    let cohort = load_cohort(l)?;
    let corrected = read_corrected_predictions(ctx)?;
    let records = read_records_csv(&l.records_csv()).map_err(|e| anyhow!("{e}"))?;
    let by_subject = group_by_subject(records);

    let mut rows: Vec<TestRow> = Vec::new();
    for row in &cohort {
        if row.subject.split != Some(Split::Test) {
            continue;
        }
        let pred = *corrected.get(&row.subject.id).ok_or_else(|| {
            anyhow!(
                "test subject {} has no prediction; rerun stage 'evaluate'",
                row.subject.id
            )
        })?;
        let dense = match by_subject.get(&row.subject.id) {
            Some(recs) => aggregate(recs).map_err(|e| anyhow!("{e}"))?,
            None => DenseFeatures::zeros(),
        };
        rows.push(TestRow {
            subject: row.subject.clone(),
            sag: pred - row.subject.age,
            dense,
        });
    }
    if rows.len() < 3 {
        bail!("biomarkers need at least 3 test subjects, got {}", rows.len());
    }
    let mut outputs = Vec::new();

    // Per-group SAG regressions.
    let regression: Vec<RegressionSubject> = rows
        .iter()
        .map(|r| RegressionSubject {
            sag: r.sag,
            sex: r.subject.sex,
            dense: r.dense.clone(),
            covariates: r.subject.covariates.clone(),
        })
        .collect();
    for group in CovariateGroup::ALL {
        let fit = fit_sag_ols(group, &regression).map_err(|e| {
            anyhow!("SAG regression for group {}: {e}", group.name())
        })?;
        let path = l.sag_csv(group.name());
        l.ensure_parent(&path)?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["condition", "n", "effect", "ci_low", "ci_high", "significant"])?;
        for row in &fit.rows {
            w.write_record([
                row.condition.clone(),
                row.n.to_string(),
                format!("{:.10}", row.effect),
                format!("{:.10}", row.ci_low),
                format!("{:.10}", row.ci_high),
                row.significant.to_string(),
            ])?;
        }
        w.flush()?;
        outputs.push(l.rel(&path));
    }

    // Odds of an extreme SAG given each condition.
    let sags: Vec<f64> = rows.iter().map(|r| r.sag).collect();
    let odds_path = l.odds_csv();
    let mut w = csv::Writer::from_path(&odds_path)?;
    w.write_record([
        "condition",
        "n_exposed",
        "high_exposed",
        "high_unexposed",
        "low_exposed",
        "low_unexposed",
        "odds_ratio",
        "ci_low",
        "ci_high",
        "continuity_corrected",
    ])?;
    let mut conditions: Vec<(String, Vec<bool>)> = Vec::new();
    for p in StructuralPathology::ALL {
        let flags: Vec<bool> = rows
            .iter()
            .map(|r| r.dense.counts[3 * spineage_core::report::DENSE_CELLS_PER_REGION + p.index()] > 0)
            .collect();
        conditions.push((p.name().to_string(), flags));
    }
    for region in Region::ALL {
        for kind in DegenerativeKind::ALL {
            let flags: Vec<bool> = rows
                .iter()
                .map(|r| {
                    kind.legal_severities().iter().any(|&s| {
                        dense_cell_index(region, kind, s)
                            .map(|i| r.dense.counts[i] > 0)
                            .unwrap_or(false)
                    })
                })
                .collect();
            conditions.push((format!("{}_{}", region.short(), kind.name()), flags));
        }
    }
    for (name, flags) in &conditions {
        match odds_ratio(&sags, flags, SAG_HIGH_CUT, SAG_LOW_CUT) {
            Ok(or) => {
                w.write_record([
                    name.clone(),
                    flags.iter().filter(|&&f| f).count().to_string(),
                    or.a.to_string(),
                    or.b.to_string(),
                    or.c.to_string(),
                    or.d.to_string(),
                    format!("{:.10}", or.odds_ratio),
                    format!("{:.10}", or.ci_low),
                    format!("{:.10}", or.ci_high),
                    or.continuity_corrected.to_string(),
                ])?;
            }
            Err(e) => {
                log::info!("odds ratio for {name} skipped: {e}");
            }
        }
    }
    w.flush()?;
    outputs.push(l.rel(&odds_path));

    // Scan-rescan agreement of the corrected prediction.
    let scale = read_train_meta(&l.train_meta_csv())?;
    let mut net = load_net(ctx)?;
    let synth = c.synth.to_synth_config();
    let region = c.region_choice()?.to_region();
    let take = c.icc.subjects.min(rows.len());
    let mut first_inputs = Vec::with_capacity(take);
    let mut second_inputs = Vec::with_capacity(take);
    for r in rows.iter().take(take) {
        let (input, _dims) = super::subject_input(&synth, &c.model, region, &r.subject)?;
        first_inputs.push(input);
        let rescan = rescan_volume(&synth, &r.subject).map_err(|e| anyhow!("{e}"))?;
        let pre = preprocess(&rescan, c.model.spacing, c.model.input, c.model.dilation, region)
            .map_err(|e| anyhow!("{e}"))?;
        second_inputs.push(volume_to_input(&pre).0);
    }
    let shape = net_shape(&c.model);
    let first = predict(&mut net, &first_inputs, shape, EVAL_BATCH).map_err(|e| anyhow!("{e}"))?;
    let second = predict(&mut net, &second_inputs, shape, EVAL_BATCH).map_err(|e| anyhow!("{e}"))?;
    let bias = read_bias(ctx)?;
    let pairs: Vec<(f64, f64)> = first
        .iter()
        .zip(&second)
        .map(|(&a, &b)| {
            (
                (a * scale.std + scale.mean - bias.1) / bias.0,
                (b * scale.std + scale.mean - bias.1) / bias.0,
            )
        })
        .collect();
    let icc = icc_with_bootstrap(&pairs, c.seed, c.icc.bootstrap).map_err(|e| anyhow!("{e}"))?;
    let icc_path = l.icc_csv();
    let mut w = csv::Writer::from_path(&icc_path)?;
    w.write_record(["icc", "ci_low", "ci_high", "n", "replicates"])?;
    w.write_record([
        format!("{:.10}", icc.icc),
        format!("{:.10}", icc.ci_low),
        format!("{:.10}", icc.ci_high),
        icc.n.to_string(),
        icc.replicates.to_string(),
    ])?;
    w.flush()?;
    outputs.push(l.rel(&icc_path));
    log::info!("scan-rescan ICC {:.4} [{:.4}, {:.4}]", icc.icc, icc.ci_low, icc.ci_high);

    // Mean SAG per bracket over the full test split.
    let brackets: Vec<u32> = rows.iter().map(|r| r.subject.bracket).collect();
    let table = mean_sag_by_bracket(&brackets, &sags).map_err(|e| anyhow!("{e}"))?;
    let bracket_path = l.sag_by_bracket_csv();
    let mut w = csv::Writer::from_path(&bracket_path)?;
    w.write_record(["bracket", "n", "mean_sag"])?;
    for (bracket, n, mean) in table {
        w.write_record([bracket.to_string(), n.to_string(), format!("{mean:.10}")])?;
    }
    w.flush()?;
    outputs.push(l.rel(&bracket_path));

    Ok(outputs)
}

fn read_bias(ctx: &Ctx<'_>) -> Result<(f64, f64)> {
    let mut rdr = csv::Reader::from_path(ctx.layout.bias_csv())?;
    let rec = rdr
        .records()
        .next()
        .ok_or_else(|| anyhow!("bias.csv is empty"))??;
    Ok((
        rec.get(0).ok_or_else(|| anyhow!("bias.csv missing alpha"))?.parse()?,
        rec.get(1).ok_or_else(|| anyhow!("bias.csv missing beta"))?.parse()?,
    ))
}
