//! Network training on the cluster-normal train split.
//!
//! Targets are z-scored with the training set's age mean/std; the scaling
//! is persisted in train_meta.csv so later stages can invert it. The best
//! validation checkpoint is what evaluation loads. An interrupted run
//! resumes from its checkpoint when the stage inputs are unchanged.

use std::fs;

use anyhow::{anyhow, bail, Result};
use spineage_core::model::checkpoint::{load_checkpoint, restore};
use spineage_core::model::train::{
    train, train_with_state, write_train_log, EpochRow, TrainConfig, TrainSample,
};
use spineage_core::model::SpineAgeNet;
use spineage_core::Split;

use super::{load_cohort, net_shape, subject_input, Ctx};

/// First 16 hex digits of a stage hash, as the checkpoint's config tag.
pub fn config_hash_u64(stage_hash: &str) -> u64 {
    u64::from_str_radix(&stage_hash[..16.min(stage_hash.len())], 16).unwrap_or(0)
}

pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

pub fn read_train_meta(path: &std::path::Path) -> Result<TargetScale> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rec = rdr
        .records()
        .next()
        .ok_or_else(|| anyhow!("train_meta.csv is empty"))??;
    Ok(TargetScale {
        mean: rec
            .get(0)
            .ok_or_else(|| anyhow!("train_meta.csv missing target_mean"))?
            .parse()?,
        std: rec
            .get(1)
            .ok_or_else(|| anyhow!("train_meta.csv missing target_std"))?
            .parse()?,
    })
}

pub fn run(ctx: &Ctx<'_>, stage_hash: &str) -> Result<Vec<String>> {
    let c = ctx.config;
    let l = ctx.layout;
    let cohort = load_cohort(l)?;
    let synth = c.synth.to_synth_config();
    let region = c.region_choice()?.to_region();

    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    for row in &cohort {
        match row.subject.split {
            Some(Split::Train) => train_rows.push(&row.subject),
            Some(Split::Val) => val_rows.push(&row.subject),
            _ => {}
        }
    }
    if train_rows.len() < 2 || val_rows.is_empty() {
        bail!(
            "training needs at least 2 train and 1 val subjects, got {} and {}",
            train_rows.len(),
            val_rows.len()
        );
    }

    let mean = train_rows.iter().map(|s| s.age).sum::<f64>() / train_rows.len() as f64;
    let var = train_rows
        .iter()
        .map(|s| (s.age - mean).powi(2))
        .sum::<f64>()
        / train_rows.len() as f64;
    let std = var.sqrt();
    if std <= f64::EPSILON {
        bail!("training ages have zero variance; cannot scale targets");
    }

    let to_samples = |subjects: &[&spineage_core::Subject]| -> Result<Vec<TrainSample>> {
        subjects
            .iter()
            .map(|s| {
                let (input, _dims) = subject_input(&synth, &c.model, region, s)?;
                Ok(TrainSample {
                    input,
                    target: ((s.age - mean) / std) as f32,
                })
            })
            .collect()
    };
    let train_set = to_samples(&train_rows)?;
    let val_set = to_samples(&val_rows)?;
    log::info!(
        "training on {} subjects, validating on {}",
        train_set.len(),
        val_set.len()
    );

    let ck_path = l.checkpoint();
    l.ensure_parent(&ck_path)?;
    let mut cfg = TrainConfig::new(net_shape(&c.model), c.seed);
    cfg.epochs = c.train.epochs;
    cfg.batch_size = c.train.batch_size;
    cfg.lr = c.train.lr;
    cfg.loss = c.loss_kind()?;
    cfg.config_hash = config_hash_u64(stage_hash);
    cfg.checkpoint_path = Some(ck_path.clone());

    let mut net = SpineAgeNet::<f32>::new(c.seed);
    let mut old_rows: Vec<EpochRow> = Vec::new();
    let mut report = None;

    // Resume an interrupted run only when the checkpoint was written for
    // exactly these inputs.
    if ck_path.exists() {
        if let Ok(ck) = load_checkpoint(&ck_path) {
            if ck.config_hash == cfg.config_hash && ck.seed == cfg.seed {
                let start = ck.next_epoch as usize;
                if start < cfg.epochs {
                    log::info!("resuming training from epoch {start}");
                    let (mut adam, mut sched) =
                        restore(&mut net, &ck).map_err(|e| anyhow!("{e}"))?;
                    old_rows = read_log_rows_below(&l.train_log_csv(), start);
                    let mut resumed = cfg.clone();
                    resumed.start_epoch = start;
                    report = Some(
                        train_with_state(
                            &mut net,
                            &mut adam,
                            &mut sched,
                            &resumed,
                            &train_set,
                            &val_set,
                            (ck.best_epoch as usize, ck.best_val),
                        )
                        .map_err(|e| anyhow!("{e}"))?,
                    );
                }
            }
        }
    }
    let report = match report {
        Some(r) => r,
        None => {
            old_rows.clear();
            train(&mut net, &cfg, &train_set, &val_set).map_err(|e| anyhow!("{e}"))?
        }
    };
    if !ck_path.exists() {
        bail!("training finished but no checkpoint was written (no validation improvement?)");
    }

    let log_path = l.train_log_csv();
    let mut rows = old_rows;
    rows.extend(report.rows.iter().cloned());
    write_train_log(&log_path, &rows).map_err(|e| anyhow!("{e}"))?;

    let meta_path = l.train_meta_csv();
    let mut w = csv::Writer::from_path(&meta_path)?;
    w.write_record(["target_mean", "target_std", "n_train", "n_val"])?;
    w.write_record([
        format!("{mean:.10}"),
        format!("{std:.10}"),
        train_set.len().to_string(),
        val_set.len().to_string(),
    ])?;
    w.flush()?;
    fs::metadata(&ck_path)?;
    log::info!(
        "best epoch {} (val loss {:.5})",
        report.best_epoch,
        report.best_val
    );
    Ok(vec![l.rel(&ck_path), l.rel(&log_path), l.rel(&meta_path)])
}

fn read_log_rows_below(path: &std::path::Path, limit: usize) -> Vec<EpochRow> {
    let Ok(mut rdr) = csv::Reader::from_path(path) else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    for rec in rdr.records().flatten() {
        let parse = || -> Option<EpochRow> {
            Some(EpochRow {
                epoch: rec.get(0)?.parse().ok()?,
                lr: rec.get(1)?.parse().ok()?,
                train_loss: rec.get(2)?.parse().ok()?,
                val_loss: rec.get(3)?.parse().ok()?,
            })
        };
        if let Some(row) = parse() {
            if row.epoch < limit {
                rows.push(row);
            }
        }
    }
    rows
}
