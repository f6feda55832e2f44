//! Per-bracket condition clustering: report features -> UMAP (Canberra)
//! -> HDBSCAN -> population-share normality verdicts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use anyhow::{anyhow, bail, Result};
use spineage_core::hdbscan::{hdbscan, HdbscanConfig, Verdict};
use spineage_core::report::{aggregate, canberra, group_by_subject, read_records_csv};
use spineage_core::rngs::{derive_seed, domain};
use spineage_core::synth::{read_subjects_csv, BRACKETS};
use spineage_core::umap::{embed, UmapConfig};
use spineage_core::DenseFeatures;

use super::Ctx;

/// Cluster-merge distance floor per bracket, mirroring a manual reading of
/// each bracket's embedding density. Fixed configuration, not adaptive.
pub fn epsilon_for(bracket: u32) -> f64 {
    match bracket {
        30 | 50 => 1.0,
        40 | 60 => 0.7,
        70 | 80 => 0.3,
        _ => 0.5,
    }
}

/// One-percent rule: the smallest cluster worth keeping scales with the
/// bracket population.
pub fn min_cluster_size_for(population: usize) -> usize {
    ((population as f64) * 0.01).ceil() as usize
}

pub fn run(ctx: &Ctx<'_>) -> Result<Vec<String>> {
    let l = ctx.layout;
    let subjects = read_subjects_csv(&l.subjects_csv()).map_err(|e| anyhow!("{e}"))?;
    let records = read_records_csv(&l.records_csv()).map_err(|e| anyhow!("{e}"))?;
    let by_subject = group_by_subject(records);

    // Dense features per subject; subjects without records get all zeros.
    let mut dense: BTreeMap<&str, DenseFeatures> = BTreeMap::new();
    for s in &subjects {
        let feats = match by_subject.get(&s.id) {
            Some(recs) => aggregate(recs).map_err(|e| anyhow!("subject {}: {e}", s.id))?,
            None => DenseFeatures::zeros(),
        };
        dense.insert(&s.id, feats);
    }

    let mut outputs = Vec::new();
    let mut summary = String::new();
    for (bi, &bracket) in BRACKETS.iter().enumerate() {
        let members: Vec<&spineage_core::Subject> =
            subjects.iter().filter(|s| s.bracket == bracket).collect();
        let population = members.len();
        if population < 16 {
            bail!(
                "bracket {bracket} has only {population} subjects; clustering needs at \
                 least 16 per bracket — increase cohort.subjects"
            );
        }
        let feats: Vec<&DenseFeatures> = members.iter().map(|s| &dense[s.id.as_str()]).collect();
        let points: Vec<Vec<f64>> = feats.iter().map(|f| f.to_f64()).collect();

        let seed = derive_seed(ctx.config.seed, domain::UMAP, bi as u64);
        let mut umap_cfg = UmapConfig::default();
        umap_cfg.n_neighbors = umap_cfg.n_neighbors.min(population - 1);
        let (_graph, embedding) =
            embed(&points, &umap_cfg, seed, canberra).map_err(|e| anyhow!("{e}"))?;

        let embedding_path = l.embedding_csv(bracket);
        l.ensure_parent(&embedding_path)?;
        let mut w = csv::Writer::from_path(&embedding_path)?;
        w.write_record(["subject_id", "x", "y"])?;
        for (s, p) in members.iter().zip(&embedding.coords) {
            w.write_record([s.id.clone(), format!("{:.10}", p[0]), format!("{:.10}", p[1])])?;
        }
        w.flush()?;
        outputs.push(l.rel(&embedding_path));

        let hdb_cfg = HdbscanConfig {
            min_cluster_size: min_cluster_size_for(population),
            min_samples: 5,
            cluster_selection_epsilon: epsilon_for(bracket),
        };
        let mut labeling = hdbscan(&embedding.coords, &hdb_cfg).map_err(|e| anyhow!("{e}"))?;
        labeling.assign_normality(population);
        let owned_feats: Vec<DenseFeatures> = feats.iter().map(|f| (*f).clone()).collect();
        labeling.summarize_conditions(&owned_feats);
        let verdicts = labeling.point_verdicts();

        let cluster_path = l.cluster_csv(bracket);
        let mut w = csv::Writer::from_path(&cluster_path)?;
        w.write_record(["subject_id", "cluster_id", "verdict"])?;
        for ((s, &label), verdict) in members.iter().zip(&labeling.labels).zip(&verdicts) {
            w.write_record([
                s.id.clone(),
                label.to_string(),
                match verdict {
                    Verdict::Normal => "normal".to_string(),
                    Verdict::Abnormal => "abnormal".to_string(),
                },
            ])?;
        }
        w.flush()?;
        outputs.push(l.rel(&cluster_path));

        let noise = labeling.labels.iter().filter(|&&v| v < 0).count();
        writeln!(summary, "bracket {bracket}: {population} subjects, {noise} noise").unwrap();
        for (cid, info) in labeling.clusters.iter().enumerate() {
            let share = info.size as f64 / population as f64;
            writeln!(
                summary,
                "  cluster {cid}: size {} share {:.3} verdict {} dominant [{}]",
                info.size,
                share,
                match info.verdict {
                    Some(Verdict::Normal) => "normal",
                    _ => "abnormal",
                },
                info.dominant.join(", "),
            )
            .unwrap();
        }
    }

    let summary_path = l.cluster_summary();
    fs::write(&summary_path, summary)?;
    outputs.push(l.rel(&summary_path));
    Ok(outputs)
}
