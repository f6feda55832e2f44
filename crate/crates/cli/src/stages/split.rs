//! Stratified assignment of subjects to train/val/test.
//!
//! Only cluster-normal subjects are eligible for train and val; every
//! abnormal subject goes to test. Normal subjects are stratified by
//! (bracket, sex) and allocated by largest remainder, so each stratum's
//! counts sit within one subject of its exact proportional share.

use std::collections::BTreeMap;

use anyhow::{anyhow, Result};
use rand::seq::SliceRandom;
use spineage_core::rngs::{domain, rng_for};
use spineage_core::synth::{read_subjects_csv, BRACKETS};
use spineage_core::{Sex, Split};

use super::Ctx;

/// Largest-remainder allocation of `n` into parts proportional to `weights`.
/// Each part differs from its exact share by strictly less than one.
pub fn largest_remainder(n: usize, weights: &[u32]) -> Vec<usize> {
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    assert!(total > 0, "weights must not all be zero");
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| n as f64 * w as f64 / total as f64)
        .collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Stable tie-break on index keeps the allocation deterministic.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        alloc[order[i % order.len()]] += 1;
    }
    alloc
}

fn read_verdicts(ctx: &Ctx<'_>) -> Result<BTreeMap<String, bool>> {
    let mut verdicts = BTreeMap::new();
    for bracket in BRACKETS {
        let path = ctx.layout.cluster_csv(bracket);
        let mut rdr = csv::Reader::from_path(&path)?;
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec
                .get(0)
                .ok_or_else(|| anyhow!("cluster row without subject_id"))?;
            let verdict = rec
                .get(2)
                .ok_or_else(|| anyhow!("cluster row without verdict"))?;
            verdicts.insert(id.to_string(), verdict == "normal");
        }
    }
    Ok(verdicts)
}

pub fn run(ctx: &Ctx<'_>) -> Result<Vec<String>> {
    let c = ctx.config;
    let l = ctx.layout;
    let subjects = read_subjects_csv(&l.subjects_csv()).map_err(|e| anyhow!("{e}"))?;
    let verdicts = read_verdicts(ctx)?;

    let mut assignment: BTreeMap<String, (Split, bool)> = BTreeMap::new();
    let weights = [c.split.train, c.split.val, c.split.test];

    for (bi, &bracket) in BRACKETS.iter().enumerate() {
        for (si, sex) in [Sex::Female, Sex::Male].into_iter().enumerate() {
            let mut ids: Vec<&str> = Vec::new();
            for s in &subjects {
                if s.bracket != bracket || s.sex != sex {
                    continue;
                }
                let normal = *verdicts.get(&s.id).ok_or_else(|| {
                    anyhow!("subject {} missing from cluster outputs", s.id)
                })?;
                if normal {
                    ids.push(&s.id);
                } else {
                    assignment.insert(s.id.clone(), (Split::Test, false));
                }
            }
            ids.sort_unstable();
            let stratum = (bi * 2 + si) as u64;
            ids.shuffle(&mut rng_for(c.seed, domain::SPLIT, stratum));
            let alloc = largest_remainder(ids.len(), &weights);
            for (k, id) in ids.iter().enumerate() {
                let split = if k < alloc[0] {
                    Split::Train
                } else if k < alloc[0] + alloc[1] {
                    Split::Val
                } else {
                    Split::Test
                };
                assignment.insert((*id).to_string(), (split, true));
            }
        }
    }

    let path = l.splits_csv();
    l.ensure_parent(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["subject_id", "split", "normal"])?;
    let mut counts = [0usize; 3];
    for (id, (split, normal)) in &assignment {
        w.write_record([
            id.clone(),
            split.to_string(),
            if *normal { "true" } else { "false" }.to_string(),
        ])?;
        counts[match split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }] += 1;
    }
    w.flush()?;
    log::info!(
        "split: {} train / {} val / {} test",
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(vec![l.rel(&path)])
}
