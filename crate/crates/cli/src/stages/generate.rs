//! Cohort generation: subject profiles and condition reports.
//!
//! Ages are uniform over [25, 84] and sex is a fair coin, both drawn from
//! the cohort RNG stream. Each subject gets its own derived seed; volumes
//! are regenerated from that seed wherever they are needed, so this stage
//! persists only `subjects.csv` and `records.csv`.

use anyhow::{anyhow, Result};
use rand::Rng;
use spineage_core::rngs::{derive_seed, domain, rng_for};
use spineage_core::synth::{generate_subject, write_subjects_csv};
use spineage_core::{ConditionRecord, Sex};

use super::Ctx;

pub fn run(ctx: &Ctx<'_>) -> Result<Vec<String>> {
    let c = ctx.config;
    let l = ctx.layout;
    let synth = c.synth.to_synth_config();
    let n = c.cohort.subjects;
    let width = n.to_string().len().max(4);

    let mut cohort_rng = rng_for(c.seed, domain::COHORT, 0);
    let mut subjects = Vec::with_capacity(n);
    let mut records: Vec<(String, ConditionRecord)> = Vec::new();
    for i in 0..n {
        let age = cohort_rng.gen_range(25.0..=84.0);
        let sex = if cohort_rng.gen_bool(0.5) {
            Sex::Male
        } else {
            Sex::Female
        };
        let seed = derive_seed(c.seed, domain::SUBJECT_PROFILE, i as u64);
        let id = format!("s{:0width$}", i + 1, width = width);
        let (_volume, recs, subject) = generate_subject(&synth, &id, age, sex, seed)
            .map_err(|e| anyhow!("generating subject {id}: {e}"))?;
        for r in recs {
            records.push((id.clone(), r));
        }
        subjects.push(subject);
    }

    let subjects_path = l.subjects_csv();
    let records_path = l.records_csv();
    l.ensure_parent(&subjects_path)?;
    write_subjects_csv(&subjects_path, &subjects).map_err(|e| anyhow!("{e}"))?;
    spineage_core::report::write_records_csv(&records_path, &records)
        .map_err(|e| anyhow!("{e}"))?;
    log::info!(
        "generated {} subjects with {} condition records",
        subjects.len(),
        records.len()
    );
    Ok(vec![l.rel(&subjects_path), l.rel(&records_path)])
}
