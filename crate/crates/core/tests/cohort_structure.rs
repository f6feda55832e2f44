//! End-to-end structure of the synthetic cohort: report features per
//! bracket must embed and cluster into at least one Normal cluster, and
//! the dominant conditions of the biggest cluster must match the
//! archetype (mild lumbar findings).

use spineage_core::hdbscan::{hdbscan, HdbscanConfig, Verdict};
use spineage_core::report::aggregate;
use spineage_core::report::DenseFeatures;
use spineage_core::rngs::{self, domain};
use spineage_core::synth::{generate_subject, SynthConfig, BRACKETS};
use spineage_core::umap::{embed, UmapConfig};
use spineage_core::Sex;

/// Per-bracket cluster selection epsilon in embedding space.
fn epsilon_for(bracket: u32) -> f64 {
    match bracket {
        30 => 1.0,
        40 => 0.7,
        50 => 1.0,
        60 => 0.7,
        70 => 0.3,
        80 => 0.3,
        _ => unreachable!(),
    }
}

fn canberra_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let denom = x.abs() + y.abs();
        if denom > 0.0 {
            sum += (x - y).abs() / denom;
        }
    }
    sum
}

#[test]
fn every_bracket_has_a_normal_cluster() {
    let config = SynthConfig::default();
    let per_bracket = 110usize;
    let master = 20_260_501;

    let mut features: Vec<Vec<DenseFeatures>> = vec![Vec::new(); BRACKETS.len()];
    for (bi, &bracket) in BRACKETS.iter().enumerate() {
        for i in 0..per_bracket {
            let age = ((bracket as f64 - 5.0) + 10.0 * (i as f64 + 0.5) / per_bracket as f64)
                .min(84.0);
            let seed = rngs::derive_seed(master, domain::SUBJECT_PROFILE, (bi * 1000 + i) as u64);
            let sex = if i % 2 == 0 { Sex::Female } else { Sex::Male };
            let (_, records, _) = generate_subject(&config, "s", age, sex, seed).unwrap();
            features[bi].push(aggregate(&records).unwrap());
        }
    }

    let mut total_normal = 0usize;
    for (bi, bracket_features) in features.iter().enumerate() {
        let bracket = BRACKETS[bi];
        let points: Vec<Vec<f64>> = bracket_features
            .iter()
            .map(|f| f.counts.iter().map(|&c| c as f64).collect())
            .collect();
        let umap_seed = rngs::derive_seed(master, domain::UMAP, bi as u64);
        let (_, embedding) = embed(&points, &UmapConfig::default(), umap_seed, canberra_slices)
            .unwrap();
        let cfg = HdbscanConfig {
            min_cluster_size: (bracket_features.len() as f64 * 0.01).ceil() as usize,
            min_samples: 5,
            cluster_selection_epsilon: epsilon_for(bracket),
        };
        let mut labeling = hdbscan(&embedding.coords, &cfg).unwrap();
        labeling.assign_normality(bracket_features.len());
        labeling.summarize_conditions(bracket_features);

        let verdicts = labeling.point_verdicts();
        let n_normal = verdicts.iter().filter(|v| **v == Verdict::Normal).count();
        let normal_clusters = labeling
            .clusters
            .iter()
            .filter(|c| c.verdict == Some(Verdict::Normal))
            .count();
        println!(
            "bracket {bracket}: {} clusters, {normal_clusters} normal, {n_normal}/{} normal subjects",
            labeling.clusters.len(),
            bracket_features.len()
        );
        for (id, c) in labeling.clusters.iter().enumerate() {
            println!(
                "  cluster {id}: size {} share {:.3} verdict {:?} dominant {:?}",
                c.size,
                c.size as f64 / bracket_features.len() as f64,
                c.verdict,
                c.dominant
            );
        }
        assert!(
            normal_clusters >= 1,
            "bracket {bracket} has no normal cluster"
        );
        total_normal += n_normal;

        // The dominant conditions of the biggest normal cluster follow
        // the archetype: mild lumbar disc bulges.
        let biggest = labeling
            .clusters
            .iter()
            .filter(|c| c.verdict == Some(Verdict::Normal))
            .max_by_key(|c| c.size)
            .unwrap();
        assert!(
            biggest
                .dominant
                .iter()
                .any(|name| name.contains("lumbar") && name.contains("disc_bulge")),
            "bracket {bracket} archetype cluster lacks lumbar bulges: {:?}",
            biggest.dominant
        );
    }

    // Normal subjects across the cohort: roughly the non-tail share.
    let share = total_normal as f64 / (per_bracket * BRACKETS.len()) as f64;
    println!("cohort normal share {share:.3}");
    assert!(
        (0.35..0.75).contains(&share),
        "cohort normal share {share:.3} out of range"
    );
}

#[test]
fn archetype_distances_stay_below_the_split_threshold() {
    // Two subjects inside one bracket archetype whose counts differ by
    // the fuzz of one must stay within Canberra 1/3 + 1/3; the cliff to
    // a zero-count cell is 1.0. This pins the geometry the clustering
    // relies on.
    let mut a = vec![0.0; 5];
    let mut b = vec![0.0; 5];
    a[0] = 3.0;
    b[0] = 4.0; // bulge fuzz
    a[1] = 1.0;
    b[1] = 2.0; // desiccation fuzz
    let within = canberra_slices(&a, &b);
    assert!(within <= 2.0 / 3.0 + 1e-12, "within-archetype {within}");

    let mut c = vec![0.0; 5];
    c[0] = 3.0;
    c[1] = 1.0;
    c[2] = 1.0; // one osteophyte: a fresh cell
    let cliff = canberra_slices(&a, &c);
    assert!(cliff >= 1.0, "zero-to-one cliff {cliff}");
}
