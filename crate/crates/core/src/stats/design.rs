//! Design matrices for the spine-age-gap regressions.
//!
//! Five covariate groups are fit separately against SAG, each with an
//! intercept and a sex indicator as controls. Degenerative indicators are
//! severity-exclusive: a subject counts only in the most severe tier
//! present for a given condition kind, and that tier's indicator fires
//! only when the finding count exceeds the tier's threshold.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::report::{
    dense_cell_index, DegenerativeKind, DenseFeatures, Region, Severity, StructuralPathology,
    DENSE_CELLS_PER_REGION,
};
use crate::stats::ols::ols;
use crate::synth::{Covariates, ExerciseLevel, Sex, WorkLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateGroup {
    LumbarDegenerative,
    Structural,
    Lifestyle,
    CervicalDegenerative,
    ThoracicDegenerative,
}

impl CovariateGroup {
    pub const ALL: [CovariateGroup; 5] = [
        CovariateGroup::LumbarDegenerative,
        CovariateGroup::Structural,
        CovariateGroup::Lifestyle,
        CovariateGroup::CervicalDegenerative,
        CovariateGroup::ThoracicDegenerative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CovariateGroup::LumbarDegenerative => "lumbar_degenerative",
            CovariateGroup::Structural => "structural",
            CovariateGroup::Lifestyle => "lifestyle",
            CovariateGroup::CervicalDegenerative => "cervical_degenerative",
            CovariateGroup::ThoracicDegenerative => "thoracic_degenerative",
        }
    }

    fn region(self) -> Option<Region> {
        match self {
            CovariateGroup::LumbarDegenerative => Some(Region::Lumbar),
            CovariateGroup::CervicalDegenerative => Some(Region::Cervical),
            CovariateGroup::ThoracicDegenerative => Some(Region::Thoracic),
            _ => None,
        }
    }
}

impl fmt::Display for CovariateGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovariateGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown covariate group {s:?}")))
    }
}

/// One subject entering a SAG regression.
#[derive(Debug, Clone)]
pub struct RegressionSubject {
    pub sag: f64,
    pub sex: Sex,
    pub dense: DenseFeatures,
    pub covariates: Covariates,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Columns removed because they carried no variation in this cohort.
    pub dropped: Vec<String>,
}

/// Severity tiers with indicator thresholds, in published column order
/// (mildest first). An indicator fires when the subject's most severe
/// tier for the kind is this one AND its finding count exceeds `1`.
struct TierSpec {
    kind: DegenerativeKind,
    tiers: &'static [(Severity, u32)],
}

const DEGENERATIVE_SPECS: [TierSpec; 7] = [
    TierSpec {
        kind: DegenerativeKind::DiscBulge,
        tiers: &[
            (Severity::Mild, 2),
            (Severity::Moderate, 1),
            (Severity::Severe, 0),
        ],
    },
    TierSpec {
        kind: DegenerativeKind::Desiccation,
        tiers: &[
            (Severity::Mild, 1),
            (Severity::Moderate, 0),
            (Severity::Severe, 0),
            (Severity::NearComplete, 0),
        ],
    },
    TierSpec {
        kind: DegenerativeKind::AnnularFissure,
        tiers: &[(Severity::Present, 0)],
    },
    TierSpec {
        kind: DegenerativeKind::EndplateChange,
        tiers: &[(Severity::Present, 0)],
    },
    TierSpec {
        kind: DegenerativeKind::DiscOsteophyte,
        tiers: &[(Severity::Mild, 1), (Severity::Moderate, 0)],
    },
    TierSpec {
        kind: DegenerativeKind::Protrusion,
        tiers: &[(Severity::Mild, 1), (Severity::Moderate, 0)],
    },
    TierSpec {
        kind: DegenerativeKind::Extrusion,
        tiers: &[(Severity::Mild, 0)],
    },
];

fn tier_column_name(kind: DegenerativeKind, severity: Severity) -> String {
    match severity {
        Severity::Present => kind.name().to_string(),
        s => format!("{}_{}", s.name(), kind.name()),
    }
}

/// Indicator values for one kind in one region under severity exclusivity.
fn degenerative_indicators(dense: &DenseFeatures, region: Region, spec: &TierSpec) -> Vec<f64> {
    // Most severe severity present, scanning legal grades hardest-first.
    let mut present: Option<(Severity, u32)> = None;
    for &s in spec.kind.legal_severities().iter().rev() {
        let idx = dense_cell_index(region, spec.kind, s).expect("legal severity");
        let count = dense.counts[idx];
        if count > 0 {
            present = Some((s, count));
            break;
        }
    }
    spec.tiers
        .iter()
        .map(|&(tier, threshold)| match present {
            Some((s, count)) if s == tier && count > threshold => 1.0,
            _ => 0.0,
        })
        .collect()
}

fn lifestyle_row(c: &Covariates) -> Vec<f64> {
    vec![
        c.packs_per_day,
        c.alcohol_days_per_week,
        c.sedentary_hours,
        (c.work == WorkLevel::Moderate) as u8 as f64,
        (c.work == WorkLevel::Heavy) as u8 as f64,
        (c.exercise == ExerciseLevel::Moderate) as u8 as f64,
        (c.exercise == ExerciseLevel::Vigorous) as u8 as f64,
    ]
}

fn lifestyle_names() -> Vec<String> {
    [
        "packs_per_day",
        "alcohol_days_per_week",
        "sedentary_hours",
        "work_moderate",
        "work_heavy",
        "exercise_moderate",
        "exercise_vigorous",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn structural_row(dense: &DenseFeatures) -> Vec<f64> {
    StructuralPathology::ALL
        .iter()
        .map(|p| dense.counts[3 * DENSE_CELLS_PER_REGION + p.index()].min(1) as f64)
        .collect()
}

/// Builds the full design for one covariate group: intercept, sex, then the
/// group's columns. With `drop_empty`, group columns that are constant
/// across the cohort are removed and reported in `dropped`; the controls
/// always stay.
pub fn design_matrix(
    group: CovariateGroup,
    subjects: &[RegressionSubject],
    drop_empty: bool,
) -> Result<DesignMatrix> {
    if subjects.is_empty() {
        return Err(Error::InvalidArgument(
            "design matrix needs at least one subject".into(),
        ));
    }
    let (group_names, group_rows): (Vec<String>, Vec<Vec<f64>>) = match group.region() {
        Some(region) => {
            let names = DEGENERATIVE_SPECS
                .iter()
                .flat_map(|spec| {
                    spec.tiers
                        .iter()
                        .map(|&(s, _)| tier_column_name(spec.kind, s))
                })
                .collect();
            let rows = subjects
                .iter()
                .map(|subj| {
                    DEGENERATIVE_SPECS
                        .iter()
                        .flat_map(|spec| degenerative_indicators(&subj.dense, region, spec))
                        .collect()
                })
                .collect();
            (names, rows)
        }
        None if group == CovariateGroup::Structural => {
            let names = StructuralPathology::ALL
                .iter()
                .map(|p| p.name().to_string())
                .collect();
            let rows = subjects.iter().map(|s| structural_row(&s.dense)).collect();
            (names, rows)
        }
        None => {
            let rows = subjects
                .iter()
                .map(|s| lifestyle_row(&s.covariates))
                .collect();
            (lifestyle_names(), rows)
        }
    };

    // Constant columns carry no information and break the rank check.
    let mut keep = vec![true; group_names.len()];
    let mut dropped = Vec::new();
    if drop_empty {
        for j in 0..group_names.len() {
            let first = group_rows[0][j];
            if group_rows.iter().all(|r| r[j] == first) {
                keep[j] = false;
                dropped.push(group_names[j].clone());
            }
        }
    }

    let mut names = vec!["intercept".to_string(), "sex_male".to_string()];
    names.extend(
        group_names
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(n, _)| n.clone()),
    );
    let rows = subjects
        .iter()
        .zip(&group_rows)
        .map(|(subj, grow)| {
            let mut row = vec![1.0, (subj.sex == Sex::Male) as u8 as f64];
            row.extend(grow.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v));
            row
        })
        .collect();

    Ok(DesignMatrix {
        names,
        rows,
        dropped,
    })
}

/// One row of the published-style association table.
#[derive(Debug, Clone)]
pub struct SagRow {
    pub condition: String,
    pub n: usize,
    pub effect: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

#[derive(Debug, Clone)]
pub struct SagFit {
    pub rows: Vec<SagRow>,
    pub dropped: Vec<String>,
    pub n: usize,
    pub df: usize,
}

/// Regresses SAG on one covariate group and reports per-column effects
/// with 95% confidence intervals.
pub fn fit_sag_ols(group: CovariateGroup, subjects: &[RegressionSubject]) -> Result<SagFit> {
    let design = design_matrix(group, subjects, true)?;
    let y: Vec<f64> = subjects.iter().map(|s| s.sag).collect();
    let fit = ols(&design.names, &design.rows, &y)?;
    let rows = fit
        .columns
        .iter()
        .map(|c| SagRow {
            condition: c.name.clone(),
            n: c.n_nonzero,
            effect: c.estimate,
            ci_low: c.ci_low,
            ci_high: c.ci_high,
            significant: c.significant,
        })
        .collect();
    Ok(SagFit {
        rows,
        dropped: design.dropped,
        n: fit.n,
        df: fit.df,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{aggregate, ConditionRecord, Vertebra};

    fn blank_covariates() -> Covariates {
        Covariates {
            packs_per_day: 0.0,
            alcohol_days_per_week: 0.0,
            sedentary_hours: 6.0,
            work: WorkLevel::Light,
            exercise: ExerciseLevel::None,
        }
    }

    fn subject_with(records: &[ConditionRecord]) -> RegressionSubject {
        RegressionSubject {
            sag: 0.0,
            sex: Sex::Female,
            dense: aggregate(records).unwrap(),
            covariates: blank_covariates(),
        }
    }

    fn lumbar(n: u8) -> Vertebra {
        Vertebra::new(Region::Lumbar, n).unwrap()
    }

    fn col(design: &DesignMatrix, name: &str) -> usize {
        design
            .names
            .iter()
            .position(|c| c == name)
            .unwrap_or_else(|| panic!("missing column {name}"))
    }

    #[test]
    fn a_severe_finding_suppresses_milder_tiers() {
        // Three mild bulges would clear the mild threshold (> 2), but the
        // severe finding claims the subject for the severe tier alone.
        let records = vec![
            ConditionRecord::degenerative(lumbar(1), DegenerativeKind::DiscBulge, Severity::Mild),
            ConditionRecord::degenerative(lumbar(2), DegenerativeKind::DiscBulge, Severity::Mild),
            ConditionRecord::degenerative(lumbar(3), DegenerativeKind::DiscBulge, Severity::Mild),
            ConditionRecord::degenerative(lumbar(4), DegenerativeKind::DiscBulge, Severity::Severe),
        ];
        let subjects = vec![subject_with(&records)];
        let d = design_matrix(CovariateGroup::LumbarDegenerative, &subjects, false).unwrap();
        assert_eq!(d.rows[0][col(&d, "severe_disc_bulge")], 1.0);
        assert_eq!(d.rows[0][col(&d, "mild_disc_bulge")], 0.0);
        assert_eq!(d.rows[0][col(&d, "moderate_disc_bulge")], 0.0);
    }

    #[test]
    fn tier_thresholds_are_strict_lower_bounds() {
        let two_mild = vec![
            ConditionRecord::degenerative(lumbar(1), DegenerativeKind::DiscBulge, Severity::Mild),
            ConditionRecord::degenerative(lumbar(2), DegenerativeKind::DiscBulge, Severity::Mild),
        ];
        let three_mild = vec![
            ConditionRecord::degenerative(lumbar(1), DegenerativeKind::DiscBulge, Severity::Mild),
            ConditionRecord::degenerative(lumbar(2), DegenerativeKind::DiscBulge, Severity::Mild),
            ConditionRecord::degenerative(lumbar(3), DegenerativeKind::DiscBulge, Severity::Mild),
        ];
        let subjects = vec![subject_with(&two_mild), subject_with(&three_mild)];
        let d = design_matrix(CovariateGroup::LumbarDegenerative, &subjects, false).unwrap();
        let mild = col(&d, "mild_disc_bulge");
        assert_eq!(d.rows[0][mild], 0.0, "two mild bulges must not fire > 2");
        assert_eq!(d.rows[1][mild], 1.0, "three mild bulges must fire > 2");
    }

    #[test]
    fn an_unlisted_most_severe_tier_suppresses_the_whole_kind() {
        // Severe protrusion has no published column; a subject whose worst
        // protrusion is severe therefore fires no protrusion indicator.
        let records = vec![
            ConditionRecord::degenerative(lumbar(1), DegenerativeKind::Protrusion, Severity::Mild),
            ConditionRecord::degenerative(lumbar(2), DegenerativeKind::Protrusion, Severity::Mild),
            ConditionRecord::degenerative(
                lumbar(3),
                DegenerativeKind::Protrusion,
                Severity::Severe,
            ),
        ];
        let subjects = vec![subject_with(&records)];
        let d = design_matrix(CovariateGroup::LumbarDegenerative, &subjects, false).unwrap();
        assert_eq!(d.rows[0][col(&d, "mild_protrusion")], 0.0);
        assert_eq!(d.rows[0][col(&d, "moderate_protrusion")], 0.0);
    }

    #[test]
    fn regions_do_not_leak_into_each_other() {
        let records = vec![ConditionRecord::degenerative(
            Vertebra::new(Region::Cervical, 3).unwrap(),
            DegenerativeKind::DiscBulge,
            Severity::Severe,
        )];
        let subjects = vec![subject_with(&records)];
        let lum = design_matrix(CovariateGroup::LumbarDegenerative, &subjects, false).unwrap();
        assert_eq!(lum.rows[0][col(&lum, "severe_disc_bulge")], 0.0);
        let cerv = design_matrix(CovariateGroup::CervicalDegenerative, &subjects, false).unwrap();
        assert_eq!(cerv.rows[0][col(&cerv, "severe_disc_bulge")], 1.0);
    }

    #[test]
    fn degenerative_design_has_the_published_column_set() {
        let subjects = vec![subject_with(&[])];
        let d = design_matrix(CovariateGroup::LumbarDegenerative, &subjects, false).unwrap();
        let expected = [
            "intercept",
            "sex_male",
            "mild_disc_bulge",
            "moderate_disc_bulge",
            "severe_disc_bulge",
            "mild_desiccation",
            "moderate_desiccation",
            "severe_desiccation",
            "near_complete_desiccation",
            "annular_fissure",
            "endplate_change",
            "mild_disc_osteophyte",
            "moderate_disc_osteophyte",
            "mild_protrusion",
            "moderate_protrusion",
            "mild_extrusion",
        ];
        assert_eq!(d.names, expected);
    }

    #[test]
    fn lifestyle_and_structural_columns_map_through() {
        let mut subj = subject_with(&[ConditionRecord::Structural(
            StructuralPathology::SpinalStenosis,
        )]);
        subj.sex = Sex::Male;
        subj.covariates = Covariates {
            packs_per_day: 1.5,
            alcohol_days_per_week: 3.0,
            sedentary_hours: 9.0,
            work: WorkLevel::Heavy,
            exercise: ExerciseLevel::Moderate,
        };
        let subjects = vec![subj];

        let life = design_matrix(CovariateGroup::Lifestyle, &subjects, false).unwrap();
        assert_eq!(life.rows[0][col(&life, "sex_male")], 1.0);
        assert_eq!(life.rows[0][col(&life, "packs_per_day")], 1.5);
        assert_eq!(life.rows[0][col(&life, "work_heavy")], 1.0);
        assert_eq!(life.rows[0][col(&life, "work_moderate")], 0.0);
        assert_eq!(life.rows[0][col(&life, "exercise_moderate")], 1.0);
        assert_eq!(life.rows[0][col(&life, "exercise_vigorous")], 0.0);

        let s = design_matrix(CovariateGroup::Structural, &subjects, false).unwrap();
        assert_eq!(s.rows[0][col(&s, "spinal_stenosis")], 1.0);
        assert_eq!(s.rows[0][col(&s, "fracture")], 0.0);
    }

    #[test]
    fn constant_columns_are_dropped_and_reported() {
        // Only the severe-bulge indicator varies; everything else is flat.
        let active = vec![ConditionRecord::degenerative(
            lumbar(1),
            DegenerativeKind::DiscBulge,
            Severity::Severe,
        )];
        let subjects = vec![subject_with(&active), subject_with(&[])];
        let d = design_matrix(CovariateGroup::LumbarDegenerative, &subjects, true).unwrap();
        assert!(d.names.contains(&"severe_disc_bulge".to_string()));
        assert!(!d.names.contains(&"mild_disc_bulge".to_string()));
        assert!(d.dropped.contains(&"mild_disc_bulge".to_string()));
        assert_eq!(d.names.len(), 3);
        assert_eq!(d.dropped.len(), 13);
    }

    #[test]
    fn planted_effects_are_recovered_through_the_full_fit() {
        // sag = 0.5 + 1.0 * male - 2.0 * mild + 1.5 * moderate + 3.0 * severe,
        // noiseless, cycling the bulge tier and sex over 240 subjects.
        let mut subjects = Vec::new();
        for i in 0..240 {
            let records: Vec<ConditionRecord> = match i % 4 {
                1 => (1..=3)
                    .map(|v| {
                        ConditionRecord::degenerative(
                            lumbar(v),
                            DegenerativeKind::DiscBulge,
                            Severity::Mild,
                        )
                    })
                    .collect(),
                2 => (1..=2)
                    .map(|v| {
                        ConditionRecord::degenerative(
                            lumbar(v),
                            DegenerativeKind::DiscBulge,
                            Severity::Moderate,
                        )
                    })
                    .collect(),
                3 => vec![ConditionRecord::degenerative(
                    lumbar(1),
                    DegenerativeKind::DiscBulge,
                    Severity::Severe,
                )],
                _ => Vec::new(),
            };
            let mut subj = subject_with(&records);
            // Sex must vary independently of the tier cycle, otherwise
            // sex_male equals a sum of tier indicators and the fit is
            // legitimately rank deficient.
            subj.sex = if (i / 4) % 2 == 0 { Sex::Female } else { Sex::Male };
            let male = (subj.sex == Sex::Male) as u8 as f64;
            let (mild, moderate, severe) = match i % 4 {
                1 => (1.0, 0.0, 0.0),
                2 => (0.0, 1.0, 0.0),
                3 => (0.0, 0.0, 1.0),
                _ => (0.0, 0.0, 0.0),
            };
            subj.sag = 0.5 + 1.0 * male - 2.0 * mild + 1.5 * moderate + 3.0 * severe;
            subjects.push(subj);
        }
        let fit = fit_sag_ols(CovariateGroup::LumbarDegenerative, &subjects).unwrap();
        let row = |name: &str| {
            fit.rows
                .iter()
                .find(|r| r.condition == name)
                .unwrap_or_else(|| panic!("missing row {name}"))
        };
        assert!((row("intercept").effect - 0.5).abs() < 1e-8);
        assert!((row("sex_male").effect - 1.0).abs() < 1e-8);
        assert!((row("mild_disc_bulge").effect + 2.0).abs() < 1e-8);
        assert!((row("moderate_disc_bulge").effect - 1.5).abs() < 1e-8);
        assert!((row("severe_disc_bulge").effect - 3.0).abs() < 1e-8);
        assert!(row("severe_disc_bulge").significant);
        assert!(row("mild_disc_bulge").significant);
        assert_eq!(row("severe_disc_bulge").n, 60);
        // Unused tiers were dropped rather than fit.
        assert!(fit.dropped.contains(&"mild_extrusion".to_string()));
        assert_eq!(fit.n, 240);
    }

    #[test]
    fn empty_cohorts_are_rejected() {
        assert!(design_matrix(CovariateGroup::Structural, &[], true).is_err());
    }

    #[test]
    fn group_names_round_trip_through_strings() {
        for g in CovariateGroup::ALL {
            assert_eq!(g.name().parse::<CovariateGroup>().unwrap(), g);
        }
        assert!("spooky".parse::<CovariateGroup>().is_err());
    }
}
