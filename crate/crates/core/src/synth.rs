//! Deterministic synthetic spine generator: a volume (bright vertebra
//! column with darkening, shrinking disc gaps and osteophyte blobs), the
//! matching condition records, and lifestyle covariates.
//!
//! # Degeneration model
//!
//! All coefficients are arbitrary but fixed:
//!
//! * disc intensity: `clamp(1 - 0.011 * (age_r - 25) + eps)`, where the
//!   noise `eps` splits into a subject component N(0, 0.04^2) and a
//!   per-disc component N(0, 0.03^2), i.e. N(0, 0.05^2) marginally;
//! * disc height shrinks linearly, 100% at age 25 down to 45% at 84;
//! * vertebral intensity declines by a fraction 0.010 per year
//!   (bone-density loss), giving every column voxel an age cue that is
//!   independent of the subject's column size;
//! * osteophyte blobs: Poisson with rate 0.05 * (age - 25), rendered as
//!   bright spheres at cervical vertebra corners; every blob emits one
//!   osteophyte record, mild or moderate by radius;
//! * `age_r` is a rendering age: chronological age shifted by structural
//!   findings, lifestyle, and N(0, 1) individual variation, so reported
//!   pathologies and lifestyle leave an age-gap trace in the image.
//!
//! Reports follow one bracket archetype (mild lumbar bulges and, from the
//! 50s, lumbar desiccation, with counts fuzzed by at most one) plus an
//! abnormal tail whose share grows with the bracket: structural
//! pathologies and moderate/severe degenerative extras.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::report::{
    ConditionRecord, DegenerativeKind, Region, Severity, StructuralPathology, Vertebra,
};
use crate::rngs::{self, domain};
use crate::volume::{RegionLabel, Volume};

pub const AGE_MIN: f64 = 25.0;
pub const AGE_MAX: f64 = 84.0;
pub const BRACKETS: [u32; 6] = [30, 40, 50, 60, 70, 80];

/// Decade bracket containing an age (25-34 -> 30, ..., 75-84 -> 80).
pub fn bracket_of(age: f64) -> Result<u32> {
    if !(AGE_MIN..=AGE_MAX).contains(&age) {
        return Err(Error::InvalidArgument(format!(
            "age {age} outside [{AGE_MIN}, {AGE_MAX}]"
        )));
    }
    Ok(BRACKETS[((age - AGE_MIN) / 10.0) as usize])
}

pub fn bracket_index(bracket: u32) -> usize {
    BRACKETS.iter().position(|&b| b == bracket).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sex {
    Female,
    Male,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
        })
    }
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            other => Err(Error::Parse(format!("unknown sex {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkLevel {
    Light,
    Moderate,
    Heavy,
}

impl fmt::Display for WorkLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkLevel::Light => "light",
            WorkLevel::Moderate => "moderate",
            WorkLevel::Heavy => "heavy",
        })
    }
}

impl FromStr for WorkLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(WorkLevel::Light),
            "moderate" => Ok(WorkLevel::Moderate),
            "heavy" => Ok(WorkLevel::Heavy),
            other => Err(Error::Parse(format!("unknown work level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExerciseLevel {
    None,
    Moderate,
    Vigorous,
}

impl fmt::Display for ExerciseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExerciseLevel::None => "none",
            ExerciseLevel::Moderate => "moderate",
            ExerciseLevel::Vigorous => "vigorous",
        })
    }
}

impl FromStr for ExerciseLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ExerciseLevel::None),
            "moderate" => Ok(ExerciseLevel::Moderate),
            "vigorous" => Ok(ExerciseLevel::Vigorous),
            other => Err(Error::Parse(format!("unknown exercise level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariates {
    pub packs_per_day: f64,
    pub alcohol_days_per_week: f64,
    pub sedentary_hours: f64,
    pub work: WorkLevel,
    pub exercise: ExerciseLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub seed: u64,
    pub age: f64,
    pub sex: Sex,
    pub bracket: u32,
    pub covariates: Covariates,
    pub split: Option<Split>,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Source grid (x, y, z). Desk-scale default 96 x 192 x 8.
    pub grid: [usize; 3],
    /// Nominal source spacing in mm; each render jitters it.
    pub spacing: [f64; 3],
    /// Relative spacing jitter, +-20% by default.
    pub spacing_jitter: f64,
    pub vertebra_count: usize,
    /// Disc intensity loss per rendering-age year.
    pub intensity_slope: f64,
    /// Subject-level disc noise sigma.
    pub noise_subject: f64,
    /// Per-disc noise sigma.
    pub noise_disc: f64,
    /// Osteophyte blobs per rendering-age year.
    pub blob_rate_per_year: f64,
    /// Fractional vertebral intensity loss per rendering-age year
    /// (bone-density decline), applied to the vertebra base intensity.
    pub vertebra_slope: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid: [96, 192, 8],
            spacing: [1.0, 1.0, 3.0],
            spacing_jitter: 0.2,
            vertebra_count: 12,
            intensity_slope: 0.011,
            noise_subject: 0.04,
            noise_disc: 0.03,
            blob_rate_per_year: 0.05,
            vertebra_slope: 0.010,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid[0] < 32 || self.grid[1] < 32 || self.grid[2] < 2 {
            return Err(Error::InvalidArgument(
                "generator grid must be at least 32 x 32 x 2".into(),
            ));
        }
        if self.vertebra_count < 6 {
            return Err(Error::InvalidArgument(
                "vertebra count must be at least 6 (two per region)".into(),
            ));
        }
        if !(0.0..0.9).contains(&self.spacing_jitter) {
            return Err(Error::InvalidArgument("spacing jitter out of range".into()));
        }
        if !(0.0..=0.015).contains(&self.vertebra_slope) {
            return Err(Error::InvalidArgument(
                "vertebra slope must lie in [0, 0.015] per year".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic part of the disc intensity model.
pub fn disc_intensity_at(config: &SynthConfig, age: f64) -> f64 {
    (1.0 - config.intensity_slope * (age - 25.0)).clamp(0.0, 1.0)
}

/// Expected osteophyte blob count at a chronological age.
pub fn blob_rate(config: &SynthConfig, age: f64) -> f64 {
    (config.blob_rate_per_year * (age - 25.0)).max(0.0)
}

/// Deterministic vertebral intensity: bone density declines with age, so
/// voxels anywhere in the column carry an age cue that does not depend on
/// the subject's column size.
pub fn vertebra_intensity_at(config: &SynthConfig, age: f64) -> f64 {
    (VERTEBRA_INTENSITY * (1.0 - config.vertebra_slope * (age - 25.0))).clamp(0.05, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Blob {
    /// Rendered vertebra slot the blob sits on.
    pub slot: usize,
    pub radius_mm: f64,
    /// Lateral side (+x or -x) and in-slot jitter, in mm.
    pub side: f64,
    pub dy_mm: f64,
    pub dz_mm: f64,
}

/// Everything that defines a subject independent of scanner noise; a
/// rescan re-renders the same profile with a fresh render stream.
#[derive(Debug, Clone)]
pub(crate) struct Profile {
    pub covariates: Covariates,
    pub records: Vec<ConditionRecord>,
    pub blobs: Vec<Blob>,
    /// Per rendered-slot desiccation darkening.
    pub desiccation_delta: Vec<f64>,
    /// Rendered-slot indices with a bulge bump.
    pub bulge_slots: Vec<usize>,
    /// Rendered-slot indices with a fracture band.
    pub fracture_slots: Vec<usize>,
    pub render_age: f64,
    pub height_factor: f64,
    pub half_width_mm: f64,
}

/// Vertebra labels assigned to rendered slots: roughly a quarter
/// cervical, two fifths thoracic, the rest lumbar, spread evenly over
/// each region's label range.
pub fn rendered_labels(vertebra_count: usize) -> Vec<Vertebra> {
    let vc = ((vertebra_count as f64 * 0.25).round() as usize).max(1);
    let vt = ((vertebra_count as f64 * 0.42).round() as usize).max(1);
    let vl = vertebra_count - vc - vt;
    let mut labels = Vec::with_capacity(vertebra_count);
    let spread = |m: usize, range: usize| -> Vec<usize> {
        (0..m).map(|i| i * range / m).collect()
    };
    for i in spread(vc, 6) {
        labels.push(Vertebra::new(Region::Cervical, 2 + i as u8).unwrap());
    }
    for i in spread(vt, 13) {
        labels.push(Vertebra::new(Region::Thoracic, 1 + i as u8).unwrap());
    }
    for i in spread(vl, 7) {
        labels.push(Vertebra::new(Region::Lumbar, 1 + i as u8).unwrap());
    }
    labels
}

fn region_slots(labels: &[Vertebra], region: Region) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, v)| v.region() == region)
        .map(|(i, _)| i)
        .collect()
}

/// Rendering-age shift of one structural pathology.
fn structural_shift(p: StructuralPathology) -> f64 {
    match p {
        StructuralPathology::SpinalStenosis => 2.0,
        StructuralPathology::Fracture => 1.6,
        StructuralPathology::CanalNarrowing => 1.2,
        StructuralPathology::Spondylolisthesis => 1.0,
        StructuralPathology::BoneLesion => 0.8,
        StructuralPathology::SoftTissueEdema => 0.5,
        StructuralPathology::CordAbnormality => 0.3,
    }
}

fn lifestyle_shift(c: &Covariates) -> f64 {
    let work = match c.work {
        WorkLevel::Light => 0.0,
        WorkLevel::Moderate => 0.5,
        WorkLevel::Heavy => 1.2,
    };
    let exercise = match c.exercise {
        ExerciseLevel::None => 0.0,
        ExerciseLevel::Moderate => -0.5,
        ExerciseLevel::Vigorous => -1.0,
    };
    c.packs_per_day * 1.0
        + c.alcohol_days_per_week * 0.08
        + (c.sedentary_hours - 6.0).max(0.0) * 0.05
        + work
        + exercise
}

const MODERATE_BLOB_RADIUS_MM: f64 = 1.8;

pub(crate) fn sample_profile(
    config: &SynthConfig,
    age: f64,
    sex: Sex,
    rng: &mut ChaCha8Rng,
) -> Profile {
    let labels = rendered_labels(config.vertebra_count);
    let lumbar = region_slots(&labels, Region::Lumbar);
    let cervical = region_slots(&labels, Region::Cervical);
    let b = bracket_index(bracket_of(age).expect("age validated by caller"));

    let covariates = Covariates {
        packs_per_day: if rng.gen_bool(0.65) {
            0.0
        } else {
            (0.7 + Normal::<f64>::new(0.0, 0.4).unwrap().sample(rng)).clamp(0.1, 3.0)
        },
        alcohol_days_per_week: if rng.gen_bool(0.45) {
            0.0
        } else {
            rng.gen_range(1..=7) as f64
        },
        sedentary_hours: (6.0 + Normal::<f64>::new(0.0, 2.0).unwrap().sample(rng)).clamp(0.0, 14.0),
        work: match rng.gen_range(0.0..1.0) {
            u if u < 0.5 => WorkLevel::Light,
            u if u < 0.8 => WorkLevel::Moderate,
            _ => WorkLevel::Heavy,
        },
        exercise: match rng.gen_range(0.0..1.0) {
            u if u < 0.45 => ExerciseLevel::None,
            u if u < 0.80 => ExerciseLevel::Moderate,
            _ => ExerciseLevel::Vigorous,
        },
    };

    let mut records = Vec::new();
    let mut bulge_slots = Vec::new();
    let mut fracture_slots = Vec::new();
    let mut desiccation_delta = vec![0.0; config.vertebra_count];
    let mut condition_shift = 0.0;

    // Baseline incidental findings shared by everyone. Their counts stay
    // at two or more, so these cells never cross zero: they give each
    // bracket's report cloud continuous within-cluster spread, which
    // keeps the cloud connected across the osteophyte count strata.
    let thoracic = region_slots(&labels, Region::Thoracic);
    let thor_bulges = 2 + rng.gen_range(0..5usize);
    for i in 0..thor_bulges {
        let slot = thoracic[i % thoracic.len()];
        records.push(ConditionRecord::degenerative(
            labels[slot],
            DegenerativeKind::DiscBulge,
            Severity::Mild,
        ));
        if !bulge_slots.contains(&slot) {
            bulge_slots.push(slot);
        }
    }
    let uncov = 2 + rng.gen_range(0..3usize);
    for i in 0..uncov {
        let slot = cervical[i % cervical.len()];
        records.push(ConditionRecord::degenerative(
            labels[slot],
            DegenerativeKind::UncovertebralOsteophyte,
            Severity::Mild,
        ));
    }
    let endplates = 1 + rng.gen_range(0..2usize);
    for i in 0..endplates {
        let slot = lumbar[i % lumbar.len()];
        records.push(ConditionRecord::degenerative(
            labels[slot],
            DegenerativeKind::EndplateChange,
            Severity::Present,
        ));
    }

    // Bracket archetype: mild lumbar bulges plus, from the 50s, mild
    // lumbar desiccation. Counts move by at most one inside a bracket so
    // the report features form one tight cluster per bracket.
    let bulge_base = [1usize, 1, 2, 2, 3, 4][b];
    let bulge_count = (bulge_base + rng.gen_range(0..3)).min(2 * lumbar.len());
    for i in 0..bulge_count {
        let slot = lumbar[i % lumbar.len()];
        records.push(ConditionRecord::degenerative(
            labels[slot],
            DegenerativeKind::DiscBulge,
            Severity::Mild,
        ));
        if !bulge_slots.contains(&slot) {
            bulge_slots.push(slot);
        }
    }
    let desicc_base = [0usize, 0, 1, 1, 2, 2][b];
    let desicc_count = if desicc_base > 0 {
        (desicc_base + rng.gen_range(0..2)).min(lumbar.len())
    } else {
        0
    };
    for i in 0..desicc_count {
        let slot = lumbar[lumbar.len() - 1 - (i % lumbar.len())];
        records.push(ConditionRecord::degenerative(
            labels[slot],
            DegenerativeKind::Desiccation,
            Severity::Mild,
        ));
        desiccation_delta[slot] += 0.10;
    }

    // Abnormal tail: one of five fixed pathology templates, so abnormal
    // subjects form their own tight report clusters instead of smearing
    // into the archetype. The tail share grows with the bracket.
    let tail_share = 0.32 + 0.044 * b as f64;
    if rng.gen_bool(tail_share) {
        let template = rng.gen_range(0..5usize);
        let fuzz = |rng: &mut ChaCha8Rng| rng.gen_range(0..2usize);
        let push_deg = |records: &mut Vec<ConditionRecord>,
                            slots: &[usize],
                            kind: DegenerativeKind,
                            severity: Severity,
                            count: usize,
                            desiccation_delta: &mut Vec<f64>| {
            for i in 0..count {
                let slot = slots[i % slots.len()];
                records.push(ConditionRecord::degenerative(labels[slot], kind, severity));
                if kind == DegenerativeKind::Desiccation {
                    desiccation_delta[slot] +=
                        if severity == Severity::Severe { 0.26 } else { 0.18 };
                }
            }
        };
        match template {
            0 => {
                // Lumbar stenosis with protrusions.
                records.push(ConditionRecord::Structural(
                    StructuralPathology::SpinalStenosis,
                ));
                push_deg(&mut records, &lumbar, DegenerativeKind::Protrusion,
                    Severity::Moderate, 2 + fuzz(rng), &mut desiccation_delta);
                push_deg(&mut records, &lumbar, DegenerativeKind::Desiccation,
                    Severity::Moderate, 1 + fuzz(rng), &mut desiccation_delta);
            }
            1 => {
                // Vertebral fracture with endplate damage and edema.
                records.push(ConditionRecord::Structural(StructuralPathology::Fracture));
                records.push(ConditionRecord::Structural(
                    StructuralPathology::SoftTissueEdema,
                ));
                fracture_slots.push(config.vertebra_count / 2);
                push_deg(&mut records, &thoracic, DegenerativeKind::EndplateChange,
                    Severity::Present, 1 + fuzz(rng), &mut desiccation_delta);
            }
            2 => {
                // Cervical degeneration with severe desiccation.
                push_deg(&mut records, &cervical, DegenerativeKind::Protrusion,
                    Severity::Moderate, 2 + fuzz(rng), &mut desiccation_delta);
                push_deg(&mut records, &cervical, DegenerativeKind::Desiccation,
                    Severity::Severe, 1 + fuzz(rng), &mut desiccation_delta);
            }
            3 => {
                // Spondylolisthesis with extrusion and annular fissures.
                records.push(ConditionRecord::Structural(
                    StructuralPathology::Spondylolisthesis,
                ));
                push_deg(&mut records, &lumbar, DegenerativeKind::Extrusion,
                    Severity::Moderate, 1 + fuzz(rng), &mut desiccation_delta);
                push_deg(&mut records, &lumbar, DegenerativeKind::AnnularFissure,
                    Severity::Present, 1 + fuzz(rng), &mut desiccation_delta);
            }
            _ => {
                // Multilevel severe desiccation with canal narrowing.
                records.push(ConditionRecord::Structural(
                    StructuralPathology::CanalNarrowing,
                ));
                push_deg(&mut records, &lumbar, DegenerativeKind::Desiccation,
                    Severity::Severe, 2 + fuzz(rng), &mut desiccation_delta);
                push_deg(&mut records, &thoracic, DegenerativeKind::Desiccation,
                    Severity::Moderate, 1 + fuzz(rng), &mut desiccation_delta);
            }
        }
        // Rendering-age shift from the tail findings actually emitted.
        for r in &records {
            condition_shift += match r {
                ConditionRecord::Structural(p) => structural_shift(*p),
                ConditionRecord::Degenerative { severity, .. } => match severity {
                    Severity::Severe => 1.6,
                    Severity::Moderate => 0.8,
                    Severity::Present => 0.5,
                    _ => 0.0,
                },
            };
        }
    }

    // Osteophyte blobs: Poisson in chronological age, cervical placement.
    // Every blob emits one record, mild or moderate by radius.
    let lambda = blob_rate(config, age);
    let n_blobs = if lambda > 0.0 {
        Poisson::new(lambda).unwrap().sample(rng) as usize
    } else {
        0
    };
    let mut blobs = Vec::with_capacity(n_blobs);
    for i in 0..n_blobs.min(12) {
        let slot = cervical[i % cervical.len()];
        let radius = if rng.gen_bool(0.08) {
            rng.gen_range(1.9..2.4)
        } else {
            rng.gen_range(1.1..1.8)
        };
        let severity = if radius > MODERATE_BLOB_RADIUS_MM {
            Severity::Moderate
        } else {
            Severity::Mild
        };
        records.push(ConditionRecord::degenerative(
            labels[slot],
            DegenerativeKind::DiscOsteophyte,
            severity,
        ));
        blobs.push(Blob {
            slot,
            radius_mm: radius,
            side: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            dy_mm: rng.gen_range(-2.0..2.0),
            dz_mm: rng.gen_range(-2.0..2.0),
        });
    }

    let individual = Normal::<f64>::new(0.0, 1.0).unwrap().sample(rng);
    let render_age =
        (age + condition_shift + lifestyle_shift(&covariates) + individual).clamp(25.0, 97.0);

    let height_factor = (1.0
        + Normal::<f64>::new(0.0, 0.04).unwrap().sample(rng)
        + if sex == Sex::Male { 0.02 } else { 0.0 })
    .clamp(0.85, 1.15);
    let half_width_mm = (11.0
        + if sex == Sex::Male { 1.0 } else { 0.0 }
        + Normal::<f64>::new(0.0, 0.8).unwrap().sample(rng))
    .clamp(9.0, 14.0);

    Profile {
        covariates,
        records,
        blobs,
        desiccation_delta,
        bulge_slots,
        fracture_slots,
        render_age,
        height_factor,
        half_width_mm,
    }
}

/// Column geometry shared by rendering and the planted-blob helper.
struct Geometry {
    y_top_mm: f64,
    period_mm: f64,
    v_count: usize,
    vc: usize,
    vt: usize,
    x_center_mm: f64,
    z_center_mm: f64,
    half_width_mm: f64,
    half_thick_mm: f64,
    sacrum_lo_mm: f64,
    sacrum_hi_mm: f64,
}

impl Geometry {
    fn new(config: &SynthConfig, spacing: [f64; 3], height_factor: f64, half_width: f64) -> Self {
        let v = config.vertebra_count;
        let vc = ((v as f64 * 0.25).round() as usize).max(1);
        let vt = ((v as f64 * 0.42).round() as usize).max(1);
        let span = 120.0 * height_factor;
        let column_top = 8.0;
        Geometry {
            y_top_mm: column_top,
            period_mm: span / v as f64,
            v_count: v,
            vc,
            vt,
            x_center_mm: config.grid[0] as f64 * spacing[0] / 2.0,
            z_center_mm: config.grid[2] as f64 * spacing[2] / 2.0,
            half_width_mm: half_width,
            half_thick_mm: 8.0,
            sacrum_lo_mm: column_top + span + 2.0,
            sacrum_hi_mm: column_top + span + 14.0,
        }
    }

    fn slot_label(&self, slot: usize) -> RegionLabel {
        if slot < self.vc {
            RegionLabel::Cervical
        } else if slot < self.vc + self.vt {
            RegionLabel::Thoracic
        } else {
            RegionLabel::Lumbar
        }
    }

    fn vertebra_center_mm(&self, slot: usize, disc_height: f64) -> f64 {
        // Each period holds a vertebra followed by its disc gap.
        self.y_top_mm + slot as f64 * self.period_mm + (self.period_mm - disc_height) / 2.0
    }
}

const VERTEBRA_INTENSITY: f64 = 0.55;
const SACRUM_INTENSITY: f64 = 0.50;
const BLOB_INTENSITY: f64 = 0.95;

fn render(config: &SynthConfig, profile: &Profile, rng: &mut ChaCha8Rng) -> Volume {
    let j = config.spacing_jitter;
    let spacing = [
        config.spacing[0] * (1.0 + rng.gen_range(-j..=j)),
        config.spacing[1] * (1.0 + rng.gen_range(-j..=j)),
        config.spacing[2] * (1.0 + rng.gen_range(-j..=j)),
    ];
    let geom = Geometry::new(config, spacing, profile.height_factor, profile.half_width_mm);
    let dims = config.grid;
    let mut vol = Volume::zeros(dims, spacing);

    // Disc heights shrink with rendering age, uniformly over the column.
    let age_frac = ((profile.render_age - 25.0) / 59.0).clamp(0.0, 1.3);
    let disc_height = (0.36 * geom.period_mm * (1.0 - 0.55 * age_frac)).max(0.8);

    // Per-slot disc intensity: shared trend + subject noise + disc noise
    // + desiccation darkening from the report.
    let base = disc_intensity_at(config, profile.render_age);
    let vertebra_value = vertebra_intensity_at(config, profile.render_age);
    let eps_subject = Normal::<f64>::new(0.0, config.noise_subject).unwrap().sample(rng);
    let disc_noise = Normal::<f64>::new(0.0, config.noise_disc).unwrap();
    let disc_intensity: Vec<f64> = (0..geom.v_count)
        .map(|k| {
            (base + eps_subject + disc_noise.sample(rng) - profile.desiccation_delta[k])
                .clamp(0.02, 1.0)
        })
        .collect();

    // Per-y profile: blend of vertebra and disc intensity by overlap of
    // the voxel's y-extent, plus label and bulge extension.
    struct RowInfo {
        value: f64,
        coverage: f64,
        vertebra_frac: f64,
        label: RegionLabel,
        extra_width: f64,
    }
    let texture = Normal::<f64>::new(0.0, 0.02).unwrap();
    let rows: Vec<RowInfo> = (0..dims[1])
        .map(|yi| {
            let ya = yi as f64 * spacing[1];
            let yb = ya + spacing[1];
            let len = spacing[1];

            // Sacrum band.
            let sac_overlap = (yb.min(geom.sacrum_hi_mm) - ya.max(geom.sacrum_lo_mm)).max(0.0);
            // Column periods overlapping this row.
            let mut vert_len = 0.0;
            let mut disc_len = 0.0;
            let mut disc_val = 0.0;
            let mut label = RegionLabel::Background;
            let mut extra_width = 0.0;
            let mut fracture_factor = 1.0;
            let k_lo = ((ya - geom.y_top_mm) / geom.period_mm).floor().max(0.0) as usize;
            let k_hi = (((yb - geom.y_top_mm) / geom.period_mm).ceil() as usize).min(geom.v_count);
            for k in k_lo..k_hi {
                let p0 = geom.y_top_mm + k as f64 * geom.period_mm;
                let disc_start = p0 + geom.period_mm - disc_height;
                let v_overlap = (yb.min(disc_start) - ya.max(p0)).max(0.0);
                let d_overlap = (yb.min(p0 + geom.period_mm) - ya.max(disc_start)).max(0.0);
                vert_len += v_overlap;
                if d_overlap > 0.0 {
                    disc_len += d_overlap;
                    disc_val += d_overlap * disc_intensity[k];
                    if profile.bulge_slots.contains(&k) {
                        extra_width = 3.0;
                    }
                }
                if v_overlap + d_overlap > 0.0 {
                    label = geom.slot_label(k);
                }
                if profile.fracture_slots.contains(&k) {
                    let vc_mm = geom.vertebra_center_mm(k, disc_height);
                    if (ya - vc_mm).abs() < 1.5 || (yb - vc_mm).abs() < 1.5 {
                        fracture_factor = 0.35;
                    }
                }
            }
            let column_len = vert_len + disc_len;
            if sac_overlap > 0.0 && sac_overlap > column_len {
                return RowInfo {
                    value: SACRUM_INTENSITY,
                    coverage: sac_overlap / len,
                    vertebra_frac: 0.0,
                    label: RegionLabel::Other,
                    extra_width: 2.0,
                };
            }
            if column_len <= 0.0 {
                return RowInfo {
                    value: 0.0,
                    coverage: 0.0,
                    vertebra_frac: 0.0,
                    label: RegionLabel::Background,
                    extra_width: 0.0,
                };
            }
            let value = (vert_len * vertebra_value * fracture_factor + disc_val) / column_len;
            RowInfo {
                value,
                coverage: column_len / len,
                vertebra_frac: vert_len / column_len,
                label,
                extra_width,
            }
        })
        .collect();

    for zi in 0..dims[2] {
        let z_mm = (zi as f64 + 0.5) * spacing[2];
        let in_z = (z_mm - geom.z_center_mm).abs() <= geom.half_thick_mm;
        for yi in 0..dims[1] {
            let row = &rows[yi];
            if row.coverage <= 0.0 || !in_z {
                continue;
            }
            for xi in 0..dims[0] {
                let x_mm = (xi as f64 + 0.5) * spacing[0];
                let dx = (x_mm - geom.x_center_mm).abs();
                let width = geom.half_width_mm + row.extra_width;
                if dx > width {
                    continue;
                }
                let mut value = row.value * row.coverage;
                if row.vertebra_frac > 0.0 {
                    value += texture.sample(rng) * row.vertebra_frac;
                }
                let idx = vol.index(xi, yi, zi);
                vol.intensities[idx] = value.clamp(0.0, 1.0) as f32;
                if row.coverage >= 0.5 {
                    vol.mask[idx] = 1;
                    vol.labels[idx] = row.label as u8;
                }
            }
        }
    }

    // Osteophyte blobs: bright spheres at vertebra corners.
    let paint_blob = |center: [f64; 3], radius: f64, vol: &mut Volume| {
        let feather = 0.8;
        let lo = |c: f64, sp: f64| (((c - radius - feather) / sp).floor().max(0.0)) as usize;
        let hi = |c: f64, sp: f64, n: usize| {
            (((c + radius + feather) / sp).ceil() as usize).min(n.saturating_sub(1))
        };
        for zi in lo(center[2], spacing[2])..=hi(center[2], spacing[2], dims[2]) {
            for yi in lo(center[1], spacing[1])..=hi(center[1], spacing[1], dims[1]) {
                for xi in lo(center[0], spacing[0])..=hi(center[0], spacing[0], dims[0]) {
                    let p = [
                        (xi as f64 + 0.5) * spacing[0],
                        (yi as f64 + 0.5) * spacing[1],
                        (zi as f64 + 0.5) * spacing[2],
                    ];
                    let dist = ((p[0] - center[0]).powi(2)
                        + (p[1] - center[1]).powi(2)
                        + (p[2] - center[2]).powi(2))
                    .sqrt();
                    let cov = ((radius + feather - dist) / feather).clamp(0.0, 1.0);
                    if cov > 0.0 {
                        let idx = vol.index(xi, yi, zi);
                        let v = (BLOB_INTENSITY * cov) as f32;
                        if v > vol.intensities[idx] {
                            vol.intensities[idx] = v;
                        }
                        if cov >= 0.5 {
                            vol.mask[idx] = 1;
                            if vol.labels[idx] == RegionLabel::Background as u8 {
                                vol.labels[idx] = geom.slot_label(
                                    (((p[1] - geom.y_top_mm) / geom.period_mm) as usize)
                                        .min(geom.v_count - 1),
                                ) as u8;
                            }
                        }
                    }
                }
            }
        }
    };
    for blob in &profile.blobs {
        let yc = geom.vertebra_center_mm(blob.slot, disc_height) + blob.dy_mm;
        let center = [
            geom.x_center_mm + blob.side * (geom.half_width_mm - 0.5),
            yc,
            geom.z_center_mm + blob.dz_mm,
        ];
        paint_blob(center, blob.radius_mm, &mut vol);
    }

    vol
}

/// Generates a subject: rendered volume, condition records, and subject
/// metadata. Repeated calls with the same arguments are byte-identical.
pub fn generate_subject(
    config: &SynthConfig,
    id: &str,
    age: f64,
    sex: Sex,
    seed: u64,
) -> Result<(Volume, Vec<ConditionRecord>, Subject)> {
    config.validate()?;
    let bracket = bracket_of(age)?;
    let mut profile_rng = rngs::rng_for(seed, domain::SUBJECT_PROFILE, 0);
    let profile = sample_profile(config, age, sex, &mut profile_rng);
    let mut render_rng = rngs::rng_for(seed, domain::SUBJECT_RENDER, 0);
    let volume = render(config, &profile, &mut render_rng);
    let subject = Subject {
        id: id.to_string(),
        seed,
        age,
        sex,
        bracket,
        covariates: profile.covariates,
        split: None,
    };
    Ok((volume, profile.records, subject))
}

/// Re-renders a subject's anatomy with an independent scanner-noise
/// stream: the same findings, different jitter, noise, and texture.
pub fn rescan_volume(config: &SynthConfig, subject: &Subject) -> Result<Volume> {
    config.validate()?;
    let mut profile_rng = rngs::rng_for(subject.seed, domain::SUBJECT_PROFILE, 0);
    let profile = sample_profile(config, subject.age, subject.sex, &mut profile_rng);
    let mut render_rng = rngs::rng_for(subject.seed, domain::SUBJECT_RESCAN, 0);
    Ok(render(config, &profile, &mut render_rng))
}

/// A clean mid-life spine with exactly one large osteophyte blob, for
/// attention-map checks. Returns the blob centre (mm) and radius (mm).
pub fn planted_blob_volume(
    config: &SynthConfig,
    age: f64,
    seed: u64,
) -> Result<(Volume, [f64; 3], f64)> {
    config.validate()?;
    bracket_of(age)?;
    let mut profile_rng = rngs::rng_for(seed, domain::BLOB_TEST, 0);
    let mut profile = sample_profile(config, age, Sex::Female, &mut profile_rng);
    profile.records.clear();
    profile.bulge_slots.clear();
    profile.fracture_slots.clear();
    for d in &mut profile.desiccation_delta {
        *d = 0.0;
    }
    let slot = profile.desiccation_delta.len() / 2;
    let radius = 6.0;
    profile.blobs = vec![Blob {
        slot,
        radius_mm: radius,
        side: 1.0,
        dy_mm: 0.0,
        dz_mm: 0.0,
    }];

    let mut render_rng = rngs::rng_for(seed, domain::BLOB_TEST, 1);
    // Geometry depends on the jittered spacing drawn first in render; to
    // report the centre faithfully, re-derive it the same way.
    let volume = render(config, &profile, &mut render_rng.clone());
    let j = config.spacing_jitter;
    let spacing = [
        config.spacing[0] * (1.0 + render_rng.gen_range(-j..=j)),
        config.spacing[1] * (1.0 + render_rng.gen_range(-j..=j)),
        config.spacing[2] * (1.0 + render_rng.gen_range(-j..=j)),
    ];
    let geom = Geometry::new(config, spacing, profile.height_factor, profile.half_width_mm);
    let age_frac = ((profile.render_age - 25.0) / 59.0).clamp(0.0, 1.3);
    let disc_height = (0.36 * geom.period_mm * (1.0 - 0.55 * age_frac)).max(0.8);
    let center = [
        geom.x_center_mm + geom.half_width_mm - 0.5,
        geom.vertebra_center_mm(slot, disc_height),
        geom.z_center_mm,
    ];
    Ok((volume, center, radius))
}

/// Writes the subjects manifest CSV.
pub fn write_subjects_csv(path: &Path, subjects: &[Subject]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record([
        "id",
        "seed",
        "age",
        "sex",
        "bracket",
        "packs_per_day",
        "alcohol_days_per_week",
        "sedentary_hours",
        "work",
        "exercise",
        "split",
    ])?;
    for s in subjects {
        w.write_record([
            s.id.as_str(),
            &s.seed.to_string(),
            &format!("{:.3}", s.age),
            &s.sex.to_string(),
            &s.bracket.to_string(),
            &format!("{:.3}", s.covariates.packs_per_day),
            &format!("{:.1}", s.covariates.alcohol_days_per_week),
            &format!("{:.2}", s.covariates.sedentary_hours),
            &s.covariates.work.to_string(),
            &s.covariates.exercise.to_string(),
            &s.split.map(|sp| sp.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads the subjects manifest CSV.
pub fn read_subjects_csv(path: &Path) -> Result<Vec<Subject>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::Parse(format!("subjects row missing column {i}")))
        };
        let parse_f = |i: usize| -> Result<f64> {
            field(i)?
                .parse()
                .map_err(|e| Error::Parse(format!("subjects column {i}: {e}")))
        };
        let split = match field(10)? {
            "" => None,
            s => Some(s.parse::<Split>()?),
        };
        out.push(Subject {
            id: field(0)?.to_string(),
            seed: field(1)?
                .parse()
                .map_err(|e| Error::Parse(format!("seed: {e}")))?,
            age: parse_f(2)?,
            sex: field(3)?.parse()?,
            bracket: field(4)?
                .parse()
                .map_err(|e| Error::Parse(format!("bracket: {e}")))?,
            covariates: Covariates {
                packs_per_day: parse_f(5)?,
                alcohol_days_per_week: parse_f(6)?,
                sedentary_hours: parse_f(7)?,
                work: field(8)?.parse()?,
                exercise: field(9)?.parse()?,
            },
            split,
        });
    }
    Ok(out)
}
