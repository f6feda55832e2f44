//! Condition vocabulary from radiology reports and the two feature
//! encodings built from it.
//!
//! Reports are lists of [`ConditionRecord`]s. Two encodings exist:
//!
//! * sparse: per-vertebra counts for the 8 degenerative kinds plus 7
//!   structural flags, 26 * 8 + 7 = 215 entries;
//! * dense: per-region counts keyed by (region, kind, severity) over the
//!   legal severity grades plus the same 7 flags, 60 + 7 = 67 entries.
//!
//! The dense encoding is what distance computations and clustering run on.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Spine regions in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Cervical,
    Thoracic,
    Lumbar,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Cervical, Region::Thoracic, Region::Lumbar];

    pub fn index(self) -> usize {
        match self {
            Region::Cervical => 0,
            Region::Thoracic => 1,
            Region::Lumbar => 2,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Region::Cervical => "c",
            Region::Thoracic => "t",
            Region::Lumbar => "l",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::Cervical => "cervical",
            Region::Thoracic => "thoracic",
            Region::Lumbar => "lumbar",
        };
        f.write_str(s)
    }
}

impl FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cervical" | "c" => Ok(Region::Cervical),
            "thoracic" | "t" => Ok(Region::Thoracic),
            "lumbar" | "l" => Ok(Region::Lumbar),
            other => Err(Error::Parse(format!("unknown region {other:?}"))),
        }
    }
}

/// Reported vertebra levels: C2-C7, T1-T13, L1-L7, 26 in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vertebra {
    region: Region,
    number: u8,
}

pub const VERTEBRA_COUNT: usize = 26;
const CERVICAL_RANGE: (u8, u8) = (2, 7);
const THORACIC_RANGE: (u8, u8) = (1, 13);
const LUMBAR_RANGE: (u8, u8) = (1, 7);

impl Vertebra {
    pub fn new(region: Region, number: u8) -> Result<Self> {
        let (lo, hi) = match region {
            Region::Cervical => CERVICAL_RANGE,
            Region::Thoracic => THORACIC_RANGE,
            Region::Lumbar => LUMBAR_RANGE,
        };
        if number < lo || number > hi {
            return Err(Error::InvalidVertebra(format!("{}{}", region.short(), number)));
        }
        Ok(Vertebra { region, number })
    }

    pub fn region(self) -> Region {
        self.region
    }

    pub fn number(self) -> u8 {
        self.number
    }

    /// Position in the canonical top-to-bottom ordering, 0..26.
    pub fn index(self) -> usize {
        match self.region {
            Region::Cervical => (self.number - CERVICAL_RANGE.0) as usize,
            Region::Thoracic => 6 + (self.number - THORACIC_RANGE.0) as usize,
            Region::Lumbar => 19 + (self.number - LUMBAR_RANGE.0) as usize,
        }
    }

    /// Inverse of [`Vertebra::index`].
    pub fn from_index(idx: usize) -> Result<Self> {
        match idx {
            0..=5 => Vertebra::new(Region::Cervical, 2 + idx as u8),
            6..=18 => Vertebra::new(Region::Thoracic, (idx - 6) as u8 + 1),
            19..=25 => Vertebra::new(Region::Lumbar, (idx - 19) as u8 + 1),
            _ => Err(Error::InvalidVertebra(format!("index {idx}"))),
        }
    }

    pub fn all() -> impl Iterator<Item = Vertebra> {
        (0..VERTEBRA_COUNT).map(|i| Vertebra::from_index(i).unwrap())
    }
}

impl fmt::Display for Vertebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letter = match self.region {
            Region::Cervical => 'C',
            Region::Thoracic => 'T',
            Region::Lumbar => 'L',
        };
        write!(f, "{}{}", letter, self.number)
    }
}

impl FromStr for Vertebra {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        let region = match chars.next() {
            Some('C') | Some('c') => Region::Cervical,
            Some('T') | Some('t') => Region::Thoracic,
            Some('L') | Some('l') => Region::Lumbar,
            _ => return Err(Error::InvalidVertebra(s.to_string())),
        };
        let number: u8 = chars
            .as_str()
            .parse()
            .map_err(|_| Error::InvalidVertebra(s.to_string()))?;
        Vertebra::new(region, number)
    }
}

/// The 8 degenerative condition kinds, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DegenerativeKind {
    DiscBulge,
    DiscOsteophyte,
    UncovertebralOsteophyte,
    Protrusion,
    Extrusion,
    Desiccation,
    EndplateChange,
    AnnularFissure,
}

pub const DEGENERATIVE_KIND_COUNT: usize = 8;

impl DegenerativeKind {
    pub const ALL: [DegenerativeKind; 8] = [
        DegenerativeKind::DiscBulge,
        DegenerativeKind::DiscOsteophyte,
        DegenerativeKind::UncovertebralOsteophyte,
        DegenerativeKind::Protrusion,
        DegenerativeKind::Extrusion,
        DegenerativeKind::Desiccation,
        DegenerativeKind::EndplateChange,
        DegenerativeKind::AnnularFissure,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap()
    }

    /// Severity grades a report may legally attach to this kind.
    pub fn legal_severities(self) -> &'static [Severity] {
        use Severity::*;
        match self {
            DegenerativeKind::DiscBulge
            | DegenerativeKind::DiscOsteophyte
            | DegenerativeKind::UncovertebralOsteophyte
            | DegenerativeKind::Protrusion => &[Mild, Moderate, Severe],
            DegenerativeKind::Extrusion => &[Mild, Moderate],
            DegenerativeKind::Desiccation => &[Mild, Moderate, Severe, NearComplete],
            DegenerativeKind::EndplateChange | DegenerativeKind::AnnularFissure => &[Present],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DegenerativeKind::DiscBulge => "disc_bulge",
            DegenerativeKind::DiscOsteophyte => "disc_osteophyte",
            DegenerativeKind::UncovertebralOsteophyte => "uncovertebral_osteophyte",
            DegenerativeKind::Protrusion => "protrusion",
            DegenerativeKind::Extrusion => "extrusion",
            DegenerativeKind::Desiccation => "desiccation",
            DegenerativeKind::EndplateChange => "endplate_change",
            DegenerativeKind::AnnularFissure => "annular_fissure",
        }
    }
}

impl fmt::Display for DegenerativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegenerativeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown degenerative kind {s:?}")))
    }
}

/// The 7 structural pathologies, in canonical order. These enter the
/// feature vectors as binary flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructuralPathology {
    BoneLesion,
    CanalNarrowing,
    CordAbnormality,
    Fracture,
    SoftTissueEdema,
    SpinalStenosis,
    Spondylolisthesis,
}

pub const STRUCTURAL_COUNT: usize = 7;

impl StructuralPathology {
    pub const ALL: [StructuralPathology; 7] = [
        StructuralPathology::BoneLesion,
        StructuralPathology::CanalNarrowing,
        StructuralPathology::CordAbnormality,
        StructuralPathology::Fracture,
        StructuralPathology::SoftTissueEdema,
        StructuralPathology::SpinalStenosis,
        StructuralPathology::Spondylolisthesis,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|p| *p == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            StructuralPathology::BoneLesion => "bone_lesion",
            StructuralPathology::CanalNarrowing => "congenital_canal_narrowing",
            StructuralPathology::CordAbnormality => "cord_abnormality",
            StructuralPathology::Fracture => "fracture",
            StructuralPathology::SoftTissueEdema => "soft_tissue_edema",
            StructuralPathology::SpinalStenosis => "spinal_stenosis",
            StructuralPathology::Spondylolisthesis => "spondylolisthesis",
        }
    }
}

impl fmt::Display for StructuralPathology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StructuralPathology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown structural pathology {s:?}")))
    }
}

/// Severity grades. `Present` is the grade for conditions reported
/// without one (endplate change, annular fissure, structural findings).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
    NearComplete,
    Present,
}

impl Severity {
    pub fn name(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
            Severity::NearComplete => "near_complete",
            Severity::Present => "present",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Severity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mild" => Ok(Severity::Mild),
            "moderate" => Ok(Severity::Moderate),
            "severe" => Ok(Severity::Severe),
            "near_complete" => Ok(Severity::NearComplete),
            "present" => Ok(Severity::Present),
            other => Err(Error::Parse(format!("unknown severity {other:?}"))),
        }
    }
}

/// One finding from a report. Degenerative findings carry a vertebra and
/// severity; structural findings are whole-spine flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionRecord {
    Degenerative {
        vertebra: Vertebra,
        kind: DegenerativeKind,
        severity: Severity,
    },
    Structural(StructuralPathology),
}

impl ConditionRecord {
    pub fn degenerative(vertebra: Vertebra, kind: DegenerativeKind, severity: Severity) -> Self {
        ConditionRecord::Degenerative {
            vertebra,
            kind,
            severity,
        }
    }

    /// Rejects (kind, severity) pairs outside the legality map.
    pub fn validate(&self) -> Result<()> {
        match self {
            ConditionRecord::Degenerative { kind, severity, .. } => {
                if kind.legal_severities().contains(severity) {
                    Ok(())
                } else {
                    Err(Error::IllegalSeverity {
                        kind: kind.name().to_string(),
                        severity: severity.name().to_string(),
                    })
                }
            }
            ConditionRecord::Structural(_) => Ok(()),
        }
    }
}

/// Number of (kind, severity) cells per region in the dense encoding.
pub const DENSE_CELLS_PER_REGION: usize = 20;
/// Dense feature length: 3 regions * 20 cells + 7 structural flags.
pub const DENSE_LEN: usize = 3 * DENSE_CELLS_PER_REGION + STRUCTURAL_COUNT;
/// Sparse feature length: 26 vertebrae * 8 kinds + 7 structural flags.
pub const SPARSE_LEN: usize = VERTEBRA_COUNT * DEGENERATIVE_KIND_COUNT + STRUCTURAL_COUNT;

fn kind_cell_offset(kind: DegenerativeKind) -> usize {
    let mut off = 0;
    for k in DegenerativeKind::ALL {
        if k == kind {
            return off;
        }
        off += k.legal_severities().len();
    }
    unreachable!()
}

/// Flat index of a legal (region, kind, severity) cell in the dense layout.
pub fn dense_cell_index(region: Region, kind: DegenerativeKind, severity: Severity) -> Result<usize> {
    let rank = kind
        .legal_severities()
        .iter()
        .position(|s| *s == severity)
        .ok_or_else(|| Error::IllegalSeverity {
            kind: kind.name().to_string(),
            severity: severity.name().to_string(),
        })?;
    Ok(region.index() * DENSE_CELLS_PER_REGION + kind_cell_offset(kind) + rank)
}

/// Per-vertebra counts (215 entries). Counts are raw occurrence counts;
/// structural entries are 0/1 flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseFeatures {
    pub counts: Vec<u32>,
}

/// Per-region severity counts (67 entries). Structural entries are 0/1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseFeatures {
    pub counts: Vec<u32>,
}

impl DenseFeatures {
    pub fn zeros() -> Self {
        DenseFeatures {
            counts: vec![0; DENSE_LEN],
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Column names for the sparse layout, aligned with `SparseFeatures::counts`.
pub fn sparse_labels() -> Vec<String> {
    let mut labels = Vec::with_capacity(SPARSE_LEN);
    for v in Vertebra::all() {
        for k in DegenerativeKind::ALL {
            labels.push(format!("{}_{}", v.to_string().to_lowercase(), k.name()));
        }
    }
    for p in StructuralPathology::ALL {
        labels.push(p.name().to_string());
    }
    labels
}

/// Column names for the dense layout, aligned with `DenseFeatures::counts`.
pub fn dense_labels() -> Vec<String> {
    let mut labels = Vec::with_capacity(DENSE_LEN);
    for r in Region::ALL {
        for k in DegenerativeKind::ALL {
            for s in k.legal_severities() {
                labels.push(format!("{}_{}_{}", r.short(), k.name(), s.name()));
            }
        }
    }
    for p in StructuralPathology::ALL {
        labels.push(p.name().to_string());
    }
    labels
}

/// Human-readable name of a dense cell, e.g. `cervical disc_osteophyte mild`.
pub fn dense_cell_name(idx: usize) -> String {
    if idx >= 3 * DENSE_CELLS_PER_REGION {
        return StructuralPathology::ALL[idx - 3 * DENSE_CELLS_PER_REGION]
            .name()
            .to_string();
    }
    let region = Region::ALL[idx / DENSE_CELLS_PER_REGION];
    let mut off = idx % DENSE_CELLS_PER_REGION;
    for k in DegenerativeKind::ALL {
        let n = k.legal_severities().len();
        if off < n {
            return format!("{} {} {}", region, k.name(), k.legal_severities()[off].name());
        }
        off -= n;
    }
    unreachable!()
}

/// Per-vertebra count encoding. Order of records does not matter.
pub fn encode_sparse(records: &[ConditionRecord]) -> Result<SparseFeatures> {
    let mut counts = vec![0u32; SPARSE_LEN];
    for rec in records {
        rec.validate()?;
        match rec {
            ConditionRecord::Degenerative { vertebra, kind, .. } => {
                counts[vertebra.index() * DEGENERATIVE_KIND_COUNT + kind.index()] += 1;
            }
            ConditionRecord::Structural(p) => {
                counts[VERTEBRA_COUNT * DEGENERATIVE_KIND_COUNT + p.index()] = 1;
            }
        }
    }
    Ok(SparseFeatures { counts })
}

/// Aggregates records into the dense per-region severity counts.
pub fn aggregate(records: &[ConditionRecord]) -> Result<DenseFeatures> {
    let mut counts = vec![0u32; DENSE_LEN];
    for rec in records {
        rec.validate()?;
        match rec {
            ConditionRecord::Degenerative {
                vertebra,
                kind,
                severity,
            } => {
                counts[dense_cell_index(vertebra.region(), *kind, *severity)?] += 1;
            }
            ConditionRecord::Structural(p) => {
                counts[3 * DENSE_CELLS_PER_REGION + p.index()] = 1;
            }
        }
    }
    Ok(DenseFeatures { counts })
}

/// Canberra distance: sum of |p - q| / (|p| + |q|) with 0/0 terms
/// contributing zero. On nonnegative count vectors every term lies in
/// [0, 1], so one differing cell contributes at most 1.
pub fn canberra(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "canberra requires equal-length vectors");
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let denom = a.abs() + b.abs();
        if denom > 0.0 {
            d += (a - b).abs() / denom;
        }
    }
    d
}

pub fn canberra_dense(p: &DenseFeatures, q: &DenseFeatures) -> f64 {
    canberra(&p.to_f64(), &q.to_f64())
}

/// Reads a records CSV with columns `subject_id,condition,vertebra,severity`.
/// Structural rows leave `vertebra` and `severity` empty.
pub fn read_records_csv(path: &Path) -> Result<Vec<(String, ConditionRecord)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let subject = row
            .get(0)
            .ok_or_else(|| Error::Parse("records row missing subject_id".into()))?
            .to_string();
        let condition = row
            .get(1)
            .ok_or_else(|| Error::Parse("records row missing condition".into()))?;
        let vertebra = row.get(2).unwrap_or("");
        let severity = row.get(3).unwrap_or("");
        let record = if let Ok(kind) = condition.parse::<DegenerativeKind>() {
            let vertebra: Vertebra = vertebra.parse()?;
            let severity: Severity = severity.parse()?;
            let rec = ConditionRecord::degenerative(vertebra, kind, severity);
            rec.validate()?;
            rec
        } else {
            ConditionRecord::Structural(condition.parse()?)
        };
        out.push((subject, record));
    }
    Ok(out)
}

/// Writes the records CSV read back by [`read_records_csv`].
pub fn write_records_csv(path: &Path, records: &[(String, ConditionRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["subject_id", "condition", "vertebra", "severity"])?;
    for (subject, rec) in records {
        match rec {
            ConditionRecord::Degenerative {
                vertebra,
                kind,
                severity,
            } => {
                w.write_record([
                    subject.as_str(),
                    kind.name(),
                    &vertebra.to_string(),
                    severity.name(),
                ])?;
            }
            ConditionRecord::Structural(p) => {
                w.write_record([subject.as_str(), p.name(), "", ""])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Groups a flat (subject, record) list by subject, preserving first-seen
/// subject order within the map's sorted keys.
pub fn group_by_subject(records: Vec<(String, ConditionRecord)>) -> BTreeMap<String, Vec<ConditionRecord>> {
    let mut map: BTreeMap<String, Vec<ConditionRecord>> = BTreeMap::new();
    for (subject, rec) in records {
        map.entry(subject).or_default().push(rec);
    }
    map
}

/// Writes one dense feature row per subject with labeled columns.
pub fn write_dense_csv(path: &Path, rows: &[(String, DenseFeatures)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    let mut header = vec!["subject_id".to_string()];
    header.extend(dense_labels());
    w.write_record(&header)?;
    for (subject, feats) in rows {
        let mut row = vec![subject.clone()];
        row.extend(feats.counts.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads the dense feature CSV written by [`write_dense_csv`].
pub fn read_dense_csv(path: &Path) -> Result<Vec<(String, DenseFeatures)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != DENSE_LEN + 1 {
            return Err(Error::Parse(format!(
                "dense feature row has {} columns, expected {}",
                row.len(),
                DENSE_LEN + 1
            )));
        }
        let subject = row.get(0).unwrap().to_string();
        let mut counts = Vec::with_capacity(DENSE_LEN);
        for i in 1..row.len() {
            counts.push(
                row.get(i)
                    .unwrap()
                    .parse::<u32>()
                    .map_err(|e| Error::Parse(format!("dense count: {e}")))?,
            );
        }
        out.push((subject, DenseFeatures { counts }));
    }
    Ok(out)
}
