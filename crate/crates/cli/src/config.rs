//! Pipeline configuration: one TOML file drives every stage.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spineage_core::model::train::LossKind;
use spineage_core::synth::SynthConfig;
use spineage_core::Region;

/// Anatomical scope of the model input. `Whole` keeps the full spine;
/// the region choices zero everything outside that region's labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RegionChoice {
    #[default]
    Whole,
    Cervical,
    Thoracic,
    Lumbar,
}

impl RegionChoice {
    pub fn to_region(self) -> Option<Region> {
        match self {
            RegionChoice::Whole => None,
            RegionChoice::Cervical => Some(Region::Cervical),
            RegionChoice::Thoracic => Some(Region::Thoracic),
            RegionChoice::Lumbar => Some(Region::Lumbar),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionChoice::Whole => "whole",
            RegionChoice::Cervical => "cervical",
            RegionChoice::Thoracic => "thoracic",
            RegionChoice::Lumbar => "lumbar",
        }
    }
}

impl fmt::Display for RegionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegionChoice {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(RegionChoice::Whole),
            "cervical" => Ok(RegionChoice::Cervical),
            "thoracic" => Ok(RegionChoice::Thoracic),
            "lumbar" => Ok(RegionChoice::Lumbar),
            other => bail!("unknown region {other:?}; expected whole, cervical, thoracic, or lumbar"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    /// Total synthetic cohort size.
    pub subjects: usize,
}

impl Default for CohortSection {
    fn default() -> Self {
        CohortSection { subjects: 2000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Ratio weights over cluster-normal subjects.
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 8,
            val: 1,
            test: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// "mse" or "smooth_l1".
    pub loss: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 25,
            batch_size: 2,
            lr: 0.01,
            loss: "mse".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// whole | cervical | thoracic | lumbar.
    pub region: String,
    /// Preprocessed grid (x, y, z) fed to the network as (W, H, D).
    pub input: [usize; 3],
    /// Common spacing in mm the volumes are resampled to.
    pub spacing: [f64; 3],
    /// Mask dilation radius in voxels.
    pub dilation: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            region: "whole".into(),
            input: [24, 48, 8],
            spacing: [4.0, 4.0, 3.0],
            dilation: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcamSection {
    /// Number of test subjects rendered as attention maps.
    pub subjects: usize,
}

impl Default for GradcamSection {
    fn default() -> Self {
        GradcamSection { subjects: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IccSection {
    /// Scan-rescan pairs sampled from the test split.
    pub subjects: usize,
    pub bootstrap: usize,
}

impl Default for IccSection {
    fn default() -> Self {
        IccSection {
            subjects: 200,
            bootstrap: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Source grid (x, y, z) the generator renders at.
    pub grid: [usize; 3],
    /// Nominal source spacing in mm.
    pub spacing: [f64; 3],
    pub vertebra_count: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            grid: d.grid,
            spacing: d.spacing,
            vertebra_count: d.vertebra_count,
        }
    }
}

impl SynthSection {
    pub fn to_synth_config(&self) -> SynthConfig {
        SynthConfig {
            grid: self.grid,
            spacing: self.spacing,
            vertebra_count: self.vertebra_count,
            ..SynthConfig::default()
        }
    }
}

/// One ablation arm: a named override of data size, loss, or region.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationArm {
    pub name: String,
    /// Fraction of the training split to use, in (0, 1].
    pub data_size: Option<f64>,
    pub loss: Option<String>,
    pub region: Option<String>,
}

fn default_arms() -> Vec<AblationArm> {
    let plain = |name: &str, data: f64| AblationArm {
        name: name.into(),
        data_size: Some(data),
        loss: None,
        region: None,
    };
    vec![
        plain("data_1pct", 0.01),
        plain("data_10pct", 0.10),
        plain("data_100pct", 1.00),
        AblationArm {
            name: "loss_smooth_l1".into(),
            data_size: None,
            loss: Some("smooth_l1".into()),
            region: None,
        },
        AblationArm {
            name: "region_lumbar".into(),
            data_size: None,
            loss: None,
            region: Some("lumbar".into()),
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub arm: Vec<AblationArm>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            arm: default_arms(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Output root; overridden by the SPINEAGE_WORKDIR environment variable.
    pub workdir: String,
    pub cohort: CohortSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub model: ModelSection,
    pub gradcam: GradcamSection,
    pub icc: IccSection,
    pub synth: SynthSection,
    pub ablation: AblationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 20260825,
            workdir: "spineage_out".into(),
            cohort: CohortSection::default(),
            split: SplitSection::default(),
            train: TrainSection::default(),
            model: ModelSection::default(),
            gradcam: GradcamSection::default(),
            icc: IccSection::default(),
            synth: SynthSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn region_choice(&self) -> Result<RegionChoice> {
        self.model.region.parse()
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        self.train
            .loss
            .parse::<LossKind>()
            .map_err(|e| anyhow::anyhow!("{e}"))
    }

    /// Every check that can fail must fail here, before any stage runs.
    pub fn validate(&self) -> Result<()> {
        self.region_choice()?;
        self.loss_kind()?;
        if self.cohort.subjects < 240 {
            bail!(
                "cohort.subjects = {} is too small; each of the 6 age brackets \
                 needs enough subjects to embed and cluster (minimum 240)",
                self.cohort.subjects
            );
        }
        if self.split.train == 0 || self.split.val == 0 || self.split.test == 0 {
            bail!("split ratio weights must all be positive");
        }
        if self.train.epochs == 0 {
            bail!("train.epochs must be at least 1");
        }
        if self.train.batch_size == 0 {
            bail!("train.batch_size must be at least 1");
        }
        if !(self.train.lr > 0.0) {
            bail!("train.lr must be positive");
        }
        if self.model.input.iter().any(|&d| d == 0) {
            bail!("model.input dimensions must be positive");
        }
        if self.model.spacing.iter().any(|&s| !(s > 0.0)) {
            bail!("model.spacing entries must be positive");
        }
        if self.gradcam.subjects == 0 {
            bail!("gradcam.subjects must be at least 1");
        }
        if self.icc.subjects < 3 {
            bail!("icc.subjects must be at least 3");
        }
        if self.icc.bootstrap < 2 {
            bail!("icc.bootstrap must be at least 2");
        }
        self.synth
            .to_synth_config()
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let mut seen = std::collections::BTreeSet::new();
        for arm in &self.ablation.arm {
            if !seen.insert(arm.name.clone()) {
                bail!("ablation arm name {:?} appears more than once", arm.name);
            }
            if let Some(d) = arm.data_size {
                if !(d > 0.0 && d <= 1.0) {
                    bail!("ablation arm {:?}: data_size must be in (0, 1]", arm.name);
                }
            }
            if let Some(l) = &arm.loss {
                l.parse::<LossKind>().map_err(|e| anyhow::anyhow!("{e}"))?;
            }
            if let Some(r) = &arm.region {
                r.parse::<RegionChoice>()?;
            }
        }
        Ok(())
    }

    /// Stable serialization of one section, used for manifest hashing.
    pub fn section_string(&self, name: &str) -> String {
        match name {
            "seed" => format!("seed={}", self.seed),
            "cohort" => toml::to_string(&self.cohort).unwrap(),
            "split" => toml::to_string(&self.split).unwrap(),
            "train" => toml::to_string(&self.train).unwrap(),
            "model" => toml::to_string(&self.model).unwrap(),
            "gradcam" => toml::to_string(&self.gradcam).unwrap(),
            "icc" => toml::to_string(&self.icc).unwrap(),
            "synth" => toml::to_string(&self.synth).unwrap(),
            "ablation" => toml::to_string(&self.ablation).unwrap(),
            other => panic!("unknown config section {other}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_region_fails_validation() {
        let mut c = PipelineConfig::default();
        c.model.region = "sacral".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn duplicate_ablation_arm_names_fail() {
        let mut c = PipelineConfig::default();
        c.ablation.arm.push(c.ablation.arm[0].clone());
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("more than once"), "{err}");
    }

    #[test]
    fn toml_round_trip_preserves_defaults() {
        let c = PipelineConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, c.seed);
        assert_eq!(back.cohort.subjects, c.cohort.subjects);
        assert_eq!(back.ablation.arm.len(), c.ablation.arm.len());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "seed = 1\n[cohort]\nsubjcts = 100\n";
        assert!(toml::from_str::<PipelineConfig>(text).is_err());
    }

    #[test]
    fn minimal_config_text_parses_with_defaults() {
        let c: PipelineConfig = toml::from_str("seed = 7\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.batch_size, 2);
    }
}
