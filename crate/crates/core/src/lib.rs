//! Core algorithms for the spine age estimation pipeline: report feature
//! encodings, 2D embedding, density clustering, synthetic volume
//! generation, a small reverse-mode autograd, the 3D regression network,
//! and the evaluation statistics.

pub mod autograd;
pub mod error;
pub mod hdbscan;
pub mod imgio;
pub mod model;
pub mod report;
pub mod rngs;
pub mod stats;
pub mod synth;
pub mod umap;
pub mod volume;

pub use error::{Error, Result};
pub use report::{
    ConditionRecord, DegenerativeKind, DenseFeatures, Region, Severity, SparseFeatures,
    StructuralPathology, Vertebra,
};
pub use synth::{Covariates, Sex, Split, Subject, SynthConfig};
pub use volume::{RegionLabel, Volume};
