//! Synthetic generation, CSV ingestion and dataset assembly.

pub mod csv;
mod dataset;
pub mod synth;

pub use dataset::{
    build_dataset, sample_variants, split_patients, DatasetManifest, GridSource, ManifestRecord, Split, Splits, Triple,
};

pub use synth::{
    generate_synthetic_grid, generate_synthetic_with_events, synthesize_behavioral_smbg, BehaviorProfile, Event,
    EventKind, SyntheticProfile,
};
