//! Sampling, labelling and patient-level splitting of CGM windows.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::agp::{compute_tr_hard, Thresholds, TrVector};
use crate::domain::{CgmGrid, SmbgSample};
use crate::error::{CoreError, Result};
use crate::sampling::{hybrid_sample, SamplingPlan, SlotScorer};

/// Where a grid came from, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GridSource {
    Synthetic { seed: u64 },
    File(String),
}

impl fmt::Display for GridSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSource::Synthetic { seed } => write!(f, "synthetic:{}", seed),
            GridSource::File(path) => write!(f, "file:{}", path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One materialized training example.
#[derive(Debug, Clone)]
pub struct Triple {
    pub sample_id: String,
    pub source: GridSource,
    pub grid: CgmGrid,
    pub sample: SmbgSample,
    pub label: TrVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub source: String,
    pub plan: String,
    pub split: Split,
    pub label: TrVector,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// `sample_id|source|plan|tar|tir|tbr` lines, in split order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let [tar, tir, tbr] = r.label.as_array();
            out.push_str(&format!("{}|{}|{}|{:.6}|{:.6}|{:.6}\n", r.sample_id, r.source, r.plan, tar, tir, tbr));
        }
        out
    }

    /// `sample_id|split` lines.
    pub fn splits_text(&self) -> String {
        self.records.iter().map(|r| format!("{}|{}\n", r.sample_id, r.split.as_str())).collect()
    }

    /// SHA-256 of the manifest text and split assignment, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        h.update(self.splits_text().as_bytes());
        hex::encode(h.finalize())
    }
}

/// Triples by split.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Triple>,
    pub val: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<Triple> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Shuffles the distinct patient ids and assigns 70% (floored) to train,
/// 15% (floored) to val and the remainder to test.
pub fn split_patients(patients: &[String], seed: u64) -> Result<[Vec<String>; 3]> {
    let mut ids: Vec<String> = patients.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < 3 {
        return Err(CoreError::Split(format!("need at least 3 patients, found {}", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok([ids, val, test])
}

/// Per-grid sampling seed, so grids are sampled independently of their order
/// within a batch of work.
fn grid_seed(plan_seed: u64, index: usize) -> u64 {
    plan_seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// FNV-1a, used to derive stable per-window seeds from sample ids.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// `count` further samplings of each triple's grid under `plan`, drawn with
/// seeds independent of the primary sample. Used to vary training inputs
/// across epochs.
pub fn sample_variants(
    triples: &[Triple],
    plan: &SamplingPlan,
    scorer: Option<&dyn SlotScorer>,
    delta: usize,
    count: usize,
) -> Result<Vec<Vec<SmbgSample>>> {
    triples
        .par_iter()
        .map(|t| {
            let base = plan.seed ^ id_hash(&t.sample_id);
            (0..count).map(|v| hybrid_sample(&t.grid, &plan.reseeded(grid_seed(base, v)), scorer, delta)).collect()
        })
        .collect()
}

/// Samples and labels every grid, then splits by patient. Windows keep
/// their input order within each split.
pub fn build_dataset(
    grids: Vec<(CgmGrid, GridSource)>,
    plan: &SamplingPlan,
    scorer: Option<&dyn SlotScorer>,
    delta: usize,
    split_seed: u64,
) -> Result<(DatasetManifest, Splits)> {
    let patients: Vec<String> = grids.iter().map(|(g, _)| g.patient_id().to_string()).collect();
    let [train, val, _] = split_patients(&patients, split_seed)?;
    let split_of = |p: &str| {
        if train.iter().any(|x| x == p) {
            Split::Train
        } else if val.iter().any(|x| x == p) {
            Split::Val
        } else {
            Split::Test
        }
    };
    let th = Thresholds::default();
    let triples: Vec<Triple> = grids
        .into_par_iter()
        .enumerate()
        .map(|(i, (grid, source))| {
            let sample = hybrid_sample(&grid, &plan.reseeded(grid_seed(plan.seed, i)), scorer, delta)?;
            let label = compute_tr_hard(&grid, th)?;
            let sample_id = format!("{}-w{}", grid.patient_id(), grid.window_start());
            Ok(Triple { sample_id, source, grid, sample, label })
        })
        .collect::<Result<_>>()?;
    let mut seen = BTreeSet::new();
    let mut splits = Splits::default();
    for t in triples {
        if !seen.insert(t.sample_id.clone()) {
            return Err(CoreError::Validation(format!("duplicate window {}", t.sample_id)));
        }
        let split = split_of(t.grid.patient_id());
        splits.get_mut(split).push(t);
    }
    let plan_text = plan.to_string();
    let mut manifest = DatasetManifest::default();
    for split in Split::ALL {
        for t in splits.get(split) {
            manifest.records.push(ManifestRecord {
                sample_id: t.sample_id.clone(),
                source: t.source.to_string(),
                plan: plan_text.clone(),
                split,
                label: t.label,
            });
        }
    }
    Ok((manifest, splits))
}
