//! End-to-end runs: data, selector, sampling, training, evaluation and
//! artifacts on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::agp::TrVector;
use crate::config::{DataSource, ExperimentConfig, Mode, SelectorSource};
use crate::data::csv::{ingest_cgm_csv, ingest_smbg_csv};
use crate::data::{
    build_dataset, generate_synthetic_with_events, sample_variants, synthesize_behavioral_smbg, BehaviorProfile,
    DatasetManifest, GridSource, Splits, SyntheticProfile,
};
use crate::domain::{assemble_input, CgmGrid, PositionalEncoding, SmbgSample};
use crate::dpanet::Ablation;
use crate::error::{CoreError, Result};
use crate::eval::{baseline_no_interp, evaluate, EvalReport};
use crate::sampling::{SamplingPlan, SamplingStrategy, SlotScorer};
use crate::selector::{selector_pairs, train_selector, Aetcn};
use crate::train::{prepare_examples, train, TrainConfig, TrainOutcome};

/// Environment variable overriding the configured output root.
pub const OUT_DIR_ENV: &str = "GLYCO_OUT_DIR";

/// One trained (or baseline-only) configuration and its test-split scores.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub tag: String,
    pub plan: SamplingPlan,
    pub ablation: Option<Ablation>,
    pub manifest_hash: String,
    pub model: Option<EvalReport>,
    pub baseline: EvalReport,
    pub outcome: Option<TrainOutcome>,
}

impl RunReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "tag = {}", self.tag).unwrap();
        writeln!(s, "plan = {}", self.plan).unwrap();
        if let Some(a) = self.ablation {
            writeln!(s, "ablation = {}", a).unwrap();
        }
        writeln!(s, "manifest_sha256 = {}", self.manifest_hash).unwrap();
        if let Some(o) = &self.outcome {
            writeln!(s, "epochs = {}", o.trace.len()).unwrap();
            writeln!(s, "best_epoch = {}", o.best_epoch + 1).unwrap();
            writeln!(s, "final_train_loss = {:.4}", o.trace.last().expect("nonempty trace").loss.total).unwrap();
        }
        if let Some(m) = &self.model {
            writeln!(s, "predictions_on_simplex = {}", m.predictions_on_simplex(1e-9)).unwrap();
            s.push('\n');
            s.push_str(&m.render("model"));
        }
        s.push('\n');
        s.push_str(&self.baseline.render("baseline_no_interp"));
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub out_dir: PathBuf,
    pub reports: Vec<RunReport>,
}

/// Output root: the environment override if set, otherwise the configured one.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.out_dir.clone())
}

pub fn synthetic_patient_id(index: usize) -> String {
    format!("synthetic-{:03}", index)
}

/// One default-profile window per patient, seeded `seed + index`.
pub fn synthetic_grids(patients: usize, seed: u64) -> Result<Vec<(CgmGrid, GridSource)>> {
    let profile = SyntheticProfile::default();
    (0..patients)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let (grid, _) = generate_synthetic_with_events(&profile, s)?;
            let grid = CgmGrid::new(synthetic_patient_id(i), 0, grid.days(), grid.slots(), grid.values().to_vec())?;
            Ok((grid, GridSource::Synthetic { seed: s }))
        })
        .collect()
}

pub fn load_grids(data: &DataSource) -> Result<Vec<(CgmGrid, GridSource)>> {
    match data {
        DataSource::Synthetic { patients, seed } => synthetic_grids(*patients, *seed),
        DataSource::Csv { cgm } => {
            let source = GridSource::File(cgm.display().to_string());
            Ok(ingest_cgm_csv(cgm)?.grids.into_iter().map(|g| (g, source.clone())).collect())
        }
    }
}

/// Trains or loads the slot selector described by the configuration.
pub fn obtain_selector(cfg: &ExperimentConfig) -> Result<Aetcn> {
    let pairs = match &cfg.selector {
        SelectorSource::File(path) => return Aetcn::load(path),
        SelectorSource::Synthetic { patients, seed } => {
            let profile = SyntheticProfile::default();
            let behavior = BehaviorProfile::default();
            let per_patient: Vec<Result<Vec<_>>> = (0..*patients)
                .into_par_iter()
                .map(|i| {
                    let s = seed.wrapping_add(i as u64);
                    let (grid, events) = generate_synthetic_with_events(&profile, s)?;
                    let smbg = synthesize_behavioral_smbg(&grid, &events, &behavior, s)?;
                    selector_pairs(&grid, &smbg, cfg.selector_model.pe_dim)
                })
                .collect();
            let mut pairs = Vec::new();
            for p in per_patient {
                pairs.extend(p?);
            }
            pairs
        }
        SelectorSource::Csv { cgm, smbg } => {
            let grids = ingest_cgm_csv(cgm)?.grids;
            let paired = ingest_smbg_csv(smbg, &grids)?;
            let mut pairs = Vec::new();
            for s in &paired.samples {
                let grid = grids
                    .iter()
                    .find(|g| g.patient_id() == s.patient_id && g.window_start() == s.window_start)
                    .expect("sample aligned to an ingested window");
                pairs.extend(selector_pairs(grid, &s.sample, cfg.selector_model.pe_dim)?);
            }
            pairs
        }
    };
    Ok(train_selector(&pairs, cfg.selector_model.clone(), cfg.selector_train)?.0)
}

fn test_baseline(splits: &Splits, th: crate::agp::Thresholds) -> Result<EvalReport> {
    let truth: Vec<TrVector> = splits.test.iter().map(|t| t.label).collect();
    let pred = splits.test.iter().map(|t| baseline_no_interp(&t.sample, th)).collect::<Result<Vec<_>>>()?;
    evaluate(&pred, &truth)
}

/// Trains one model on a built dataset and scores it on the test split.
/// `variants[i]` holds extra samplings of training window `i`.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    splits: &Splits,
    variants: &[Vec<SmbgSample>],
    train_cfg: &TrainConfig,
) -> Result<(TrainOutcome, EvalReport)> {
    let examples = |t| prepare_examples(t, &cfg.model);
    let (mut tr, val, test) = (examples(&splits.train)?, examples(&splits.val)?, examples(&splits.test)?);
    let pe = PositionalEncoding::build(cfg.model.days, cfg.model.slots, cfg.model.pe_dim)?;
    for (ex, extra) in tr.iter_mut().zip(variants) {
        ex.variants = extra.iter().map(|s| assemble_input(s, &pe)).collect::<Result<_>>()?;
    }
    let outcome = train(cfg.model.clone(), &tr, &val, train_cfg).map_err(|e| e.in_stage("train"))?;
    let inputs: Vec<_> = test.iter().map(|e| e.input.clone()).collect();
    let truth: Vec<TrVector> = test.iter().map(|e| e.label).collect();
    let pred = outcome
        .model
        .predict(&inputs, train_cfg.ablation, train_cfg.weights.thresholds)
        .map_err(|e| e.in_stage("evaluate"))?;
    let report = evaluate(&pred, &truth).map_err(|e| e.in_stage("evaluate"))?;
    if !report.predictions_on_simplex(1e-9) {
        return Err(CoreError::Validation("a prediction left the probability simplex".into()).in_stage("evaluate"));
    }
    Ok((outcome, report))
}

fn write_run(dir: &Path, manifest: &DatasetManifest, run: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.txt"), manifest.to_text())?;
    std::fs::write(dir.join("splits.txt"), manifest.splits_text())?;
    std::fs::write(dir.join("report.txt"), run.render())?;
    std::fs::write(dir.join("baseline_scatter.csv"), run.baseline.scatter_csv())?;
    if let Some(m) = &run.model {
        std::fs::write(dir.join("scatter.csv"), m.scatter_csv())?;
    }
    if let Some(o) = &run.outcome {
        o.model.save(&dir.join("model.bin"))?;
        std::fs::write(dir.join("trace.csv"), o.trace_csv())?;
    }
    Ok(())
}

fn with_gamma(plan: &SamplingPlan, gamma: f64) -> Result<SamplingPlan> {
    let strategy = match plan.strategy {
        SamplingStrategy::Hybrid { rate, k_per_day, .. } => {
            SamplingStrategy::Hybrid { gamma_h: gamma, rate, k_per_day }
        }
        _ => return Err(CoreError::Configuration("hybrid-sweep needs sampling.strategy = hybrid".into())),
    };
    SamplingPlan::new(strategy, plan.seed)
}

/// Runs the configured mode, writing each run under its own subdirectory
/// of the output root.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let root = output_root(cfg);
    let grids = load_grids(&cfg.data).map_err(|e| e.in_stage("data"))?;

    let plans: Vec<(String, SamplingPlan)> = match cfg.mode {
        Mode::HybridSweep => cfg
            .gamma_sweep
            .iter()
            .map(|g| Ok((format!("gamma_h={}", g), with_gamma(&cfg.plan, *g)?)))
            .collect::<Result<_>>()?,
        _ => vec![(String::new(), cfg.plan)],
    };
    let selector = if plans.iter().any(|(_, p)| p.needs_selector()) {
        let s = obtain_selector(cfg).map_err(|e| e.in_stage("selector"))?;
        std::fs::create_dir_all(&root)?;
        s.save(&root.join("selector.bin"))?;
        Some(s)
    } else {
        None
    };
    let scorer = selector.as_ref().map(|s| s as &dyn SlotScorer);
    let th = cfg.train.weights.thresholds;

    let mut reports = Vec::new();
    for (plan_tag, plan) in plans {
        let (manifest, splits) = build_dataset(grids.clone(), &plan, scorer, cfg.delta, cfg.split_seed)
            .map_err(|e| e.in_stage("dataset"))?;
        let baseline = test_baseline(&splits, th).map_err(|e| e.in_stage("baseline"))?;
        let variants = if cfg.mode == Mode::BaselineOnly {
            Vec::new()
        } else {
            sample_variants(&splits.train, &plan, scorer, cfg.delta, cfg.train_resamples)
                .map_err(|e| e.in_stage("dataset"))?
        };
        let hash = manifest.hash();
        let ablations: Vec<Ablation> = match cfg.mode {
            Mode::BaselineOnly => vec![],
            Mode::AblationSweep => Ablation::ALL.to_vec(),
            Mode::Train | Mode::HybridSweep => vec![cfg.train.ablation],
        };
        if ablations.is_empty() {
            let run = RunReport {
                tag: "baseline".into(),
                plan,
                ablation: None,
                manifest_hash: hash.clone(),
                model: None,
                baseline: baseline.clone(),
                outcome: None,
            };
            write_run(&root.join(&run.tag), &manifest, &run).map_err(|e| e.in_stage("write"))?;
            reports.push(run);
        }
        for ablation in ablations {
            let train_cfg = TrainConfig { ablation, ..cfg.train.clone() };
            let (outcome, report) = train_and_evaluate(cfg, &splits, &variants, &train_cfg)?;
            let tag = if plan_tag.is_empty() { ablation.to_string() } else { plan_tag.clone() };
            let run = RunReport {
                tag,
                plan,
                ablation: Some(ablation),
                manifest_hash: hash.clone(),
                model: Some(report),
                baseline: baseline.clone(),
                outcome: Some(outcome),
            };
            write_run(&root.join(&run.tag), &manifest, &run).map_err(|e| e.in_stage("write"))?;
            reports.push(run);
        }
    }
    Ok(ExperimentResult { out_dir: root, reports })
}
