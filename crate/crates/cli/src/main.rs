use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use glyco_core::agp::{compute_tr_hard, Thresholds, TrVector};
use glyco_core::config::ExperimentConfig;
use glyco_core::data::csv::{ingest_cgm_csv, ingest_smbg_csv, write_cgm_csv, write_smbg_csv, PairedSmbg};
use glyco_core::data::{generate_synthetic_with_events, synthesize_behavioral_smbg, BehaviorProfile, SyntheticProfile};
use glyco_core::domain::{assemble_input, CgmGrid, PositionalEncoding};
use glyco_core::dpanet::{Ablation, DpaNet};
use glyco_core::eval::{baseline_no_interp, evaluate};
use glyco_core::experiment::{run_experiment, synthetic_patient_id};
use glyco_core::sampling::{
    hybrid_sample, select_topk_separated, SamplingPlan, SamplingStrategy, SelectionConstraint, SlotScorer,
};
use glyco_core::selector::{selector_pairs, train_selector, Aetcn, AetcnConfig, SelectorTrainOpts};

#[derive(Parser)]
#[command(name = "glyco", version, about = "Estimate two-week time-in-range metrics from sparse fingerstick glucose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic CGM corpus, optionally with fingerstick-style samples.
    Generate {
        #[arg(long, default_value_t = 10)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write fingersticks taken at habitual times.
        #[arg(long)]
        smbg_out: Option<PathBuf>,
    },
    /// Print TAR/TIR/TBR for every window of a CGM file.
    Metrics {
        #[arg(long)]
        cgm: PathBuf,
    },
    /// Train or apply the slot selector.
    Select {
        #[command(subcommand)]
        action: SelectAction,
    },
    /// Apply a sampling plan to a CGM file and write the fingersticks.
    Sample {
        #[arg(long)]
        cgm: PathBuf,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a trained model on paired CGM and fingerstick files.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cgm: PathBuf,
        #[arg(long)]
        smbg: PathBuf,
        #[arg(long, default_value = "full")]
        ablation: Ablation,
    },
    /// Score the counting baseline on paired CGM and fingerstick files.
    Baseline {
        #[arg(long)]
        cgm: PathBuf,
        #[arg(long)]
        smbg: PathBuf,
    },
    /// Print every report written under an experiment output directory.
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum SelectAction {
    /// Fit a selector to paired CGM and fingerstick files.
    Train {
        #[arg(long)]
        cgm: PathBuf,
        #[arg(long)]
        smbg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the selected slots of every day.
    Apply {
        #[arg(long)]
        selector: PathBuf,
        #[arg(long)]
        cgm: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 12)]
        delta: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Random,
    Hybrid,
    Active,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, value_enum, default_value = "random")]
    strategy: Strategy,
    #[arg(long, default_value_t = 0.028)]
    rate: f64,
    #[arg(long, default_value_t = 0.4)]
    gamma_h: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 12)]
    delta: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PlanArgs {
    fn plan(&self) -> Result<SamplingPlan> {
        let strategy = match self.strategy {
            Strategy::Random => SamplingStrategy::Random { rate: self.rate },
            Strategy::Hybrid => SamplingStrategy::Hybrid { gamma_h: self.gamma_h, rate: self.rate, k_per_day: self.k },
            Strategy::Active => SamplingStrategy::Active { k_per_day: self.k },
        };
        Ok(SamplingPlan::new(strategy, self.seed)?)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn fmt_tr(tr: TrVector) -> String {
    let [a, b, c] = tr.as_array();
    format!("{:.4} {:.4} {:.4}", a, b, c)
}

fn load_cgm(path: &Path) -> Result<Vec<CgmGrid>> {
    let ingest = ingest_cgm_csv(path).with_context(|| format!("reading {}", path.display()))?;
    for r in &ingest.rejected {
        eprintln!("rejected {} window at day {}: {}", r.patient_id, r.window_start, r.reason);
    }
    if ingest.duplicates > 0 {
        eprintln!("{} duplicate rows replaced", ingest.duplicates);
    }
    Ok(ingest.grids)
}

/// CGM windows with their aligned fingersticks, in CGM order.
fn load_pairs(cgm: &Path, smbg: &Path) -> Result<Vec<(CgmGrid, PairedSmbg)>> {
    let grids = load_cgm(cgm)?;
    let ingest = ingest_smbg_csv(smbg, &grids).with_context(|| format!("reading {}", smbg.display()))?;
    if !ingest.orphans.is_empty() {
        eprintln!("{} fingerstick rows match no CGM window", ingest.orphans.len());
    }
    if ingest.duplicates > 0 {
        eprintln!("{} duplicate fingerstick rows replaced", ingest.duplicates);
    }
    Ok(ingest
        .samples
        .into_iter()
        .map(|s| {
            let g = grids
                .iter()
                .find(|g| g.patient_id() == s.patient_id && g.window_start() == s.window_start)
                .expect("aligned to an ingested window")
                .clone();
            (g, s)
        })
        .collect())
}

fn run(cli: Cli) -> Result<()> {
    let th = Thresholds::default();
    match cli.command {
        Command::Generate { patients, seed, out, smbg_out } => {
            let profile = SyntheticProfile::default();
            let mut grids = Vec::new();
            let mut smbg = Vec::new();
            for i in 0..patients {
                let s = seed.wrapping_add(i as u64);
                let (g, events) = generate_synthetic_with_events(&profile, s)?;
                let g = CgmGrid::new(synthetic_patient_id(i), 0, g.days(), g.slots(), g.values().to_vec())?;
                if smbg_out.is_some() {
                    let sample = synthesize_behavioral_smbg(&g, &events, &BehaviorProfile::default(), s)?;
                    smbg.push(PairedSmbg { patient_id: g.patient_id().to_string(), window_start: 0, sample });
                }
                grids.push(g);
            }
            write_cgm_csv(&grids, create(&out)?)?;
            if let Some(path) = smbg_out {
                write_smbg_csv(&smbg, create(&path)?)?;
            }
        }
        Command::Metrics { cgm } => {
            println!("patient window_start TAR TIR TBR");
            for g in load_cgm(&cgm)? {
                println!("{} {} {}", g.patient_id(), g.window_start(), fmt_tr(compute_tr_hard(&g, th)?));
            }
        }
        Command::Select { action: SelectAction::Train { cgm, smbg, out, hidden, epochs, lr, seed } } => {
            let cfg = AetcnConfig { hidden, ..AetcnConfig::default() };
            let mut pairs = Vec::new();
            for (g, s) in load_pairs(&cgm, &smbg)? {
                pairs.extend(selector_pairs(&g, &s.sample, cfg.pe_dim)?);
            }
            if pairs.is_empty() {
                bail!("no day holds both CGM and fingerstick readings");
            }
            let opts = SelectorTrainOpts { epochs, lr, seed, ..SelectorTrainOpts::default() };
            let (model, trace) = train_selector(&pairs, cfg, opts)?;
            println!("trained on {} days; final loss {:.4}", pairs.len(), trace.last().copied().unwrap_or(f64::NAN));
            model.save(&out)?;
        }
        Command::Select { action: SelectAction::Apply { selector, cgm, k, delta } } => {
            let model = Aetcn::load(&selector)?;
            let c = SelectionConstraint::new(k, delta)?;
            println!("patient day slots");
            for g in load_cgm(&cgm)? {
                for d in 0..g.days() {
                    let slots = select_topk_separated(&model.score_day(g.day(d))?, c)?;
                    let list: Vec<String> = slots.iter().map(|s| s.to_string()).collect();
                    println!("{} {} {}", g.patient_id(), g.window_start() + d, list.join(","));
                }
            }
        }
        Command::Sample { cgm, plan, selector, out } => {
            let p = plan.plan()?;
            let model = selector.as_deref().map(Aetcn::load).transpose()?;
            if p.needs_selector() && model.is_none() {
                bail!("plan {} needs --selector", p);
            }
            let scorer = model.as_ref().map(|m| m as &dyn SlotScorer);
            let mut samples = Vec::new();
            for (i, g) in load_cgm(&cgm)?.iter().enumerate() {
                let sample = hybrid_sample(g, &p.reseeded(p.seed.wrapping_add(i as u64)), scorer, plan.delta)?;
                samples.push(PairedSmbg {
                    patient_id: g.patient_id().to_string(),
                    window_start: g.window_start(),
                    sample,
                });
            }
            write_smbg_csv(&samples, create(&out)?)?;
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let result = run_experiment(&cfg)?;
            for r in &result.reports {
                let model = r.model.as_ref().map_or("-".to_string(), |m| format!("{:.4}", m.overall_rmse));
                println!("{}: overall_tr_rmse {} baseline {:.4}", r.tag, model, r.baseline.overall_rmse);
            }
            println!("artifacts in {}", result.out_dir.display());
        }
        Command::Eval { model, cgm, smbg, ablation } => {
            let net = DpaNet::load(&model)?;
            let cfg = net.config();
            let pe = PositionalEncoding::build(cfg.days, cfg.slots, cfg.pe_dim)?;
            let mut inputs = Vec::new();
            let mut truth = Vec::new();
            for (g, s) in load_pairs(&cgm, &smbg)? {
                inputs.push(assemble_input(&s.sample, &pe)?);
                truth.push(compute_tr_hard(&g, th)?);
            }
            let pred = net.predict(&inputs, ablation, th)?;
            print!("{}", evaluate(&pred, &truth)?.render(&format!("model ({})", ablation)));
        }
        Command::Baseline { cgm, smbg } => {
            let mut pred = Vec::new();
            let mut truth = Vec::new();
            for (g, s) in load_pairs(&cgm, &smbg)? {
                pred.push(baseline_no_interp(&s.sample, th)?);
                truth.push(compute_tr_hard(&g, th)?);
            }
            print!("{}", evaluate(&pred, &truth)?.render("baseline_no_interp"));
        }
        Command::Report { dir } => {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| format!("listing {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path().join("report.txt")))
                .filter(|p| p.is_file())
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("no report.txt under {}", dir.display());
            }
            let mut stdout = std::io::stdout().lock();
            for p in found {
                writeln!(stdout, "== {}", p.display())?;
                stdout.write_all(std::fs::read(&p)?.as_slice())?;
                writeln!(stdout)?;
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
        let names: Vec<_> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
        assert_eq!(names, ["generate", "metrics", "select", "sample", "train", "eval", "baseline", "report"]);
    }
}
