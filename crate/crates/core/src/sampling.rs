//! Building sparse samples from dense grids: Bernoulli masking, exact
//! separated top-K selection, and the hybrid day-wise mixture.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{CgmGrid, Origin, SmbgSample};
use crate::error::{CoreError, Result};

pub const DEFAULT_RATE: f64 = 0.028;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_DELTA: usize = 12;

/// Stream reserved for the hybrid active-day draw; day `d` masks on stream `d`.
const DAY_CHOICE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingStrategy {
    Random { rate: f64 },
    Hybrid { gamma_h: f64, rate: f64, k_per_day: usize },
    Active { k_per_day: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub strategy: SamplingStrategy,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(strategy: SamplingStrategy, seed: u64) -> Result<Self> {
        let bad_rate = |r: f64| !(r > 0.0 && r <= 1.0);
        match strategy {
            SamplingStrategy::Random { rate } if bad_rate(rate) => {
                return Err(CoreError::Parameter(format!("rate {} outside (0, 1]", rate)))
            }
            SamplingStrategy::Hybrid { gamma_h, rate, k_per_day } => {
                if bad_rate(rate) {
                    return Err(CoreError::Parameter(format!("rate {} outside (0, 1]", rate)));
                }
                if !(0.0..=1.0).contains(&gamma_h) {
                    return Err(CoreError::Parameter(format!("gamma_h {} outside [0, 1]", gamma_h)));
                }
                if k_per_day == 0 {
                    return Err(CoreError::Parameter("k_per_day must be at least 1".into()));
                }
            }
            SamplingStrategy::Active { k_per_day: 0 } => {
                return Err(CoreError::Parameter("k_per_day must be at least 1".into()))
            }
            _ => {}
        }
        Ok(Self { strategy, seed })
    }

    pub fn needs_selector(&self) -> bool {
        match self.strategy {
            SamplingStrategy::Random { .. } => false,
            SamplingStrategy::Hybrid { gamma_h, .. } => gamma_h > 0.0,
            SamplingStrategy::Active { .. } => true,
        }
    }

    /// Same plan with another seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { strategy: self.strategy, seed }
    }
}

impl fmt::Display for SamplingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            SamplingStrategy::Random { rate } => write!(f, "random(rate={})", rate)?,
            SamplingStrategy::Hybrid { gamma_h, rate, k_per_day } => {
                write!(f, "hybrid(gamma_h={},rate={},k={})", gamma_h, rate, k_per_day)?
            }
            SamplingStrategy::Active { k_per_day } => write!(f, "active(k={})", k_per_day)?,
        }
        write!(f, "/seed={}", self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConstraint {
    pub k: usize,
    pub delta: usize,
}

impl Default for SelectionConstraint {
    fn default() -> Self {
        Self { k: DEFAULT_K, delta: DEFAULT_DELTA }
    }
}

impl SelectionConstraint {
    pub fn new(k: usize, delta: usize) -> Result<Self> {
        if k == 0 {
            return Err(CoreError::Parameter("k must be at least 1".into()));
        }
        Ok(Self { k, delta })
    }

    /// Distinct indices are always required, so a zero gap behaves like one.
    fn step(&self) -> usize {
        self.delta.max(1)
    }

    pub fn is_feasible(&self, t: usize) -> bool {
        self.k >= 1 && t > (self.k - 1) * self.step()
    }
}

/// Something that scores every slot of one day; higher means more likely
/// to be measured.
pub trait SlotScorer: Sync {
    fn score_day(&self, cgm_day_mgdl: &[f64]) -> Result<Vec<f64>>;
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn mask_day(sample: &mut SmbgSample, grid: &CgmGrid, day: usize, rate: f64, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, day as u64);
    for t in 0..grid.slots() {
        if rng.random::<f64>() < rate {
            sample.observe(day, t, grid.get(day, t))?;
        }
    }
    Ok(())
}

/// Keeps each slot independently with probability `rate`.
pub fn random_mask(grid: &CgmGrid, rate: f64, seed: u64) -> Result<SmbgSample> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(CoreError::Parameter(format!("rate {} outside (0, 1]", rate)));
    }
    let mut s = SmbgSample::empty(grid.days(), grid.slots(), Origin::RandomSelected);
    for d in 0..grid.days() {
        mask_day(&mut s, grid, d, rate, seed)?;
    }
    Ok(s)
}

/// Exact maximum-sum choice of `k` indices pairwise at least `delta` apart.
/// Among optimal sets the lexicographically smallest is returned.
pub fn select_topk_separated(scores: &[f64], c: SelectionConstraint) -> Result<Vec<usize>> {
    let t = scores.len();
    if c.k == 0 || !c.is_feasible(t) {
        return Err(CoreError::Constraint { t, k: c.k, delta: c.delta });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::Validation("non-finite selector score".into()));
    }
    let step = c.step();
    let k = c.k;
    // best[i][j]: largest sum of j picks from slots i.. (row i = T is the empty suffix).
    let width = k + 1;
    let mut best = vec![f64::NEG_INFINITY; (t + 1) * width];
    for i in 0..=t {
        best[i * width] = 0.0;
    }
    for i in (0..t).rev() {
        let next = (i + step).min(t);
        for j in 1..=k {
            let take = scores[i] + best[next * width + j - 1];
            let skip = best[(i + 1) * width + j];
            best[i * width + j] = if take >= skip { take } else { skip };
        }
    }
    let mut picks = Vec::with_capacity(k);
    let (mut i, mut j) = (0, k);
    while j > 0 {
        let next = (i + step).min(t);
        let take = scores[i] + best[next * width + j - 1];
        if take >= best[(i + 1) * width + j] {
            picks.push(i);
            i = next;
            j -= 1;
        } else {
            i += 1;
        }
    }
    Ok(picks)
}

/// Number of selector-driven days for a fraction `gamma_h` of `days`.
pub fn active_day_count(gamma_h: f64, days: usize) -> usize {
    // Guard against products like 0.2 * 15 = 3.0000000000000004.
    ((gamma_h * days as f64 - 1e-9).ceil().max(0.0) as usize).min(days)
}

fn select_day(
    sample: &mut SmbgSample,
    grid: &CgmGrid,
    day: usize,
    scorer: &dyn SlotScorer,
    c: SelectionConstraint,
) -> Result<()> {
    let scores = scorer.score_day(grid.day(day))?;
    if scores.len() != grid.slots() {
        return Err(CoreError::Dimension(format!("{} scores for {} slots", scores.len(), grid.slots())));
    }
    for t in select_topk_separated(&scores, c)? {
        sample.observe(day, t, grid.get(day, t))?;
    }
    Ok(())
}

/// Applies a plan to one grid. Selector-driven days pick `k_per_day` slots
/// at least `delta` apart; the rest are masked at the plan rate.
pub fn hybrid_sample(
    grid: &CgmGrid,
    plan: &SamplingPlan,
    scorer: Option<&dyn SlotScorer>,
    delta: usize,
) -> Result<SmbgSample> {
    let need =
        || scorer.ok_or_else(|| CoreError::Configuration("plan needs a trained selector but none was given".into()));
    match plan.strategy {
        SamplingStrategy::Random { rate } => random_mask(grid, rate, plan.seed),
        SamplingStrategy::Active { k_per_day } => {
            let scorer = need()?;
            let c = SelectionConstraint::new(k_per_day, delta)?;
            let mut s = SmbgSample::empty(grid.days(), grid.slots(), Origin::ActiveSelected);
            for d in 0..grid.days() {
                select_day(&mut s, grid, d, scorer, c)?;
            }
            Ok(s)
        }
        SamplingStrategy::Hybrid { gamma_h, rate, k_per_day } => {
            let n_active = active_day_count(gamma_h, grid.days());
            if n_active == 0 {
                return random_mask(grid, rate, plan.seed);
            }
            let scorer = need()?;
            let c = SelectionConstraint::new(k_per_day, delta)?;
            let mut order: Vec<usize> = (0..grid.days()).collect();
            order.shuffle(&mut stream_rng(plan.seed, DAY_CHOICE_STREAM));
            let mut active = vec![false; grid.days()];
            for &d in &order[..n_active] {
                active[d] = true;
            }
            let mut s = SmbgSample::empty(grid.days(), grid.slots(), Origin::HybridSelected);
            for (d, is_active) in active.iter().enumerate() {
                if *is_active {
                    select_day(&mut s, grid, d, scorer, c)?;
                } else {
                    mask_day(&mut s, grid, d, rate, plan.seed)?;
                }
            }
            Ok(s)
        }
    }
}

/// Days of `sample` holding exactly the selector pattern; used by tests and
/// reports to recover which days were active.
pub fn days_with_count(sample: &SmbgSample, count: usize) -> Vec<usize> {
    (0..sample.days()).filter(|&d| sample.observed_in_day(d).len() == count).collect()
}
