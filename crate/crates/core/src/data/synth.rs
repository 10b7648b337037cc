//! Seeded synthetic CGM patients and behavior-driven fingerstick logs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::domain::{CgmGrid, Origin, SmbgSample, DEFAULT_DAYS, SLOTS_PER_DAY};
use crate::error::{CoreError, Result};

pub const MIN_SYNTHETIC: f64 = 40.0;
pub const MAX_SYNTHETIC: f64 = 400.0;

/// Generator settings. Pairs are `(low, high)` ranges from which each
/// patient draws one value.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProfile {
    pub days: usize,
    pub slots: usize,
    pub baseline_mgdl: (f64, f64),
    pub circadian_amplitude: f64,
    /// Slot of the circadian maximum.
    pub circadian_peak_slot: f64,
    pub meal_slots: Vec<f64>,
    /// Standard deviation of each meal's slot, in slots.
    pub meal_jitter: f64,
    /// Patient-level mean meal excursion in mg/dL.
    pub excursion_mgdl: (f64, f64),
    /// Meal-to-meal coefficient of variation of the excursion.
    pub excursion_cv: f64,
    /// Slots from meal to the midpoint of the logistic rise.
    pub rise_slots: f64,
    /// Exponential decay constant after the peak, in slots.
    pub decay_slots: f64,
    /// Expected hypoglycemic dips per day.
    pub hypo_rate: (f64, f64),
    pub hypo_depth_mgdl: (f64, f64),
    pub hypo_width_slots: f64,
    /// Standard deviation of a per-day level shift.
    pub day_shift_sd: f64,
    pub noise_sd: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            days: DEFAULT_DAYS,
            slots: SLOTS_PER_DAY,
            baseline_mgdl: (85.0, 170.0),
            circadian_amplitude: 12.0,
            circadian_peak_slot: 84.0,
            meal_slots: vec![90.0, 150.0, 228.0],
            meal_jitter: 6.0,
            excursion_mgdl: (30.0, 120.0),
            excursion_cv: 0.3,
            rise_slots: 8.0,
            decay_slots: 24.0,
            hypo_rate: (0.0, 2.0),
            hypo_depth_mgdl: (40.0, 80.0),
            hypo_width_slots: 8.0,
            day_shift_sd: 12.0,
            noise_sd: 6.0,
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 && r.0 >= 0.0;
        let ranges = [self.baseline_mgdl, self.excursion_mgdl, self.hypo_rate, self.hypo_depth_mgdl];
        if self.days == 0 || self.slots == 0 || !ranges.iter().all(|r| range_ok(*r)) {
            return Err(CoreError::Parameter("synthetic profile has an empty grid or an invalid range".into()));
        }
        let nonneg = [
            self.circadian_amplitude,
            self.meal_jitter,
            self.excursion_cv,
            self.rise_slots,
            self.decay_slots,
            self.hypo_width_slots,
            self.day_shift_sd,
            self.noise_sd,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CoreError::Parameter("synthetic profile scales must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Meal,
    Hypo,
}

/// A generated physiological event at a continuous slot position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub day: usize,
    pub slot: f64,
}

/// Meal response: logistic rise then exponential decay, peaking near 1.
fn meal_response(tau: f64, rise: f64, decay: f64) -> f64 {
    if tau < -4.0 * rise.max(1.0) {
        return 0.0;
    }
    let scale = (rise / 3.0).max(1e-3);
    let up = 1.0 / (1.0 + (-(tau - rise) / scale).exp());
    let down = if decay > 0.0 { (-(tau - 2.0 * rise).max(0.0) / decay).exp() } else { 1.0 };
    up * down
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    }
}

/// Grid plus the meal and hypoglycemia events that shaped it.
pub fn generate_synthetic_with_events(profile: &SyntheticProfile, seed: u64) -> Result<(CgmGrid, Vec<Event>)> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (days, slots) = (profile.days, profile.slots);
    let baseline = draw(&mut rng, profile.baseline_mgdl);
    let excursion = draw(&mut rng, profile.excursion_mgdl);
    let hypo_rate = draw(&mut rng, profile.hypo_rate);

    let mut events = Vec::new();
    let mut amps = Vec::new();
    for d in 0..days {
        for &m in &profile.meal_slots {
            let slot = (m + gauss(&mut rng, profile.meal_jitter)).clamp(0.0, slots as f64 - 1.0);
            let amp = excursion * (1.0 + gauss(&mut rng, profile.excursion_cv)).max(0.0);
            events.push(Event { kind: EventKind::Meal, day: d, slot });
            amps.push(amp);
        }
        let n_hypo =
            if hypo_rate > 0.0 { Poisson::new(hypo_rate).expect("positive rate").sample(&mut rng) as usize } else { 0 };
        for _ in 0..n_hypo {
            let slot = rng.random_range(0.0..slots as f64);
            events.push(Event { kind: EventKind::Hypo, day: d, slot });
            amps.push(draw(&mut rng, profile.hypo_depth_mgdl));
        }
    }
    let shifts: Vec<f64> = (0..days).map(|_| gauss(&mut rng, profile.day_shift_sd)).collect();

    let period = slots as f64;
    let mut values = Vec::with_capacity(days * slots);
    for (d, shift) in shifts.iter().enumerate() {
        for t in 0..slots {
            let now = (d * slots + t) as f64;
            let phase = 2.0 * std::f64::consts::PI * (t as f64 - profile.circadian_peak_slot) / period;
            let mut g = baseline + shift + profile.circadian_amplitude * phase.cos();
            for (e, amp) in events.iter().zip(&amps) {
                let tau = now - (e.day as f64 * period + e.slot);
                g += match e.kind {
                    EventKind::Meal => amp * meal_response(tau, profile.rise_slots, profile.decay_slots),
                    EventKind::Hypo => {
                        let w = profile.hypo_width_slots.max(1e-3);
                        -amp * (-tau * tau / (2.0 * w * w)).exp()
                    }
                };
            }
            g += gauss(&mut rng, profile.noise_sd);
            values.push(g.clamp(MIN_SYNTHETIC, MAX_SYNTHETIC));
        }
    }
    let grid = CgmGrid::new(format!("synthetic-{seed}"), 0, days, slots, values)?;
    Ok((grid, events))
}

pub fn generate_synthetic_grid(profile: &SyntheticProfile, seed: u64) -> Result<CgmGrid> {
    Ok(generate_synthetic_with_events(profile, seed)?.0)
}

/// When a simulated patient checks their glucose, in slots.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorProfile {
    /// Wake-up check position and jitter.
    pub fasting_slot: (f64, f64),
    /// Delay after each meal and its jitter.
    pub post_meal_delay: (f64, f64),
    pub bedtime_slot: (f64, f64),
}

impl Default for BehaviorProfile {
    fn default() -> Self {
        Self { fasting_slot: (78.0, 4.0), post_meal_delay: (18.0, 3.0), bedtime_slot: (264.0, 4.0) }
    }
}

/// Fingerstick log with five checks a day: on waking, after each of three
/// meals, and at bedtime. Checks that would collide move to the next free slot.
pub fn synthesize_behavioral_smbg(
    grid: &CgmGrid,
    events: &[Event],
    behavior: &BehaviorProfile,
    seed: u64,
) -> Result<SmbgSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = grid.slots();
    let last = slots as f64 - 1.0;
    let mut sample = SmbgSample::empty(grid.days(), slots, Origin::Real);
    for d in 0..grid.days() {
        let mut wanted = vec![behavior.fasting_slot.0 + gauss(&mut rng, behavior.fasting_slot.1)];
        for e in events.iter().filter(|e| e.day == d && e.kind == EventKind::Meal) {
            wanted.push(e.slot + behavior.post_meal_delay.0 + gauss(&mut rng, behavior.post_meal_delay.1));
        }
        wanted.push(behavior.bedtime_slot.0 + gauss(&mut rng, behavior.bedtime_slot.1));
        for w in wanted {
            let mut t = w.round().clamp(0.0, last) as usize;
            while sample.is_observed(d, t) && t + 1 < slots {
                t += 1;
            }
            sample.observe(d, t, grid.get(d, t))?;
        }
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agp::{compute_tr_hard, Thresholds, TrVector};

    fn flat(baseline: f64) -> SyntheticProfile {
        SyntheticProfile {
            baseline_mgdl: (baseline, baseline),
            circadian_amplitude: 0.0,
            excursion_mgdl: (0.0, 0.0),
            hypo_rate: (0.0, 0.0),
            day_shift_sd: 0.0,
            noise_sd: 0.0,
            ..SyntheticProfile::default()
        }
    }

    #[test]
    fn degenerate_profiles_are_constant() {
        let g = generate_synthetic_grid(&flat(110.0), 3).unwrap();
        assert!(g.values().iter().all(|v| *v == 110.0));
        assert_eq!(compute_tr_hard(&g, Thresholds::default()).unwrap(), TrVector::new(0.0, 1.0, 0.0));
        let g = generate_synthetic_grid(&flat(250.0), 3).unwrap();
        assert_eq!(compute_tr_hard(&g, Thresholds::default()).unwrap(), TrVector::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn generator_is_pure_in_seed() {
        let p = SyntheticProfile::default();
        assert_eq!(generate_synthetic_grid(&p, 9).unwrap(), generate_synthetic_grid(&p, 9).unwrap());
        assert_ne!(generate_synthetic_grid(&p, 9).unwrap(), generate_synthetic_grid(&p, 10).unwrap());
    }

    #[test]
    fn behavioral_log_has_five_checks_a_day() {
        let (g, ev) = generate_synthetic_with_events(&SyntheticProfile::default(), 4).unwrap();
        let s = synthesize_behavioral_smbg(&g, &ev, &BehaviorProfile::default(), 1).unwrap();
        assert!(s.is_consistent());
        for d in 0..g.days() {
            assert_eq!(s.observed_in_day(d).len(), 5);
        }
    }
}
