//! Glucose grids, sparse fingerstick samples, positional encoding and the
//! three-channel network input.

use glyco_autograd::Tensor;

use crate::error::{CoreError, Result};

pub const DEFAULT_DAYS: usize = 14;
pub const SLOTS_PER_DAY: usize = 288;
pub const DEFAULT_PE_DIM: usize = 16;
/// mg/dL mapped to 1.0 by [`normalize_glucose`].
pub const GLUCOSE_SCALE: f64 = 400.0;
const NORMALIZED_CEILING: f64 = 1.5;
const MAX_GLUCOSE: f64 = 600.0;

/// Dense D×T glucose matrix in mg/dL, row-major by day.
#[derive(Debug, Clone, PartialEq)]
pub struct CgmGrid {
    patient_id: String,
    /// Index of the first source day covered by this window.
    window_start: usize,
    days: usize,
    slots: usize,
    values: Vec<f64>,
}

impl CgmGrid {
    pub fn new(
        patient_id: impl Into<String>,
        window_start: usize,
        days: usize,
        slots: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if days == 0 || slots == 0 {
            return Err(CoreError::Parameter("grid must have at least one day and one slot".into()));
        }
        if values.len() != days * slots {
            return Err(CoreError::Dimension(format!("{} values for a {}x{} grid", values.len(), days, slots)));
        }
        if let Some((i, v)) =
            values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0 && **v <= MAX_GLUCOSE))
        {
            return Err(CoreError::Validation(format!(
                "glucose {} at day {} slot {} outside (0, 600] mg/dL",
                v,
                i / slots,
                i % slots
            )));
        }
        Ok(Self { patient_id: patient_id.into(), window_start, days, slots, values })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn window_start(&self) -> usize {
        self.window_start
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, day: usize, slot: usize) -> f64 {
        self.values[day * self.slots + slot]
    }

    pub fn day(&self, day: usize) -> &[f64] {
        &self.values[day * self.slots..(day + 1) * self.slots]
    }

    /// Normalized values averaged over non-overlapping runs of `pool` slots,
    /// as a `days × slots/pool` row-major buffer.
    pub fn pooled_normalized(&self, pool: usize) -> Result<Vec<f64>> {
        if pool == 0 || !self.slots.is_multiple_of(pool) {
            return Err(CoreError::Parameter(format!("pool factor {} must divide {} slots", pool, self.slots)));
        }
        Ok(self.values.chunks(pool).map(|c| c.iter().sum::<f64>() / (pool as f64 * GLUCOSE_SCALE)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Real,
    RandomSelected,
    HybridSelected,
    ActiveSelected,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::RandomSelected => "random-selected",
            Origin::HybridSelected => "hybrid-selected",
            Origin::ActiveSelected => "active-selected",
        }
    }
}

/// Sparse observations: `m_s` holds mg/dL where observed and 0 elsewhere,
/// `m_m` is 1 where missing.
#[derive(Debug, Clone, PartialEq)]
pub struct SmbgSample {
    days: usize,
    slots: usize,
    m_s: Vec<f64>,
    m_m: Vec<f64>,
    origin: Origin,
}

impl SmbgSample {
    pub fn empty(days: usize, slots: usize, origin: Origin) -> Self {
        Self { days, slots, m_s: vec![0.0; days * slots], m_m: vec![1.0; days * slots], origin }
    }

    /// Builds a sample from `(day, slot, mg/dL)` observations; a later
    /// observation of the same cell replaces an earlier one.
    pub fn from_observations(
        days: usize,
        slots: usize,
        observations: impl IntoIterator<Item = (usize, usize, f64)>,
        origin: Origin,
    ) -> Result<Self> {
        let mut s = Self::empty(days, slots, origin);
        for (d, t, v) in observations {
            s.observe(d, t, v)?;
        }
        Ok(s)
    }

    pub fn observe(&mut self, day: usize, slot: usize, value: f64) -> Result<()> {
        if day >= self.days || slot >= self.slots {
            return Err(CoreError::Dimension(format!(
                "observation ({}, {}) outside {}x{}",
                day, slot, self.days, self.slots
            )));
        }
        if !(value.is_finite() && value > 0.0 && value <= MAX_GLUCOSE) {
            return Err(CoreError::Validation(format!("observed glucose {} outside (0, 600]", value)));
        }
        let i = day * self.slots + slot;
        self.m_s[i] = value;
        self.m_m[i] = 0.0;
        Ok(())
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn m_s(&self) -> &[f64] {
        &self.m_s
    }

    pub fn m_m(&self) -> &[f64] {
        &self.m_m
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn is_observed(&self, day: usize, slot: usize) -> bool {
        self.m_m[day * self.slots + slot] == 0.0
    }

    /// `(day, slot, mg/dL)` for every observed cell in row-major order.
    pub fn observations(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.m_s.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| (i / self.slots, i % self.slots, *v))
    }

    pub fn observed_count(&self) -> usize {
        self.m_m.iter().filter(|m| **m == 0.0).count()
    }

    pub fn observed_in_day(&self, day: usize) -> Vec<usize> {
        (0..self.slots).filter(|&t| self.is_observed(day, t)).collect()
    }

    /// Mask/value complementarity: observed exactly where the value is positive.
    pub fn is_consistent(&self) -> bool {
        self.m_s.iter().zip(&self.m_m).all(|(s, m)| (*s > 0.0 && *m == 0.0) || (*s == 0.0 && *m == 1.0))
    }
}

/// 2-D sinusoidal encoding collapsed over the embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    days: usize,
    slots: usize,
    dim: usize,
    m_p: Vec<f64>,
}

impl PositionalEncoding {
    pub fn build(days: usize, slots: usize, dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(CoreError::Parameter(format!("encoding dimension {} must be even and positive", dim)));
        }
        if days == 0 || slots == 0 {
            return Err(CoreError::Parameter("encoding needs at least one day and one slot".into()));
        }
        let day_part: Vec<f64> = (0..days).map(|i| collapsed_sinusoid(i, dim)).collect();
        let time_part = time_encoding(slots, dim);
        let mut m_p = Vec::with_capacity(days * slots);
        for d in &day_part {
            m_p.extend(time_part.iter().map(|t| d + t));
        }
        Ok(Self { days, slots, dim, m_p })
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.m_p
    }

    pub fn get(&self, day: usize, slot: usize) -> f64 {
        self.m_p[day * self.slots + slot]
    }
}

/// `Σ_p PE[pos, p]` for the standard sin/cos pair layout.
fn collapsed_sinusoid(pos: usize, dim: usize) -> f64 {
    (0..dim / 2)
        .map(|p| {
            let angle = pos as f64 / 10000f64.powf(2.0 * p as f64 / dim as f64);
            angle.sin() + angle.cos()
        })
        .sum()
}

/// One-dimensional collapsed encoding over `slots` positions.
pub fn time_encoding(slots: usize, dim: usize) -> Vec<f64> {
    (0..slots).map(|j| collapsed_sinusoid(j, dim)).collect()
}

pub fn normalize_glucose(value: f64) -> Result<f64> {
    if !(0.0..=MAX_GLUCOSE).contains(&value) {
        return Err(CoreError::Validation(format!("glucose {} outside [0, 600] mg/dL", value)));
    }
    Ok((value / GLUCOSE_SCALE).min(NORMALIZED_CEILING))
}

pub fn denormalize_glucose(value: f64) -> f64 {
    value * GLUCOSE_SCALE
}

/// `3×D×T` stack of (values, mask, position).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    theta: Tensor,
}

impl NetworkInput {
    pub fn tensor(&self) -> &Tensor {
        &self.theta
    }

    pub fn days(&self) -> usize {
        self.theta.shape()[1]
    }

    pub fn slots(&self) -> usize {
        self.theta.shape()[2]
    }
}

/// Stacks the network input. The value channel is normalized and capped at 1;
/// the position channel is divided by the encoding dimension so all three
/// channels share a unit scale.
pub fn assemble_input(sample: &SmbgSample, pe: &PositionalEncoding) -> Result<NetworkInput> {
    if sample.days != pe.days || sample.slots != pe.slots {
        return Err(CoreError::Dimension(format!(
            "sample {}x{} vs encoding {}x{}",
            sample.days, sample.slots, pe.days, pe.slots
        )));
    }
    let n = sample.days * sample.slots;
    let mut data = Vec::with_capacity(3 * n);
    for v in &sample.m_s {
        data.push(normalize_glucose(*v)?.min(1.0));
    }
    data.extend_from_slice(&sample.m_m);
    let scale = 1.0 / pe.dim as f64;
    data.extend(pe.m_p.iter().map(|v| v * scale));
    let theta = Tensor::new(vec![3, sample.days, sample.slots], data)?;
    Ok(NetworkInput { theta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_out_of_range() {
        assert!(CgmGrid::new("p", 0, 1, 2, vec![100.0, 0.0]).is_err());
        assert!(CgmGrid::new("p", 0, 1, 2, vec![100.0, 601.0]).is_err());
        assert!(CgmGrid::new("p", 0, 1, 2, vec![100.0, f64::NAN]).is_err());
        assert!(CgmGrid::new("p", 0, 1, 3, vec![100.0, 100.0]).is_err());
        assert!(CgmGrid::new("p", 0, 1, 2, vec![100.0, 600.0]).is_ok());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_glucose(0.0).unwrap(), 0.0);
        assert_eq!(normalize_glucose(400.0).unwrap(), 1.0);
        assert_eq!(normalize_glucose(180.0).unwrap(), 0.45);
        assert_eq!(normalize_glucose(600.0).unwrap(), 1.5);
        assert!(normalize_glucose(-1.0).is_err());
        assert_eq!(denormalize_glucose(0.45), 180.0);
    }

    #[test]
    fn odd_encoding_dimension_rejected() {
        assert!(matches!(PositionalEncoding::build(2, 4, 3), Err(CoreError::Parameter(_))));
    }

    #[test]
    fn pooled_values_average_runs() {
        let g = CgmGrid::new("p", 0, 1, 4, vec![100.0, 200.0, 40.0, 40.0]).unwrap();
        assert_eq!(g.pooled_normalized(2).unwrap(), vec![0.375, 0.1]);
        assert!(g.pooled_normalized(3).is_err());
    }

    #[test]
    fn later_observation_replaces_earlier() {
        let s = SmbgSample::from_observations(1, 4, [(0, 1, 90.0), (0, 1, 120.0)], Origin::Real).unwrap();
        assert_eq!(s.observed_count(), 1);
        assert_eq!(s.m_s()[1], 120.0);
        assert!(s.is_consistent());
    }
}
