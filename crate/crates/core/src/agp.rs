//! Time-in-range metrics: exact counting for labels and a sigmoid-relaxed
//! count for gradients.

use glyco_autograd::{Graph, Var};

use crate::domain::CgmGrid;
use crate::error::{CoreError, Result};

/// Fractions above, within and below range, always in (TAR, TIR, TBR) order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrVector {
    pub tar: f64,
    pub tir: f64,
    pub tbr: f64,
}

pub const TARGET_NAMES: [&str; 3] = ["TAR", "TIR", "TBR"];

impl TrVector {
    pub fn new(tar: f64, tir: f64, tbr: f64) -> Self {
        Self { tar, tir, tbr }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { tar: a[0], tir: a[1], tbr: a[2] }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.tar, self.tir, self.tbr]
    }

    pub fn on_simplex(&self, tol: f64) -> bool {
        let a = self.as_array();
        a.iter().all(|v| *v >= 0.0 && *v <= 1.0 + tol) && (a.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub tau_low: f64,
    pub tau_high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { tau_low: 70.0, tau_high: 180.0 }
    }
}

impl Thresholds {
    pub fn new(tau_low: f64, tau_high: f64) -> Result<Self> {
        if !(tau_low > 0.0 && tau_low < tau_high && tau_high.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "thresholds need 0 < low < high, got {} and {}",
                tau_low, tau_high
            )));
        }
        Ok(Self { tau_low, tau_high })
    }
}

/// Cell counts behind a hard [`TrVector`]; `above + within + below == total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrCounts {
    pub above: usize,
    pub within: usize,
    pub below: usize,
}

impl TrCounts {
    pub fn total(&self) -> usize {
        self.above + self.within + self.below
    }

    pub fn fractions(&self) -> TrVector {
        let n = self.total() as f64;
        TrVector::new(self.above as f64 / n, self.within as f64 / n, self.below as f64 / n)
    }
}

/// Range is inclusive at both thresholds.
pub fn count_in_ranges(values: impl IntoIterator<Item = f64>, th: Thresholds) -> TrCounts {
    let mut c = TrCounts::default();
    for g in values {
        if g > th.tau_high {
            c.above += 1;
        } else if g < th.tau_low {
            c.below += 1;
        } else {
            c.within += 1;
        }
    }
    c
}

pub fn tr_hard_from_values(values: &[f64], th: Thresholds) -> Result<TrVector> {
    if values.is_empty() {
        return Err(CoreError::Parameter("time in range of an empty set".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Validation("non-finite glucose value".into()));
    }
    Ok(count_in_ranges(values.iter().copied(), th).fractions())
}

pub fn compute_tr_hard(grid: &CgmGrid, th: Thresholds) -> Result<TrVector> {
    tr_hard_from_values(grid.values(), th)
}

/// Differentiable time in range of a graph tensor of mg/dL values.
#[derive(Debug, Clone, Copy)]
pub struct SoftTr {
    pub tar: Var,
    pub tir: Var,
    pub tbr: Var,
    /// `[3]` in (TAR, TIR, TBR) order.
    pub vector: Var,
}

/// TAR and TBR are mean sigmoids of the threshold distance over
/// `temperature`; TIR is the remainder, so the triple sums to one exactly.
pub fn compute_tr_soft(g: &mut Graph, grid_mgdl: Var, th: Thresholds, temperature: f64) -> Result<SoftTr> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CoreError::Parameter(format!("temperature must be positive, got {}", temperature)));
    }
    if g.value(grid_mgdl).is_empty() {
        return Err(CoreError::Parameter("time in range of an empty tensor".into()));
    }
    let inv = 1.0 / temperature;
    let above = g.affine(grid_mgdl, inv, -th.tau_high * inv);
    let above = g.sigmoid(above);
    let tar = g.mean(above);
    let below = g.affine(grid_mgdl, -inv, th.tau_low * inv);
    let below = g.sigmoid(below);
    let tbr = g.mean(below);
    let outside = g.add(tar, tbr)?;
    let tir = g.affine(outside, -1.0, 1.0);
    let vector = g.concat(&[tar, tir, tbr])?;
    Ok(SoftTr { tar, tir, tbr, vector })
}
