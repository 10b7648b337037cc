//! Error metrics over predicted time-in-range vectors and the counting
//! baseline that ignores unobserved time.

use std::fmt::Write as _;

use crate::agp::{tr_hard_from_values, Thresholds, TrVector, TARGET_NAMES};
use crate::domain::SmbgSample;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the truth is constant for this target.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// TAR, TIR, TBR.
    pub per_target: [TargetMetrics; 3],
    pub overall_rmse: f64,
    pub overall_mae: f64,
    /// Mean over targets with a defined R²; `None` if there are none.
    pub overall_r2: Option<f64>,
    pub n: usize,
    /// `(truth, prediction)` per sample, in input order.
    pub pairs: Vec<(TrVector, TrVector)>,
}

fn target_metrics(truth: &[f64], pred: &[f64]) -> TargetMetrics {
    let n = truth.len() as f64;
    let sse: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum();
    let sae: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p).abs()).sum();
    let constant = truth.iter().all(|y| *y == truth[0]);
    let r2 = if constant {
        None
    } else {
        let mean = truth.iter().sum::<f64>() / n;
        let sst: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
        Some(1.0 - sse / sst)
    };
    TargetMetrics { rmse: (sse / n).sqrt(), mae: sae / n, r2 }
}

/// Root mean squared error averaged over the three targets.
pub fn overall_rmse(pred: &[TrVector], truth: &[TrVector]) -> Result<f64> {
    check_lengths(pred, truth, 1)?;
    let n = truth.len() as f64;
    let mut total = 0.0;
    for j in 0..3 {
        let sse: f64 = truth.iter().zip(pred).map(|(y, p)| (y.as_array()[j] - p.as_array()[j]).powi(2)).sum();
        total += (sse / n).sqrt();
    }
    Ok(total / 3.0)
}

fn check_lengths(pred: &[TrVector], truth: &[TrVector], min: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(CoreError::Dimension(format!("{} predictions for {} truths", pred.len(), truth.len())));
    }
    if truth.len() < min {
        return Err(CoreError::Parameter(format!("need at least {} samples, got {}", min, truth.len())));
    }
    Ok(())
}

pub fn evaluate(pred: &[TrVector], truth: &[TrVector]) -> Result<EvalReport> {
    check_lengths(pred, truth, 2)?;
    let column = |v: &[TrVector], j: usize| v.iter().map(|t| t.as_array()[j]).collect::<Vec<_>>();
    let per_target: [TargetMetrics; 3] = std::array::from_fn(|j| target_metrics(&column(truth, j), &column(pred, j)));
    let defined: Vec<f64> = per_target.iter().filter_map(|m| m.r2).collect();
    Ok(EvalReport {
        per_target,
        overall_rmse: per_target.iter().map(|m| m.rmse).sum::<f64>() / 3.0,
        overall_mae: per_target.iter().map(|m| m.mae).sum::<f64>() / 3.0,
        overall_r2: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        n: truth.len(),
        pairs: truth.iter().copied().zip(pred.iter().copied()).collect(),
    })
}

impl EvalReport {
    /// Names of targets whose R² is undefined.
    pub fn undefined_r2(&self) -> Vec<&'static str> {
        TARGET_NAMES.iter().zip(&self.per_target).filter(|(_, m)| m.r2.is_none()).map(|(n, _)| *n).collect()
    }

    /// Mean of `prediction - truth` for target `j` (0 TAR, 1 TIR, 2 TBR).
    pub fn mean_signed_error(&self, j: usize) -> f64 {
        let s: f64 = self.pairs.iter().map(|(y, p)| p.as_array()[j] - y.as_array()[j]).sum();
        s / self.pairs.len() as f64
    }

    /// Whether every prediction is a probability vector.
    pub fn predictions_on_simplex(&self, tol: f64) -> bool {
        self.pairs.iter().all(|(_, p)| p.on_simplex(tol))
    }

    /// Plain-text table at four decimal places.
    pub fn render(&self, title: &str) -> String {
        let fmt_r2 = |r: Option<f64>| r.map_or_else(|| "undefined".to_string(), |v| format!("{:.4}", v));
        let mut s = String::new();
        writeln!(s, "[{}]", title).unwrap();
        writeln!(s, "n = {}", self.n).unwrap();
        writeln!(s, "target   rmse     mae      r2        mean_signed_error").unwrap();
        for (j, (name, m)) in TARGET_NAMES.iter().zip(&self.per_target).enumerate() {
            writeln!(
                s,
                "{:<8} {:.4}   {:.4}   {:<9} {:.4}",
                name,
                m.rmse,
                m.mae,
                fmt_r2(m.r2),
                self.mean_signed_error(j)
            )
            .unwrap();
        }
        writeln!(s, "overall_tr_rmse = {:.4}", self.overall_rmse).unwrap();
        writeln!(s, "overall_mae = {:.4}", self.overall_mae).unwrap();
        writeln!(s, "overall_r2 = {}", fmt_r2(self.overall_r2)).unwrap();
        let undefined = self.undefined_r2();
        if !undefined.is_empty() {
            writeln!(s, "r2_undefined = {} (constant truth, excluded from overall_r2)", undefined.join(",")).unwrap();
        }
        s
    }

    /// `target,truth,pred` rows.
    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("target,truth,pred\n");
        for (j, name) in TARGET_NAMES.iter().enumerate() {
            for (y, p) in &self.pairs {
                writeln!(s, "{},{:.6},{:.6}", name, y.as_array()[j], p.as_array()[j]).unwrap();
            }
        }
        s
    }
}

/// Fractions of the observed fingerstick values in each range.
pub fn baseline_no_interp(sample: &SmbgSample, th: Thresholds) -> Result<TrVector> {
    let values: Vec<f64> = sample.observations().map(|(_, _, v)| v).collect();
    if values.is_empty() {
        return Err(CoreError::UndefinedBaseline);
    }
    tr_hard_from_values(&values, th)
}
