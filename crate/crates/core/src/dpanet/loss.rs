use glyco_autograd::{Graph, Tensor, Var};

use crate::agp::{compute_tr_soft, Thresholds, TrVector};
use crate::domain::GLUCOSE_SCALE;
use crate::error::{CoreError, Result};

use super::{Ablation, SampleOutput};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rc: f64,
    pub tr: f64,
    pub a: f64,
    /// Sigmoid temperature of the soft counts, mg/dL.
    pub temperature: f64,
    /// Detach the reconstruction-derived metrics inside the alignment term,
    /// so it only moves the direct head.
    pub stop_grad_alignment: bool,
    pub thresholds: Thresholds,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rc: 1.0,
            tr: 1.0,
            a: 0.5,
            temperature: 5.0,
            stop_grad_alignment: false,
            thresholds: Thresholds::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.rc, self.tr, self.a].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(CoreError::Configuration("loss weights must be finite and nonnegative".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(CoreError::Configuration(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Component values of one loss evaluation; terms the ablation disables are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub rc: f64,
    pub tr: f64,
    pub a: f64,
}

fn mean_squared(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

fn finite(component: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::NonFinite { component, value: v })
    }
}

/// Weighted sum of reconstruction, direct-metric and alignment errors for
/// one sample. `truth_grid` is the normalized ground truth at the
/// reconstruction's resolution.
pub fn total_loss(
    g: &mut Graph,
    out: &SampleOutput,
    truth_grid: &[f64],
    truth_tr: TrVector,
    w: &LossWeights,
    ablation: Ablation,
) -> Result<(Var, LossBreakdown)> {
    w.validate()?;
    let mut parts = LossBreakdown::default();
    let mut terms: Vec<(f64, Var)> = Vec::with_capacity(3);

    if ablation.uses_upper() {
        let recon = out.recon.ok_or_else(|| CoreError::Configuration("missing reconstruction".into()))?;
        let shape = g.shape(recon).to_vec();
        let truth = g.constant(
            Tensor::new(shape, truth_grid.to_vec())
                .map_err(|e| CoreError::Dimension(format!("ground truth does not match the reconstruction: {e}")))?,
        );
        let l = mean_squared(g, recon, truth)?;
        parts.rc = finite("L_rc", g.value(l).item())?;
        terms.push((w.rc, l));
    }
    if ablation.uses_lower() {
        let lower = out.tr_lower.ok_or_else(|| CoreError::Configuration("missing direct prediction".into()))?;
        let truth = g.constant(Tensor::from_vec(truth_tr.as_array().to_vec()));
        let l = mean_squared(g, truth, lower)?;
        parts.tr = finite("L_tr", g.value(l).item())?;
        terms.push((w.tr, l));
    }
    if ablation == Ablation::Full {
        let (recon, lower) = (out.recon.expect("checked above"), out.tr_lower.expect("checked above"));
        let mgdl = g.affine(recon, GLUCOSE_SCALE, 0.0);
        let upper = compute_tr_soft(g, mgdl, w.thresholds, w.temperature)?.vector;
        let upper = if w.stop_grad_alignment { g.detach(upper) } else { upper };
        let l = mean_squared(g, upper, lower)?;
        parts.a = finite("L_a", g.value(l).item())?;
        terms.push((w.a, l));
    }

    let mut total: Option<Var> = None;
    for (weight, term) in terms {
        let scaled = g.affine(term, weight, 0.0);
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    let total = total.expect("every ablation has at least one term");
    parts.total = finite("total loss", g.value(total).item())?;
    Ok((total, parts))
}
