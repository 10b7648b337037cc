use super::elementwise::sigmoid;
use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl Graph {
    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets` in
    /// [0,1], computed in the overflow-free log-sum-exp form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(TensorError::dim(
                "bce_with_logits",
                format!("{} logits vs {} targets", z.len(), targets.len()),
            ));
        }
        let total: f64 = z.iter().zip(targets).map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()).sum();
        let out = Tensor::scalar(total / z.len() as f64);
        Ok(self.push(out, Op::BceWithLogits { logits, targets: targets.to_vec() }))
    }
}

pub(super) fn bce_backward(g_: &Graph, logits: Var, targets: &[f64], g: &Tensor, pending: &mut [Option<Tensor>]) {
    let z = g_.value(logits);
    let scale = g.item() / z.len() as f64;
    let d = z.data().iter().zip(targets).map(|(&z, &t)| scale * (sigmoid(z) - t)).collect();
    g_.accumulate(pending, logits, Tensor::new(z.shape().to_vec(), d).unwrap());
}
