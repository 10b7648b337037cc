//! Fused dot-product attention over positions, keeping only the
//! attention map between forward and backward.

use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub(crate) struct AttentionCtx {
    pub(crate) q: Var,
    pub(crate) k: Var,
    pub(crate) v: Var,
    /// Row-stochastic map `[N, N]`, row `j` holding query `j`'s weights.
    attn: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `exp(x)` for `x <= 0` to within a few ulps, written without branches so
/// it vectorizes. Inputs below -700 are clamped (the result is ~1e-304).
#[inline]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // Adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let x = if x < -700.0 { -700.0 } else { x };
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 12; |r| <= ln2/2 keeps the remainder below 2e-16.
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let ki = t.to_bits().wrapping_sub(SHIFT.to_bits());
    let scale = f64::from_bits(ki.wrapping_add(1023) << 52);
    p * scale
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

impl Graph {
    /// `O[:, j] = Σ_i A[j, i] V[:, i]` with `A = softmax_rows(Q K)` for
    /// queries `q[N, C']`, keys `k[C', N]` and values `v[C, N]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[0] || sk[1] != sq[0] || sv[1] != sq[0] {
            return Err(TensorError::dim(
                "attention",
                format!("expected q [N,C'], k [C',N], v [C,N], got {:?}, {:?}, {:?}", sq, sk, sv),
            ));
        }
        let (n, cq, c) = (sq[0], sq[1], sv[0]);
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut attn = vec![0.0; n * n];
        let mut out = vec![0.0; c * n];
        for j in 0..n {
            let row = &mut attn[j * n..(j + 1) * n];
            for b in 0..cq {
                axpy(qd[j * cq + b], &kd[b * n..(b + 1) * n], row);
            }
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &r| if r > m { r } else { m });
            row.iter_mut().for_each(|r| *r = exp_nonpositive(*r - max));
            let total: f64 = row.iter().sum();
            let inv = 1.0 / total;
            row.iter_mut().for_each(|r| *r *= inv);
            for ch in 0..c {
                out[ch * n + j] = dot(&vd[ch * n..(ch + 1) * n], row);
            }
        }
        let out = Tensor::new(vec![c, n], out)?;
        Ok(self.push(out, Op::Attention(Box::new(AttentionCtx { q, k, v, attn }))))
    }
}

pub(super) fn attention_backward(g_: &Graph, ctx: &AttentionCtx, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let (qv, kv, vv) = (g_.value(ctx.q), g_.value(ctx.k), g_.value(ctx.v));
    let (n, cq, c) = (qv.shape()[0], qv.shape()[1], vv.shape()[0]);
    let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), g.data());
    let mut dq = vec![0.0; n * cq];
    let mut dk = vec![0.0; cq * n];
    let mut dv = vec![0.0; c * n];
    let mut da = vec![0.0; n];
    for j in 0..n {
        let a = &ctx.attn[j * n..(j + 1) * n];
        da.iter_mut().for_each(|x| *x = 0.0);
        for ch in 0..c {
            let gcj = gd[ch * n + j];
            if gcj != 0.0 {
                axpy(gcj, &vd[ch * n..(ch + 1) * n], &mut da);
                axpy(gcj, a, &mut dv[ch * n..(ch + 1) * n]);
            }
        }
        // Softmax backward: dlogit_i = a_i (da_i - Σ a·da).
        let s = dot(a, &da);
        for (d, ai) in da.iter_mut().zip(a) {
            *d = ai * (*d - s);
        }
        for b in 0..cq {
            dq[j * cq + b] = dot(&da, &kd[b * n..(b + 1) * n]);
            axpy(qd[j * cq + b], &da, &mut dk[b * n..(b + 1) * n]);
        }
    }
    if g_.requires_grad(ctx.q) {
        g_.accumulate(pending, ctx.q, Tensor::new(vec![n, cq], dq).unwrap());
    }
    if g_.requires_grad(ctx.k) {
        g_.accumulate(pending, ctx.k, Tensor::new(vec![cq, n], dk).unwrap());
    }
    if g_.requires_grad(ctx.v) {
        g_.accumulate(pending, ctx.v, Tensor::new(vec![c, n], dv).unwrap());
    }
}

#[cfg(test)]
mod tests {
    use super::exp_nonpositive;

    #[test]
    fn exp_matches_std_to_a_few_ulps() {
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let x = -(i as f64) * 3.5e-3;
            let (a, b) = (exp_nonpositive(x), x.exp());
            worst = worst.max(((a - b) / b).abs());
        }
        assert!(worst < 1e-15, "relative error {worst:e}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert!(exp_nonpositive(-1e9) < 1e-300);
    }
}
