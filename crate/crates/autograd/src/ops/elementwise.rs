use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(op, format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale * x + shift`, both constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { x, scale })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(TensorError::dim(
                "scale_by",
                format!("scale must hold one value, got shape {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| sv * v);
        Ok(self.push(out, Op::ScaleBy { s, x }))
    }

    /// Channel-wise product: `s` of shape `[C]` or `[C,1,1]` against `x` of
    /// shape `[C, ...]`. This is the only broadcasting the library does.
    pub fn broadcast_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ss = self.shape(s).to_vec();
        let c = ss[0];
        let ok = !xs.is_empty() && xs[0] == c && (ss.len() == 1 || (ss.len() == 3 && ss[1] == 1 && ss[2] == 1));
        if !ok {
            return Err(TensorError::dim("broadcast_mul", format!("cannot broadcast {:?} against {:?}", ss, xs)));
        }
        let inner = self.value(x).len() / c;
        let sv = self.value(s).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (ch, chunk) in data.chunks_mut(inner).enumerate() {
            for v in chunk {
                *v *= sv[ch];
            }
        }
        let out = Tensor::new(xs, data)?;
        Ok(self.push(out, Op::BroadcastMul { x, s }))
    }
}

pub(super) fn mul_backward(g_: &Graph, a: Var, b: Var, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let (va, vb) = (g_.value(a), g_.value(b));
    if g_.requires_grad(a) {
        let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        g_.accumulate(pending, a, Tensor::new(va.shape().to_vec(), d).unwrap());
    }
    if g_.requires_grad(b) {
        let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
        g_.accumulate(pending, b, Tensor::new(vb.shape().to_vec(), d).unwrap());
    }
}

pub(super) fn relu_backward(g_: &Graph, x: Var, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let vx = g_.value(x);
    let d = g.data().iter().zip(vx.data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
    g_.accumulate(pending, x, Tensor::new(vx.shape().to_vec(), d).unwrap());
}

pub(super) fn sigmoid_backward(g_: &Graph, x: Var, out: &Tensor, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
    g_.accumulate(pending, x, Tensor::new(out.shape().to_vec(), d).unwrap());
}

pub(super) fn scale_by_backward(g_: &Graph, s: Var, x: Var, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let sv = g_.value(s).item();
    if g_.requires_grad(x) {
        g_.accumulate(pending, x, g.map(|v| v * sv));
    }
    if g_.requires_grad(s) {
        let ds: f64 = g.data().iter().zip(g_.value(x).data()).map(|(a, b)| a * b).sum();
        let shape = g_.shape(s).to_vec();
        g_.accumulate(pending, s, Tensor::new(shape, vec![ds]).unwrap());
    }
}

pub(super) fn broadcast_mul_backward(g_: &Graph, x: Var, s: Var, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let vx = g_.value(x);
    let vs = g_.value(s);
    let c = vs.shape()[0];
    let inner = vx.len() / c;
    if g_.requires_grad(x) {
        let mut d = g.data().to_vec();
        for (ch, chunk) in d.chunks_mut(inner).enumerate() {
            let sv = vs.data()[ch];
            for v in chunk {
                *v *= sv;
            }
        }
        g_.accumulate(pending, x, Tensor::new(vx.shape().to_vec(), d).unwrap());
    }
    if g_.requires_grad(s) {
        let ds: Vec<f64> = g
            .data()
            .chunks(inner)
            .zip(vx.data().chunks(inner))
            .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
            .collect();
        g_.accumulate(pending, s, Tensor::new(vs.shape().to_vec(), ds).unwrap());
    }
}
