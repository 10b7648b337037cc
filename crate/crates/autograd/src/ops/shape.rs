use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `a[m,k] * b[k,n]` into a fresh buffer.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m,k] * b[n,k]^T`.
fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k,m]^T * b[k,n]`.
fn matmul_at(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(super) fn transpose2(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let src = t.data();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], data).unwrap()
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(TensorError::dim("transpose", format!("expected a matrix, got {:?}", self.shape(x))));
        }
        let out = transpose2(self.value(x));
        Ok(self.push(out, Op::Transpose(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(x))
    }

    /// Concatenates along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(TensorError::Usage("concat of nothing".into()));
        };
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(TensorError::dim(
                    "concat",
                    format!("part shape {:?} does not match trailing {:?}", s, tail),
                ));
            }
            lead += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut lifted = Vec::with_capacity(parts.len());
        for p in parts {
            let mut shape = vec![1];
            shape.extend_from_slice(self.shape(*p));
            lifted.push(self.reshape(*p, &shape)?);
        }
        self.concat(&lifted)
    }

    /// `x[index]` along the leading axis.
    pub fn index0(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || index >= shape[0] {
            return Err(TensorError::dim("index0", format!("index {} out of range for {:?}", index, shape)));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(x).data()[index * inner..(index + 1) * inner].to_vec();
        let out = Tensor::new(shape[1..].to_vec(), data)?;
        Ok(self.push(out, Op::Index0 { x, index }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::dim("matmul", format!("cannot multiply {:?} by {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }
}

pub(super) fn concat_backward(g_: &Graph, parts: &[Var], g: &Tensor, pending: &mut [Option<Tensor>]) {
    let mut offset = 0;
    for p in parts {
        let n = g_.value(*p).len();
        if g_.requires_grad(*p) {
            let d = g.data()[offset..offset + n].to_vec();
            g_.accumulate(pending, *p, Tensor::new(g_.shape(*p).to_vec(), d).unwrap());
        }
        offset += n;
    }
}

pub(super) fn matmul_backward(g_: &Graph, a: Var, b: Var, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let (va, vb) = (g_.value(a), g_.value(b));
    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
    if g_.requires_grad(a) {
        let d = matmul_bt(g.data(), vb.data(), m, n, k);
        g_.accumulate(pending, a, Tensor::new(vec![m, k], d).unwrap());
    }
    if g_.requires_grad(b) {
        let d = matmul_at(va.data(), g.data(), m, k, n);
        g_.accumulate(pending, b, Tensor::new(vec![k, n], d).unwrap());
    }
}

pub(super) fn index0_backward(g_: &Graph, x: Var, index: usize, g: &Tensor, pending: &mut [Option<Tensor>]) {
    let shape = g_.shape(x).to_vec();
    let inner = g.len();
    let mut d = vec![0.0; g_.value(x).len()];
    d[index * inner..(index + 1) * inner].copy_from_slice(g.data());
    g_.accumulate(pending, x, Tensor::new(shape, d).unwrap());
}
