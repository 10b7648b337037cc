use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// (outer, axis length, inner) strides for iterating slices along `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::param("softmax", format!("axis {} out of range for {:?}", axis, shape)));
        }
        let (outer, len, inner) = axis_layout(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let at = |j: usize| base + j * inner;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    data[at(j)] /= total;
                }
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Softmax { x, axis }))
    }
}

pub(super) fn softmax_backward(
    g_: &Graph,
    x: Var,
    axis: usize,
    out: &Tensor,
    g: &Tensor,
    pending: &mut [Option<Tensor>],
) {
    let (outer, len, inner) = axis_layout(out.shape(), axis);
    let (y, gd) = (out.data(), g.data());
    let mut d = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len).map(|j| y[base + j * inner] * gd[base + j * inner]).sum();
            for j in 0..len {
                let k = base + j * inner;
                d[k] = y[k] * (gd[k] - dot);
            }
        }
    }
    g_.accumulate(pending, x, Tensor::new(out.shape().to_vec(), d).unwrap());
}
