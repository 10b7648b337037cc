//! Dense `f64` tensors with an eager reverse-mode autodiff graph, the
//! convolution/attention operator set used by the glucose models, and an
//! Adam optimizer.
//!
//! ```
//! use glyco_autograd::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

pub mod check;
mod error;
mod graph;
mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use ops::{BatchStats, BnMode, Conv2dOpts, PoolMode, PoolScope, RunningStats};
pub use optim::{Adam, AdamConfig, OptimError};
pub use params::{Binding, ParamId, ParamStore};
pub use tensor::Tensor;
