//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to verify.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct CheckOpts {
    /// Finite-difference step.
    pub h: f64,
    /// Denominator floor for relative error, so gradients that are
    /// exactly zero compare in absolute terms.
    pub floor: f64,
}

impl Default for CheckOpts {
    fn default() -> Self {
        CheckOpts { h: 1e-5, floor: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub coords: Vec<CoordCheck>,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn eval_loss<F>(build: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Central difference of the scalar built by `build` with respect to one
/// coordinate of one input.
pub fn numerical_partial<F>(build: &F, inputs: &[Tensor], input: usize, index: usize, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut shifted = inputs.to_vec();
    let x0 = inputs[input].data()[index];
    shifted[input].data_mut()[index] = x0 + h;
    let up = eval_loss(build, &shifted)?;
    shifted[input].data_mut()[index] = x0 - h;
    let down = eval_loss(build, &shifted)?;
    Ok((up - down) / (2.0 * h))
}

/// Compares backward-pass gradients against central differences. With
/// `coords = None` every coordinate of every input is checked.
pub fn check_gradients<F>(
    build: F,
    inputs: &[Tensor],
    coords: Option<&[(usize, usize)]>,
    opts: CheckOpts,
) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| g.grad_or_zeros(*v)).collect();
    drop(g);

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
            &all
        }
    };
    let mut report = CheckReport::default();
    for &(input, index) in coords {
        let numeric = numerical_partial(&build, inputs, input, index, opts.h)?;
        let a = analytic[input].data()[index];
        report.coords.push(CoordCheck {
            input,
            index,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric, opts.floor),
        });
    }
    Ok(report)
}
