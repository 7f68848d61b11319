//! Central finite-difference gradient oracle.
//!
//! The oracle only evaluates the forward pass, so it is independent of the
//! backward rules it checks. Run it under 64-bit precision.

use super::precision::{with_precision, Precision};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(floor, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rtol: f64) -> bool {
        self.max_rel_err <= rtol
    }
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences with step `h`. Relative errors use `floor` as the smallest
/// denominator so exact zeros do not divide by zero.
pub fn check<F>(inputs: &[Tensor], h: f64, floor: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    with_precision(Precision::F64, || {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

        let eval = |probe: &[Tensor]| -> Result<f64> {
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = probe.iter().map(|t| tape.constant(t.clone())).collect();
            Ok(f(&tape, &vars)?.value().item())
        };

        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            worst: (0, 0),
            checked: 0,
        };
        let mut probe = inputs.to_vec();
        for (k, input) in inputs.iter().enumerate() {
            for e in 0..input.numel() {
                let orig = input.data()[e];
                probe[k].data_mut()[e] = orig + h;
                let up = eval(&probe)?;
                probe[k].data_mut()[e] = orig - h;
                let down = eval(&probe)?;
                probe[k].data_mut()[e] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[k].data()[e];
                let denom = floor.max(a.abs()).max(numeric.abs());
                let rel = (a - numeric).abs() / denom;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = (k, e);
                }
                report.checked += 1;
            }
        }
        Ok(report)
    })
}
