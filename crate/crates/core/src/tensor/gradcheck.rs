//! Central finite-difference checks of tape gradients.
//!
//! Perturbations that flip a branch decision (a relu sign, a max or min
//! selection) are skipped: the function is not differentiable across them.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Relative error with a floor on the magnitude, so values that are both
/// near zero compare by absolute difference.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares backward gradients of `f` against central differences at the
/// listed `(input, element)` coordinates.
pub fn check<F>(inputs: &[Tensor], coords: &[(usize, usize)], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.variable(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.scalar_value(out)?, tape.branch_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.variable(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let signature = tape.branch_signature();
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
    };
    let mut work = inputs.to_vec();
    for &(i, j) in coords {
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
        let base = work[i].data()[j];
        work[i].data_mut()[j] = base + step;
        let (plus, sig_plus) = eval(&work)?;
        work[i].data_mut()[j] = base - step;
        let (minus, sig_minus) = eval(&work)?;
        work[i].data_mut()[j] = base;
        if sig_plus != signature || sig_minus != signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
    }
    Ok(report)
}

/// Every coordinate of every input.
pub fn all_coords(inputs: &[Tensor]) -> Vec<(usize, usize)> {
    inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect()
}
