//! Central-difference gradient checking for any loss built on the tape.

use crate::layers::Param;
use crate::{NnError, Real};

/// Outcome of a gradient check: the worst relative error and where it was.
#[derive(Clone, Copy, Debug)]
pub struct FdReport<F> {
    pub max_rel_err: F,
    pub worst_param: usize,
    pub worst_index: usize,
}

/// Compares the tape gradient of `loss` against central finite
/// differences, returning the maximum relative error over every entry of
/// every parameter.
///
/// `loss(params, want_grad)` must rebuild its graph from `params` each
/// call, return the scalar loss, and when `want_grad` is set leave
/// accumulated gradients in the parameters. The closure has to be
/// deterministic: it is evaluated twice at the initial point and any
/// discrepancy is reported as a contract violation. Relative error is
/// `|ad - fd| / (|fd| + 1e-8)`.
pub fn finite_diff_check<F: Real>(
    params: &mut [Param<F>],
    mut loss: impl FnMut(&mut [Param<F>], bool) -> Result<F, NnError>,
    eps: F,
) -> Result<FdReport<F>, NnError> {
    for p in params.iter_mut() {
        p.zero_grad();
    }
    let l0 = loss(params, true)?;
    let l0_again = loss(params, false)?;
    if l0 != l0_again {
        return Err(NnError::Contract(format!(
            "loss is not deterministic: {l0} vs {l0_again} at the same point"
        )));
    }
    let grads: Vec<Vec<F>> = params.iter().map(|p| p.grad.clone()).collect();

    let floor = F::from_f64(1e-8);
    let two = F::from_f64(2.0);
    let mut report = FdReport { max_rel_err: F::zero(), worst_param: 0, worst_index: 0 };
    for pi in 0..params.len() {
        for k in 0..params[pi].numel() {
            let x = params[pi].value[k];
            params[pi].value[k] = x + eps;
            let lp = loss(params, false)?;
            params[pi].value[k] = x - eps;
            let lm = loss(params, false)?;
            params[pi].value[k] = x;
            let fd = (lp - lm) / (two * eps);
            let rel = (grads[pi][k] - fd).abs() / (fd.abs() + floor);
            if rel > report.max_rel_err {
                report = FdReport { max_rel_err: rel, worst_param: pi, worst_index: k };
            }
        }
    }
    Ok(report)
}
