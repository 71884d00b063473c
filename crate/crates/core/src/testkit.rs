//! Test support: finite-difference oracles and small fixtures.
//!
//! The finite-difference path is deliberately independent of the autograd
//! engine — it only re-evaluates forward closures — so it can serve as the
//! oracle for reverse-mode gradients.

use crate::tensor::{Elem, Param};

/// Relative disagreement between an analytic and a numeric derivative.
/// Coordinates where both values are below the noise floor count as exact.
pub fn grad_rel_err(analytic: Elem, numeric: Elem) -> Elem {
    let m = analytic.abs().max(numeric.abs());
    if m < 1e-6 {
        0.0
    } else {
        (analytic - numeric).abs() / m
    }
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[Elem]) -> Elem, x: &[Elem], i: usize, h: Elem) -> Elem {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] -= 2.0 * h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Result of a parameter-space gradient check.
#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: Elem,
    pub worst: Option<(String, usize, Elem, Elem)>, // (param, coord, analytic, numeric)
}

impl GradCheckReport {
    pub fn ok(&self, tol: Elem) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic parameter gradients against central differences of a
/// loss closure. `loss_fn` must rebuild the forward pass from the current
/// parameter values. `coords` lists `(param index, coordinate)` pairs to
/// probe. Parameters are restored afterwards.
pub fn check_param_grads(
    params: &[Param],
    loss_fn: &mut dyn FnMut() -> Elem,
    analytic: &[Vec<Elem>],
    coords: &[(usize, usize)],
    h: Elem,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for &(pi, ci) in coords {
        let p = &params[pi];
        let original = p.value().data().to_vec();

        let mut plus = original.clone();
        plus[ci] += h;
        p.set_data(plus);
        let fp = loss_fn();

        let mut minus = original.clone();
        minus[ci] -= h;
        p.set_data(minus);
        let fm = loss_fn();

        p.set_data(original);

        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[pi][ci];
        let err = grad_rel_err(a, numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((p.name().to_string(), ci, a, numeric));
        }
    }
    report
}
