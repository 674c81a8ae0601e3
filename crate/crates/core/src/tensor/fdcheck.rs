//! Central finite-difference gradient checking.
//!
//! Test support: compares analytic gradients from the tape against
//! `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate. The relative error
//! uses `|a| + |n|` as denominator with a small floor so near-zero gradients
//! do not blow the ratio up on rounding noise.

use super::params::ParamSet;

/// Largest relative disagreement between `analytic` and the central
/// difference of `f` over the coordinates of `x`.
pub fn max_rel_err_vec(
    analytic: &[f64],
    x: &mut [f64],
    mut f: impl FnMut(&[f64]) -> f64,
    h: f64,
) -> f64 {
    assert_eq!(analytic.len(), x.len());
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + h;
        let up = f(x);
        x[k] = orig - h;
        let down = f(x);
        x[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[k], numeric));
    }
    worst
}

/// Relative error with a floor: `|a - n| / max(|a| + |n|, 1e-3)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Worst relative error over every scalar of every parameter entry.
///
/// `loss_fn` must rebuild the forward pass from the parameter set on each
/// call; `analytic` holds one gradient vector per entry, aligned with
/// `params.entries()`.
pub fn max_rel_err_params(
    params: &mut ParamSet,
    analytic: &[Vec<f64>],
    mut loss_fn: impl FnMut(&ParamSet) -> f64,
    h: f64,
) -> (f64, String) {
    assert_eq!(analytic.len(), params.len());
    let mut worst = 0.0;
    let mut worst_at = String::new();
    for i in 0..params.len() {
        for k in 0..analytic[i].len() {
            let orig = params.entries()[i].data[k];
            params.entries_mut()[i].data[k] = orig + h;
            let up = loss_fn(params);
            params.entries_mut()[i].data[k] = orig - h;
            let down = loss_fn(params);
            params.entries_mut()[i].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[i][k], numeric);
            if e > worst {
                worst = e;
                worst_at = format!("{}[{}]", params.entries()[i].name, k);
            }
        }
    }
    (worst, worst_at)
}
