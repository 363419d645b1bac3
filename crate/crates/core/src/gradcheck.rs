//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Relative error between an analytic and a numeric derivative, guarded
/// against tiny denominators: |a - n| / max(1e-8, |a| + |n|).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compare `analytic` against central differences of `f` at `theta`,
/// perturbing one coordinate at a time by +-h. Returns the worst relative
/// error over all coordinates.
pub fn finite_diff_check<F>(mut f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if theta.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "finite_diff_check: {} parameters but {} analytic entries",
            theta.len(),
            analytic.len()
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Contract(format!("finite_diff_check: bad step {h}")));
    }
    let mut th = theta.to_vec();
    let mut max_err: f64 = 0.0;
    for i in 0..th.len() {
        let orig = th[i];
        th[i] = orig + h;
        let fp = f(&th)?;
        th[i] = orig - h;
        let fm = f(&th)?;
        th[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_check: f produced {fp} / {fm} at coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        max_err = max_err.max(relative_error(analytic[i], numeric));
    }
    Ok(max_err)
}
