//! Central-difference gradient checking.

use crate::error::{Error, Result};

/// Compare an analytic gradient against central finite differences of `f`
/// at `point`, component by component. Returns the worst relative error
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
///
/// `f` must be a pure function of its argument; it is evaluated twice per
/// component.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(Error::Shape {
            context: "grad check",
            expected: format!("{} gradient components", point.len()),
            got: analytic.len().to_string(),
        });
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon { eps: epsilon });
    }
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + epsilon;
        let up = f(&probe);
        probe[i] = point[i] - epsilon;
        let down = f(&probe);
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
