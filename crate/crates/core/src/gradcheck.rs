//! Finite-difference gradient oracle. Only evaluates the objective, so it is
//! independent of any analytic gradient it is compared against.

use ndarray::Array2;

/// Step used by [`central_difference`].
pub const DEFAULT_STEP: f64 = 1e-4;

/// Five-point central difference of `f` at every entry of `x`.
pub fn central_difference(x: &Array2<f64>, step: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut probe = x.clone();
    let mut grad = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let base = x[[r, c]];
        let mut eval = |offset: f64| {
            probe[[r, c]] = base + offset;
            f(&probe)
        };
        let (p1, m1, p2, m2) = (eval(step), eval(-step), eval(2.0 * step), eval(-2.0 * step));
        probe[[r, c]] = base;
        grad[[r, c]] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
    }
    grad
}

/// Largest entrywise relative error, `|a - b| / max(|a|, |b|, floor)`.
///
/// `floor` keeps entries whose true value is essentially zero from dominating;
/// pass something well below the typical gradient magnitude.
pub fn max_relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.dim(), numeric.dim());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
