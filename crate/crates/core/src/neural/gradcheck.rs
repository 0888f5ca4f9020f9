//! Finite-difference gradient checking.

/// Central differences `(f(θ + εe_i) − f(θ − εe_i)) / 2ε` for every coordinate.
pub fn central_difference<F>(f: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over coordinates. The floor
/// keeps coordinates whose true gradient is ~0 from dominating.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-6;
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}
