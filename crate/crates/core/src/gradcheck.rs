//! Central finite differences, used to verify the hand-written backward
//! passes.

/// Central-difference gradient of `loss` at `params`.
pub fn central_difference<F>(params: &[f64], step: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    let mut out = vec![0.0; p.len()];
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p);
        p[i] = orig - step;
        let down = loss(&p);
        p[i] = orig;
        out[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `|a - b|_2 / max(|a|_2, |b|_2)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = crate::params::l2_norm(analytic).max(crate::params::l2_norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
