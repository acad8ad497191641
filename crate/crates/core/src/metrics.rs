//! Error metrics and histogram KL divergence.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin counts of the KL-vs-bins sweep.
pub const KL_BIN_SWEEP: [usize; 6] = [5, 10, 15, 20, 25, 30];

/// Smoothing mass added to every bin before normalization.
pub const KL_EPSILON: f64 = 1e-9;

fn check_same(est: &[f64], truth: &[f64]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::shape("estimate vs truth", truth.len(), est.len()));
    }
    if est.is_empty() {
        return Err(Error::Empty("metric input".into()));
    }
    Ok(())
}

pub fn mae(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_same(est, truth)?;
    let n = est.len() as f64;
    Ok(est.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

pub fn rmse(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_same(est, truth)?;
    let n = est.len() as f64;
    Ok((est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt())
}

/// Which histogram sits in the numerator of the KL sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(generated || real)
    #[default]
    GeneratedToReal,
    /// KL(real || generated)
    RealToGenerated,
}

/// KL divergence between two probability vectors, both smoothed by
/// [`KL_EPSILON`] and renormalized.
pub fn kl_probabilities(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("histogram bins", p.len(), q.len()));
    }
    let p = smooth(p)?;
    let q = smooth(q)?;
    Ok(p.iter()
        .zip(&q)
        .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum())
}

fn smooth(h: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = h.iter().map(|v| v + KL_EPSILON).sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Empty("histogram mass".into()));
    }
    Ok(h.iter().map(|v| (v + KL_EPSILON) / s).collect())
}

/// Equal-width histogram counts on `[lo, hi]`, last bin closed.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let mut b = ((v - lo) / width).floor() as isize;
        if b >= bins as isize {
            b = bins as isize - 1;
        }
        if b < 0 {
            b = 0;
        }
        h[b as usize] += 1.0;
    }
    h
}

/// Binned KL divergence between generated and real cell values over a
/// shared equal-width binning of the pooled range.
pub fn kl_divergence_binned(
    generated: &[f64],
    real: &[f64],
    n_bins: usize,
    direction: KlDirection,
) -> Result<f64> {
    if n_bins < 2 {
        return Err(Error::InvalidParam(format!("n_bins must be >= 2, got {n_bins}")));
    }
    if generated.is_empty() || real.is_empty() {
        return Err(Error::Empty("KL population".into()));
    }
    let (lo, hi) = generated
        .iter()
        .chain(real)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        log::warn!("degenerate value range for KL divergence; returning 0");
        return Ok(0.0);
    }
    let g = histogram(generated, lo, hi, n_bins);
    let r = histogram(real, lo, hi, n_bins);
    match direction {
        KlDirection::GeneratedToReal => kl_probabilities(&g, &r),
        KlDirection::RealToGenerated => kl_probabilities(&r, &g),
    }
}

/// KL divergence for each bin count in `bins`.
pub fn kl_sweep(
    generated: &[f64],
    real: &[f64],
    bins: &[usize],
    direction: KlDirection,
) -> Result<Vec<(usize, f64)>> {
    bins.iter()
        .map(|&b| Ok((b, kl_divergence_binned(generated, real, b, direction)?)))
        .collect()
}

/// Averages overlapping `l x l` window estimates into a full-grid map.
pub fn aggregate_windows(
    rows: usize,
    cols: usize,
    windows: &[((usize, usize), Array2<f64>)],
) -> Result<Array2<f64>> {
    let mut sum = Array2::<f64>::zeros((rows, cols));
    let mut count = Array2::<u32>::zeros((rows, cols));
    for ((r0, c0), est) in windows {
        let (h, w) = est.dim();
        if r0 + h > rows || c0 + w > cols {
            return Err(Error::Grid(format!(
                "window at ({r0}, {c0}) of size {h}x{w} exceeds {rows}x{cols}"
            )));
        }
        for i in 0..h {
            for j in 0..w {
                sum[[r0 + i, c0 + j]] += est[[i, j]];
                count[[r0 + i, c0 + j]] += 1;
            }
        }
    }
    for ((r, c), &n) in count.indexed_iter() {
        if n == 0 {
            return Err(Error::UncoveredCell { row: r, col: c });
        }
        sum[[r, c]] /= n as f64;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_error_on_identity() {
        let t = [1.0, 5.0, 2.0];
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let t = [1.0, 5.0, 2.0, 0.0];
        let e: Vec<f64> = t.iter().map(|v| v + 3.0).collect();
        assert!((mae(&e, &t).unwrap() - 3.0).abs() < 1e-12);
        assert!((rmse(&e, &t).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn random_pair_matches_scalar_recompute() {
        let mut rng = crate::seed::rng(3, &[]);
        use rand::Rng;
        let a: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for i in 0..50 {
            s1 += (a[i] - b[i]).abs();
            s2 += (a[i] - b[i]).powi(2);
        }
        assert!((mae(&a, &b).unwrap() - s1 / 50.0).abs() < 1e-12);
        assert!((rmse(&a, &b).unwrap() - (s2 / 50.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kl_two_bin_case() {
        // 0.9 ln(0.9/0.5) + 0.1 ln(0.1/0.5)
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        let gen: Vec<f64> = [0.0; 9].iter().chain(&[1.0]).copied().collect();
        let real = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let kl = kl_divergence_binned(&gen, &real, 2, KlDirection::GeneratedToReal).unwrap();
        assert!((kl - expected).abs() < 1e-6);
        assert!((kl - 0.3681).abs() < 1e-3);
    }

    #[test]
    fn kl_identical_is_zero_and_sweep_length() {
        let x: Vec<f64> = (0..100).map(|i| (i % 17) as f64).collect();
        let sweep = kl_sweep(&x, &x, &KL_BIN_SWEEP, KlDirection::default()).unwrap();
        assert_eq!(sweep.len(), KL_BIN_SWEEP.len());
        assert!(sweep.iter().all(|(_, v)| v.abs() < 1e-6));
    }

    #[test]
    fn kl_degenerate_range_is_zero() {
        assert_eq!(
            kl_divergence_binned(&[2.0, 2.0], &[2.0], 5, KlDirection::default()).unwrap(),
            0.0
        );
        assert!(kl_divergence_binned(&[1.0], &[2.0], 1, KlDirection::default()).is_err());
    }

    #[test]
    fn aggregate_overlap_mean() {
        let a = Array2::from_elem((2, 2), 2.0);
        let b = Array2::from_elem((2, 2), 4.0);
        let full = aggregate_windows(2, 3, &[((0, 0), a), ((0, 1), b)]).unwrap();
        assert_eq!(full[[0, 0]], 2.0);
        assert_eq!(full[[0, 1]], 3.0);
        assert_eq!(full[[1, 2]], 4.0);
    }

    #[test]
    fn aggregate_reports_uncovered_cell() {
        let a = Array2::from_elem((2, 2), 1.0);
        let err = aggregate_windows(2, 3, &[((0, 0), a)]).unwrap_err();
        assert!(matches!(err, Error::UncoveredCell { row: 0, col: 2 }));
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(v in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let m = mae(&a, &b).unwrap();
            let r = rmse(&a, &b).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert!(r + 1e-12 >= m);
        }

        #[test]
        fn kl_nonnegative(a in proptest::collection::vec(0.0f64..10.0, 1..30),
                          b in proptest::collection::vec(0.0f64..10.0, 1..30),
                          bins in 2usize..30) {
            let kl = kl_divergence_binned(&a, &b, bins, KlDirection::default()).unwrap();
            prop_assert!(kl >= -1e-12);
        }

        #[test]
        fn aggregation_ignores_window_order(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut rng = crate::seed::rng(seed, &[]);
            let mut ws: Vec<((usize, usize), Array2<f64>)> = Vec::new();
            for r in [0usize, 2, 4] {
                for c in [0usize, 3, 5] {
                    ws.push(((r, c), Array2::from_shape_fn((4, 4), |(i, j)| (seed as f64) + (i * 4 + j + r + c) as f64)));
                }
            }
            let a = aggregate_windows(8, 9, &ws).unwrap();
            ws.shuffle(&mut rng);
            let b = aggregate_windows(8, 9, &ws).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
