//! Comparison methods: historical average, 3x3 spatial smoothing, ridge
//! regression on the condition features, a fully connected conditional
//! GAN, and the ablation report.

pub mod ablation;
pub mod cgan;
pub mod ridge;

use ndarray::{Array2, ArrayView2, ArrayView3};

use crate::error::{Error, Result};

pub use ablation::{ablation_report, AblationRow, Variant};
pub use cgan::{Cgan, CganConfig, CganState};
pub use ridge::{ridge_fit, ridge_predict, RidgeModel, RIDGE_LAMBDA_GRID};

/// Days between the same weekday in consecutive weeks.
pub const WEEK: usize = 7;

/// Mean of `M^{t-7}` and `M^{t-14}` at one cell.
pub fn historical_average_cell(mobility: ArrayView3<f32>, cell: (usize, usize), t: usize) -> Result<f64> {
    if t < 2 * WEEK || t >= mobility.dim().0 + WEEK {
        return Err(Error::InsufficientHistory(format!("day {t} needs days {} and {}", t as isize - 7, t as isize - 14)));
    }
    let (r, c) = cell;
    Ok((mobility[[t - WEEK, r, c]] as f64 + mobility[[t - 2 * WEEK, r, c]] as f64) / 2.0)
}

/// Historical-average estimate of the whole grid for day `t`. Day `t`
/// itself need not be present.
pub fn historical_average(mobility: ArrayView3<f32>, t: usize) -> Result<Array2<f64>> {
    let (_, rows, cols) = mobility.dim();
    historical_average_cell(mobility, (0, 0), t)?;
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        (mobility[[t - WEEK, r, c]] as f64 + mobility[[t - 2 * WEEK, r, c]] as f64) / 2.0
    }))
}

/// Mean over the 3x3 neighbourhood of `cell`, truncated at the borders.
pub fn spatial_smoothing_cell(prev: ArrayView2<f64>, cell: (usize, usize)) -> f64 {
    let (rows, cols) = prev.dim();
    let (r, c) = cell;
    let (r0, r1) = (r.saturating_sub(1), (r + 1).min(rows - 1));
    let (c0, c1) = (c.saturating_sub(1), (c + 1).min(cols - 1));
    let mut sum = 0.0;
    for i in r0..=r1 {
        for j in c0..=c1 {
            sum += prev[[i, j]];
        }
    }
    sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64
}

pub fn spatial_smoothing(prev: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(prev.dim(), |cell| spatial_smoothing_cell(prev, cell))
}

/// Smoothed map of the same weekday one week before `t`.
pub fn smoothing_estimate(mobility: ArrayView3<f32>, t: usize) -> Result<Array2<f64>> {
    if t < WEEK || t - WEEK >= mobility.dim().0 {
        return Err(Error::InsufficientHistory(format!("day {t} needs day {}", t as isize - 7)));
    }
    let prev = mobility.index_axis(ndarray::Axis(0), t - WEEK).mapv(|v| v as f64);
    Ok(spatial_smoothing(prev.view()))
}
