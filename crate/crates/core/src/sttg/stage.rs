//! Outbreak stage from the month in which exponential case growth first
//! appears.

use crate::error::{Error, Result};
use crate::griddata::DAYS_PER_WEEK;

pub const DAYS_PER_MONTH: usize = 30;
/// Mean week-over-week growth factor that counts as exponential growth.
pub const GROWTH_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageInfo {
    pub stage: u8,
    /// Month of first exponential growth, if any.
    pub month: Option<usize>,
}

/// Mean week-over-week growth factor per month. A week belongs to the month
/// containing its first day; week 0 has no predecessor and is skipped.
pub fn monthly_growth(curve: &[f64]) -> Vec<Option<f64>> {
    let weeks: Vec<f64> = curve
        .chunks_exact(DAYS_PER_WEEK)
        .map(|w| w.iter().sum())
        .collect();
    let months = curve.len().div_ceil(DAYS_PER_MONTH);
    let mut acc = vec![(0.0, 0usize); months];
    for w in 1..weeks.len() {
        let (prev, cur) = (weeks[w - 1], weeks[w]);
        let ratio = if prev > 0.0 {
            cur / prev
        } else if cur > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        let m = w * DAYS_PER_WEEK / DAYS_PER_MONTH;
        acc[m].0 += ratio;
        acc[m].1 += 1;
    }
    acc.into_iter()
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

/// Stage 1, 2 or 3 by which third of the study span holds the first month
/// with mean weekly growth above [`GROWTH_THRESHOLD`]; 3 if there is none.
pub fn detect_stage(curve: &[f64]) -> Result<StageInfo> {
    if curve.len() < 3 * DAYS_PER_MONTH {
        return Err(Error::InsufficientHistory(format!(
            "epidemic curve has {} days, need at least {}",
            curve.len(),
            3 * DAYS_PER_MONTH
        )));
    }
    if curve.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite {
            what: "epidemic curve value".into(),
            stage: "stage detection".into(),
        });
    }
    if curve.iter().all(|&v| v == 0.0) {
        log::warn!("all-zero epidemic curve; assigning stage 3");
        return Ok(StageInfo { stage: 3, month: None });
    }
    let growth = monthly_growth(curve);
    let months = growth.len();
    let month = growth
        .iter()
        .position(|g| matches!(g, Some(v) if *v > GROWTH_THRESHOLD));
    let stage = match month {
        Some(m) => (1 + 3 * m / months).min(3) as u8,
        None => 3,
    };
    Ok(StageInfo { stage, month })
}
