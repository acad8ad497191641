use std::sync::Arc;

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use super::{CityRasters, ConditionCube, MobilityMap};
use crate::error::{Error, Result};

/// One training example: an `l x l` window ending at slot `t_end`.
///
/// Samples are index records into a [`CityRasters`]; the condition cube and
/// target are materialized on demand so that tens of thousands of
/// overlapping windows do not each hold a copy of the rasters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub city_id: Arc<str>,
    pub window_origin: (usize, usize),
    pub t_end: usize,
    pub window: usize,
    pub horizon: usize,
}

impl Sample {
    pub fn t_start(&self) -> usize {
        self.t_end + 1 - self.horizon
    }

    /// Raw (unnormalized) conditions over slots `t_end - |T| + 1 ..= t_end`.
    pub fn conditions(&self, city: &CityRasters) -> ConditionCube {
        let (r, c) = self.window_origin;
        let l = self.window;
        let view = city.conditions.slice(s![
            self.t_start()..=self.t_end,
            ..,
            r..r + l,
            c..c + l
        ]);
        ConditionCube {
            values: view.mapv(f64::from),
            feature_names: city.feature_names.clone(),
            t_end: self.t_end,
        }
    }

    /// Observed mobility in the window at `slot`.
    pub fn mobility_at(&self, city: &CityRasters, slot: usize) -> Array2<f64> {
        let (r, c) = self.window_origin;
        let l = self.window;
        city.mobility
            .slice(s![slot, r..r + l, c..c + l])
            .mapv(f64::from)
    }

    pub fn target(&self, city: &CityRasters) -> MobilityMap {
        MobilityMap(self.mobility_at(city, self.t_end))
    }
}

/// Window origins stepping by `stride` from 0 while the window fits.
pub fn window_origins(rows: usize, cols: usize, l: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if l > rows.min(cols) {
        return Err(Error::WindowTooLarge { window: l, rows, cols });
    }
    if stride == 0 {
        return Err(Error::InvalidParam("stride must be positive".into()));
    }
    let rs: Vec<usize> = (0..=rows - l).step_by(stride).collect();
    let cs: Vec<usize> = (0..=cols - l).step_by(stride).collect();
    Ok(rs.iter().flat_map(|&r| cs.iter().map(move |&c| (r, c))).collect())
}

fn axis_cover(n: usize, l: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=n - l).step_by(stride).collect();
    if *v.last().unwrap() != n - l {
        v.push(n - l);
    }
    v
}

/// Like [`window_origins`] but adds border-flush windows so that every
/// cell is covered, as needed for full-grid estimation.
pub fn covering_origins(rows: usize, cols: usize, l: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if l > rows.min(cols) {
        return Err(Error::WindowTooLarge { window: l, rows, cols });
    }
    if stride == 0 {
        return Err(Error::InvalidParam("stride must be positive".into()));
    }
    let rs = axis_cover(rows, l, stride);
    let cs = axis_cover(cols, l, stride);
    Ok(rs.iter().flat_map(|&r| cs.iter().map(move |&c| (r, c))).collect())
}

/// Samples whose full span `t - |T| + 1 ..= t` lies in `slots`, ordered by
/// window origin (row-major) and then by end slot.
pub fn window_samples_in(
    city: &CityRasters,
    l: usize,
    horizon: usize,
    stride: usize,
    slots: std::ops::Range<usize>,
) -> Result<Vec<Sample>> {
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be positive".into()));
    }
    let origins = window_origins(city.grid.rows, city.grid.cols, l, stride)?;
    let end = slots.end.min(city.days());
    let first = slots.start + horizon - 1;
    let id: Arc<str> = Arc::from(city.city_id());
    let mut out = Vec::new();
    for origin in origins {
        for t in first..end {
            out.push(Sample {
                city_id: id.clone(),
                window_origin: origin,
                t_end: t,
                window: l,
                horizon,
            });
        }
    }
    Ok(out)
}

/// Every sample of a city: one per (window origin, end slot `t >= |T|-1`).
pub fn window_samples(city: &CityRasters, l: usize, horizon: usize, stride: usize) -> Result<Vec<Sample>> {
    if city.days() < horizon {
        return Err(Error::InsufficientHistory(format!(
            "{} has {} slots, need {horizon}",
            city.city_id(),
            city.days()
        )));
    }
    window_samples_in(city, l, horizon, stride, 0..city.days())
}

/// Condition tensor for an arbitrary window, as used at estimation time.
pub fn conditions_at(city: &CityRasters, origin: (usize, usize), t_end: usize, l: usize, horizon: usize) -> Array4<f64> {
    let (r, c) = origin;
    city.conditions
        .slice(s![t_end + 1 - horizon..=t_end, .., r..r + l, c..c + l])
        .mapv(f64::from)
}
