use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::griddata::{CityRasters, Normalizer};

/// Candidate penalties for validation.
pub const RIDGE_LAMBDA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// `w = (X^T X + lambda I)^{-1} X^T y`.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParam(format!("ridge penalty must be positive, got {lambda}")));
    }
    if x.nrows() != y.len() {
        return Err(Error::shape("ridge targets", x.nrows(), y.len()));
    }
    let d = x.ncols();
    let mut gram = x.t().dot(&x);
    for i in 0..d {
        gram[[i, i]] += lambda;
    }
    let rhs = x.t().dot(&y);
    let a = DMatrix::from_fn(d, d, |i, j| gram[[i, j]]);
    let b = DVector::from_iterator(d, rhs.iter().copied());
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NonFinite { what: "ridge normal matrix".into(), stage: "cholesky".into() })?;
    Ok(Array1::from_iter(chol.solve(&b).iter().copied()))
}

pub fn ridge_predict(x: ArrayView2<f64>, w: ArrayView1<f64>) -> Array1<f64> {
    x.dot(&w)
}

/// `||(X^T X + lambda I) w - X^T y|| / ||X^T y||`.
pub fn normal_equation_residual(x: ArrayView2<f64>, y: ArrayView1<f64>, w: ArrayView1<f64>, lambda: f64) -> f64 {
    let xty = x.t().dot(&y);
    let lhs = x.t().dot(&x.dot(&w)) + &w.mapv(|v| v * lambda);
    let num = (&lhs - &xty).mapv(|v| v * v).sum().sqrt();
    num / xty.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE)
}

/// Ridge on centred features and targets, with the intercept restored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub lambda: f64,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    pub weights: Vec<f64>,
}

impl RidgeModel {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("ridge design".into()));
        }
        let x_mean = x.mean_axis(Axis(0)).expect("rows");
        let y_mean = y.mean().expect("rows");
        let xc = &x - &x_mean;
        let yc = &y - y_mean;
        let w = ridge_fit(xc.view(), yc.view(), lambda)?;
        Ok(Self { lambda, x_mean: x_mean.to_vec(), y_mean, weights: w.to_vec() })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let xm = Array1::from(self.x_mean.clone());
        let w = Array1::from(self.weights.clone());
        (&x - &xm).dot(&w) + self.y_mean
    }

    /// Fits every penalty on `train`, keeps the one with the lowest RMSE on
    /// `valid`, and refits it on both. Returns the model and the
    /// validation score of each penalty.
    pub fn select(
        train: (ArrayView2<f64>, ArrayView1<f64>),
        valid: (ArrayView2<f64>, ArrayView1<f64>),
        grid: &[f64],
    ) -> Result<(Self, Vec<(f64, f64)>)> {
        let mut scores = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let m = Self::fit(train.0, train.1, lambda)?;
            let pred = m.predict(valid.0);
            let rmse = crate::metrics::rmse(pred.as_slice().expect("fresh"), valid.1.to_vec().as_slice())?;
            scores.push((lambda, rmse));
        }
        let best = scores
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Empty("ridge penalty grid".into()))?
            .0;
        let x = ndarray::concatenate(Axis(0), &[train.0, valid.0]).expect("same width");
        let y = ndarray::concatenate(Axis(0), &[train.1, valid.1]).expect("vectors");
        Ok((Self::fit(x.view(), y.view(), best)?, scores))
    }
}

/// Per-cell design rows for day `t`: the normalized condition features of
/// the cell over slots `t - horizon + 1 ..= t`, in row-major cell order.
pub fn cell_features(city: &CityRasters, norm: &Normalizer, t: usize, horizon: usize) -> Result<Array2<f64>> {
    if t + 1 < horizon || t >= city.days() {
        return Err(Error::InsufficientHistory(format!("{}: day {t} with {horizon} slots", city.city_id())));
    }
    let k = city.features();
    let (rows, cols) = (city.grid.rows, city.grid.cols);
    let block = city.conditions.slice(s![t + 1 - horizon..=t, .., .., ..]);
    Ok(Array2::from_shape_fn((rows * cols, horizon * k), |(cell, j)| {
        let (ti, f) = (j / k, j % k);
        norm.feature(f, block[[ti, f, cell / cols, cell % cols]] as f64)
    }))
}

/// Stacked design rows and raw targets over `days`.
pub fn design(city: &CityRasters, norm: &Normalizer, days: &[usize], horizon: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut xs = Vec::with_capacity(days.len());
    let mut ys = Vec::new();
    for &t in days {
        xs.push(cell_features(city, norm, t, horizon)?);
        ys.extend(city.mobility.index_axis(Axis(0), t).iter().map(|&v| v as f64));
    }
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).map_err(|_| Error::Empty("ridge days".into()))?;
    Ok((x, Array1::from(ys)))
}
