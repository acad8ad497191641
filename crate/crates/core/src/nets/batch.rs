use ndarray::{s, Array2, Array4, Array5, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::NetConfig;
use crate::error::{Error, Result};
use crate::griddata::{CityRasters, Normalizer, Sample};

/// Materialized model inputs for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Normalized conditions, `(B, |T|, k, l, l)`.
    pub cond: Array5<f64>,
    /// Scaled mobility of the `|T| - 1` slots before the target, `(B, |T|-1, l, l)`.
    pub history: Array4<f64>,
    /// Scaled target maps, `(B, l*l)`.
    pub target: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.cond.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.cond.dim().3
    }

    /// Gathers samples from `lookup(city_id)`.
    pub fn from_samples<'a, F>(lookup: F, samples: &[Sample], norm: &Normalizer) -> Result<Self>
    where
        F: Fn(&str) -> Option<&'a CityRasters>,
    {
        let first = samples.first().ok_or_else(|| Error::Empty("sample batch".into()))?;
        let (t, l) = (first.horizon, first.window);
        let k = norm.features();
        let b = samples.len();
        let mut cond = Array5::zeros((b, t, k, l, l));
        let mut history = Array4::zeros((b, t - 1, l, l));
        let mut target = Array2::zeros((b, l * l));
        for (i, smp) in samples.iter().enumerate() {
            if smp.horizon != t || smp.window != l {
                return Err(Error::shape("sample extent", t * 1000 + l, smp.horizon * 1000 + smp.window));
            }
            let city = lookup(&smp.city_id).ok_or_else(|| Error::UnknownCity(smp.city_id.to_string()))?;
            if city.features() != k {
                return Err(Error::shape("condition features", k, city.features()));
            }
            let (r0, c0) = smp.window_origin;
            let t0 = smp.t_start();
            let raw = city.conditions.slice(s![t0..=smp.t_end, .., r0..r0 + l, c0..c0 + l]);
            let mut dst = cond.index_axis_mut(Axis(0), i);
            for ((ti, f, r, c), v) in raw.indexed_iter() {
                dst[[ti, f, r, c]] = norm.feature(f, *v as f64);
            }
            let mob = city.mobility.slice(s![t0..=smp.t_end, r0..r0 + l, c0..c0 + l]);
            for ((ti, r, c), v) in mob.indexed_iter() {
                let v = norm.to_model(*v as f64);
                if ti + 1 < t {
                    history[[i, ti, r, c]] = v;
                } else {
                    target[[i, r * l + c]] = v;
                }
            }
        }
        Ok(Self { cond, history, target })
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            cond: self.cond.select(Axis(0), rows),
            history: self.history.select(Axis(0), rows),
            target: self.target.select(Axis(0), rows),
        }
    }
}

/// I.i.d. standard normal noise `(B, |T|, u, l, l)`.
pub fn sample_noise<R: rand::Rng + ?Sized>(batch: usize, cfg: &NetConfig, rng: &mut R) -> Array5<f64> {
    Array5::from_shape_simple_fn((batch, cfg.horizon, cfg.noise, cfg.window, cfg.window), || {
        StandardNormal.sample(rng)
    })
}
