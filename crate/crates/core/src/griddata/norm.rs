//! Per-feature z-scoring of conditions and a global mobility scale, both
//! fitted on training data only.

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use super::CityRasters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Mobility values are divided by this before entering the networks.
    pub mobility_scale: f64,
}

impl Normalizer {
    /// Fits statistics over `(city, slot range)` pairs.
    pub fn fit(parts: &[(&CityRasters, std::ops::Range<usize>)]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Empty("normalizer input".into()))?.0;
        let k = first.features();
        let mut sum = vec![0.0f64; k];
        let mut sq = vec![0.0f64; k];
        let mut n = 0usize;
        let mut msum = 0.0f64;
        let mut mn = 0usize;
        for (city, range) in parts {
            if city.features() != k {
                return Err(Error::shape("normalizer features", k, city.features()));
            }
            let cond = city.conditions.slice(s![range.clone(), .., .., ..]);
            for (f, layer) in cond.axis_iter(Axis(1)).enumerate() {
                for &v in layer.iter() {
                    let v = v as f64;
                    sum[f] += v;
                    sq[f] += v * v;
                }
            }
            n += cond.len() / k;
            let mob = city.mobility.slice(s![range.clone(), .., ..]);
            msum += mob.iter().map(|&v| v as f64).sum::<f64>();
            mn += mob.len();
        }
        if n == 0 || mn == 0 {
            return Err(Error::Empty("normalizer input slots".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-8 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mobility_scale = (msum / mn as f64).max(1e-6);
        Ok(Self {
            feature_names: first.feature_names.to_vec(),
            mean,
            std,
            mobility_scale,
        })
    }

    pub fn identity(feature_names: &[String]) -> Self {
        Self {
            feature_names: feature_names.to_vec(),
            mean: vec![0.0; feature_names.len()],
            std: vec![1.0; feature_names.len()],
            mobility_scale: 1.0,
        }
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn feature(&self, f: usize, v: f64) -> f64 {
        (v - self.mean[f]) / self.std[f]
    }

    #[inline]
    pub fn to_model(&self, mobility: f64) -> f64 {
        mobility / self.mobility_scale
    }

    #[inline]
    pub fn from_model(&self, scaled: f64) -> f64 {
        scaled * self.mobility_scale
    }

    pub fn check_compatible(&self, city: &CityRasters) -> Result<()> {
        if city.feature_names.as_ref() != self.feature_names.as_slice() {
            return Err(Error::InvalidParam(format!(
                "{} has features {:?}, model expects {:?}",
                city.city_id(),
                city.feature_names,
                self.feature_names
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::griddata::window::tests::blank_city;

    #[test]
    fn normalized_features_are_standard() {
        let city = blank_city("a", 10, 10, 14, 2);
        let n = Normalizer::fit(&[(&city, 0..14)]).unwrap();
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut cnt = 0.0;
        for v in city.conditions.index_axis(Axis(1), 1).iter() {
            let z = n.feature(1, *v as f64);
            s1 += z;
            s2 += z * z;
            cnt += 1.0;
        }
        assert!((s1 / cnt).abs() < 1e-9);
        assert!((s2 / cnt - 1.0).abs() < 1e-9);
        assert!((n.from_model(n.to_model(42.0)) - 42.0).abs() < 1e-12);
    }

    #[test]
    fn fit_uses_only_requested_slots() {
        let city = blank_city("a", 10, 10, 14, 1);
        let a = Normalizer::fit(&[(&city, 0..7)]).unwrap();
        let b = Normalizer::fit(&[(&city, 0..14)]).unwrap();
        assert!(a.mean[0] < b.mean[0]);
    }
}
