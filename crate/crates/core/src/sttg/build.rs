use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeAttrs, Scenario, TaskGraph, TaskNode, Tier};
use crate::error::{Error, Result};
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S1Config {
    pub bins: usize,
    /// Arcs are added when the divergence is at most this value.
    pub max_kl: f64,
}

impl Default for S1Config {
    fn default() -> Self {
        Self { bins: 20, max_kl: 0.5 }
    }
}

/// One S1 node: a mobility histogram on the shared binning.
#[derive(Debug, Clone, PartialEq)]
pub struct S1City {
    pub city_id: String,
    pub stage: u8,
    pub histogram: Vec<f64>,
}

/// Histograms of each city's cell values over a shared equal-width binning
/// of the pooled value range.
pub fn mobility_histograms(values: &[&[f64]], bins: usize) -> Result<Vec<Vec<f64>>> {
    if bins < 2 {
        return Err(Error::InvalidParam(format!("bins must be >= 2, got {bins}")));
    }
    let (lo, hi) = values
        .iter()
        .flat_map(|v| v.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return Err(Error::EmptyHistogram("no mobility values".into()));
    }
    let hi = if hi > lo { hi } else { lo + 1.0 };
    Ok(values.iter().map(|v| metrics::histogram(v, lo, hi, bins)).collect())
}

fn normalized(city: &S1City) -> Result<Vec<f64>> {
    let mass: f64 = city.histogram.iter().sum();
    if !(mass > 0.0) || city.histogram.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::EmptyHistogram(city.city_id.clone()));
    }
    Ok(city.histogram.iter().map(|v| v / mass).collect())
}

/// S1: arc `i -> j` weighted by `KL(P_i || P_j)` whenever it is at most
/// `max_kl`. Node features are `[stage, mean, variance]` of the histogram
/// over bin positions scaled to `[0, 1]`.
pub fn build_sttg_s1(cities: &[S1City], cfg: &S1Config) -> Result<TaskGraph> {
    let probs: Vec<Vec<f64>> = cities.iter().map(normalized).collect::<Result<_>>()?;
    let nodes = cities
        .iter()
        .zip(&probs)
        .map(|(c, p)| {
            let bins = p.len().max(2) as f64;
            let pos = |b: usize| b as f64 / (bins - 1.0);
            let mean: f64 = p.iter().enumerate().map(|(b, w)| w * pos(b)).sum();
            let var: f64 = p.iter().enumerate().map(|(b, w)| w * (pos(b) - mean).powi(2)).sum();
            TaskNode {
                city_id: c.city_id.clone(),
                stage: c.stage,
                tier: Tier::None,
                attrs: vec![c.stage as f64, mean, var],
            }
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..cities.len() {
        for j in 0..cities.len() {
            if i == j {
                continue;
            }
            let kl = metrics::kl_probabilities(&probs[i], &probs[j])?;
            if kl <= cfg.max_kl {
                edges.push(Edge {
                    src: i,
                    dst: j,
                    weight: kl,
                    attrs: EdgeAttrs { kl: Some(kl), ..Default::default() },
                });
            }
        }
    }
    let g = TaskGraph { scenario: Scenario::S1, nodes, edges };
    g.validate()?;
    Ok(g)
}

/// Which pairs the direct-flight rule may connect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightRule {
    /// Both endpoints are hubs.
    #[default]
    BothHubs,
    /// At least one hub, the other a hub or second-tier city.
    HubToTiered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S2Config {
    pub proximity_km: f64,
    /// Hubs have strictly more airlines than this.
    pub hub_airlines: u32,
    /// Second-tier cities have strictly more airlines than this.
    pub second_tier_airlines: u32,
    /// Weight of arcs added by proximity alone.
    pub proximity_weight: f64,
    pub flight_rule: FlightRule,
}

impl Default for S2Config {
    fn default() -> Self {
        Self {
            proximity_km: 500.0,
            hub_airlines: 100,
            second_tier_airlines: 35,
            proximity_weight: 0.5,
            flight_rule: FlightRule::BothHubs,
        }
    }
}

impl S2Config {
    pub fn tier(&self, airlines: u32) -> Tier {
        if airlines > self.hub_airlines {
            Tier::Hub
        } else if airlines > self.second_tier_airlines {
            Tier::SecondTier
        } else {
            Tier::None
        }
    }

    pub fn flight_pair(&self, a: Tier, b: Tier) -> bool {
        match self.flight_rule {
            FlightRule::BothHubs => a == Tier::Hub && b == Tier::Hub,
            FlightRule::HubToTiered => {
                (a == Tier::Hub || b == Tier::Hub) && a != Tier::None && b != Tier::None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2City {
    pub city_id: String,
    pub airlines: u32,
    pub stage: u8,
}

/// Symmetric lookup in a pair table keyed by either order.
pub fn pair_value<V: Copy>(table: &BTreeMap<(String, String), V>, a: &str, b: &str) -> Option<V> {
    table
        .get(&(a.to_string(), b.to_string()))
        .or_else(|| table.get(&(b.to_string(), a.to_string())))
        .copied()
}

/// S2: arc `i -> j` when both ends qualify for the flight rule and have a
/// direct flight, or when they lie within `proximity_km`.
pub fn build_sttg_s2(
    cities: &[S2City],
    direct_flights: &BTreeMap<(String, String), u32>,
    distances_km: &BTreeMap<(String, String), f64>,
    cfg: &S2Config,
) -> Result<TaskGraph> {
    for ((a, b), d) in distances_km {
        if let Some(r) = distances_km.get(&(b.clone(), a.clone())) {
            if r != d {
                return Err(Error::InvalidParam(format!("asymmetric distance {a}-{b}: {d} vs {r}")));
            }
        }
        if !d.is_finite() || *d < 0.0 {
            return Err(Error::InvalidParam(format!("distance {a}-{b} is {d}")));
        }
    }
    let tiers: Vec<Tier> = cities.iter().map(|c| cfg.tier(c.airlines)).collect();
    let mut arcs = Vec::new();
    for (i, a) in cities.iter().enumerate() {
        for (j, b) in cities.iter().enumerate() {
            if i == j {
                continue;
            }
            let flights = pair_value(direct_flights, &a.city_id, &b.city_id).unwrap_or(0);
            let dist = pair_value(distances_km, &a.city_id, &b.city_id);
            let by_flight = flights > 0 && cfg.flight_pair(tiers[i], tiers[j]);
            let by_proximity = dist.is_some_and(|d| d <= cfg.proximity_km);
            if !(by_flight || by_proximity) {
                continue;
            }
            let dist = dist.ok_or_else(|| Error::MissingDistance(a.city_id.clone(), b.city_id.clone()))?;
            arcs.push((i, j, flights, dist));
        }
    }
    let max_flights = arcs.iter().map(|a| a.2).max().unwrap_or(0).max(1) as f64;
    let edges: Vec<Edge> = arcs
        .iter()
        .map(|&(src, dst, flights, dist)| Edge {
            src,
            dst,
            weight: if flights > 0 { flights as f64 / max_flights } else { cfg.proximity_weight },
            attrs: EdgeAttrs { kl: None, flights: Some(flights), distance_km: Some(dist) },
        })
        .collect();
    let mut totals = vec![0.0f64; cities.len()];
    for e in &edges {
        totals[e.src] += e.attrs.flights.unwrap_or(0) as f64;
    }
    let max_total = totals.iter().cloned().fold(0.0, f64::max).max(1.0);
    let nodes = cities
        .iter()
        .zip(&tiers)
        .zip(&totals)
        .map(|((c, &tier), &total)| {
            let mut attrs = vec![c.stage as f64, total / max_total];
            attrs.extend(tier.one_hot());
            TaskNode { city_id: c.city_id.clone(), stage: c.stage, tier, attrs }
        })
        .collect();
    let g = TaskGraph { scenario: Scenario::S2, nodes, edges };
    g.validate()?;
    Ok(g)
}
