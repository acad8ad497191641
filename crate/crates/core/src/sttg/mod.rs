//! Spatio-temporal task graph over cities, built either from mobility
//! distribution similarity (S1) or from airline links and proximity (S2),
//! plus 1-hop subgraph sampling for the task embedding.

pub mod build;
pub mod io;
pub mod stage;

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_sttg_s1, build_sttg_s2, mobility_histograms, FlightRule, S1City, S1Config, S2City, S2Config};
pub use stage::{detect_stage, StageInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    S1,
    #[default]
    S2,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Self::S1),
            "s2" => Ok(Self::S2),
            _ => Err(Error::InvalidParam(format!("unknown scenario {s:?}; expected s1 or s2"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Hub,
    SecondTier,
    None,
}

impl Tier {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Tier::Hub => [1.0, 0.0, 0.0],
            Tier::SecondTier => [0.0, 1.0, 0.0],
            Tier::None => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub city_id: String,
    pub stage: u8,
    pub tier: Tier,
    /// Feature row used as `X` by the graph encoder.
    pub attrs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flights: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
}

/// Directed edge between node indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    #[serde(default)]
    pub attrs: EdgeAttrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub scenario: Scenario,
    pub nodes: Vec<TaskNode>,
    pub edges: Vec<Edge>,
}

impl TaskGraph {
    pub fn index_of(&self, city_id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.city_id == city_id)
    }

    pub fn node(&self, city_id: &str) -> Option<&TaskNode> {
        self.index_of(city_id).map(|i| &self.nodes[i])
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.attrs.len())
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.src, e.dst)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if seen.insert(n.city_id.as_str(), i).is_some() {
                return Err(Error::InvalidParam(format!("duplicate node id {}", n.city_id)));
            }
            if !(1..=3).contains(&n.stage) {
                return Err(Error::InvalidParam(format!("{} has stage {}", n.city_id, n.stage)));
            }
            if n.attrs.len() != self.feature_dim() || n.attrs.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam(format!("{} has malformed attributes", n.city_id)));
            }
        }
        for e in &self.edges {
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() {
                return Err(Error::InvalidParam(format!("edge {}->{} has a missing endpoint", e.src, e.dst)));
            }
            if e.src == e.dst {
                return Err(Error::InvalidParam(format!("self edge on node {}", e.src)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::InvalidParam(format!("edge {}->{} weight {}", e.src, e.dst, e.weight)));
            }
        }
        Ok(())
    }

    /// Out- and in-neighbours of node `i`, ascending and without `i`.
    pub fn neighbors(&self, i: usize) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.src == i {
                    Some(e.dst)
                } else if e.dst == i {
                    Some(e.src)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Induced subgraph on a city and its 1-hop neighbourhood, with the
    /// centre at row 0 and the rest in graph order.
    pub fn subgraph_1hop(&self, city_id: &str) -> Result<Subgraph> {
        let c = self
            .index_of(city_id)
            .ok_or_else(|| Error::UnknownCity(city_id.to_string()))?;
        let mut order = vec![c];
        order.extend(self.neighbors(c));
        let local: HashMap<usize, usize> = order.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let n = order.len();
        let mut adjacency = Array2::zeros((n, n));
        let mut edges = Vec::new();
        for e in &self.edges {
            if let (Some(&s), Some(&d)) = (local.get(&e.src), local.get(&e.dst)) {
                adjacency[[s, d]] = e.weight;
                edges.push(Edge { src: s, dst: d, ..e.clone() });
            }
        }
        let dim = self.feature_dim();
        let features = Array2::from_shape_fn((n, dim), |(r, f)| self.nodes[order[r]].attrs[f]);
        Ok(Subgraph {
            center: city_id.to_string(),
            node_ids: order.iter().map(|&g| self.nodes[g].city_id.clone()).collect(),
            edges,
            adjacency,
            features,
        })
    }
}

/// A centre city with its 1-hop neighbourhood. Row 0 is the centre.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub center: String,
    pub node_ids: Vec<String>,
    /// Edges in local indices.
    pub edges: Vec<Edge>,
    /// Weighted adjacency, `A[i][j]` = weight of `i -> j`.
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// 0/1 adjacency of existing edges, including zero-weight ones.
    pub fn binary_adjacency(&self) -> Array2<f64> {
        let n = self.len();
        let mut a = Array2::zeros((n, n));
        for e in &self.edges {
            a[[e.src, e.dst]] = 1.0;
        }
        a
    }

    /// Single node with no edges, for cities absent from every graph.
    pub fn isolated(center: &str, features: Vec<f64>) -> Self {
        let dim = features.len();
        Self {
            center: center.to_string(),
            node_ids: vec![center.to_string()],
            edges: Vec::new(),
            adjacency: Array2::zeros((1, 1)),
            features: Array2::from_shape_vec((1, dim), features).expect("row vector"),
        }
    }
}
