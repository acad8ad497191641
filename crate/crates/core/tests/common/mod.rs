//! Fixtures and independent oracles shared by the integration tests and
//! the acceptance run. Each `criterion_*` returns a one-line summary on
//! success and a reason on failure.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use chrono::{Days, NaiveDate};
use ndarray::{array, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stormgan::baselines::{historical_average, ridge_fit, smoothing_estimate, RIDGE_LAMBDA_GRID};
use stormgan::embed::{gcn_layer, Activation, GraphEncoder};
use stormgan::gradcheck::{central_difference, relative_error};
use stormgan::griddata::{partition_tasks, CityRasters, GridSpec, Normalizer, Task, TaskConfig};
use stormgan::metatrain::{meta_outer_update, MetaConfig, MetaState, Models, OuterOptimizer, TaskEnv};
use stormgan::metrics::{kl_divergence_binned, kl_probabilities, mae, rmse, KlDirection, KL_EPSILON};
use stormgan::nets::NetConfig;
use stormgan::params::ParamLayout;
use stormgan::protocol::{self, audit_leakage, Experiment, ExperimentConfig, FitSet, Method, Split};
use stormgan::seed;
use stormgan::sttg::{build_sttg_s1, build_sttg_s2, detect_stage, Edge, EdgeAttrs, FlightRule, S1City, S1Config, S2City, S2Config, Subgraph};
use stormgan::synthcity::world::{generate_world, World, WorldConfig};
use stormgan::ExecMode;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- fixtures

/// City with smooth deterministic rasters; `shift` offsets its mobility.
pub fn toy_city(id: &str, rows: usize, cols: usize, days: usize, k: usize, shift: f32) -> CityRasters {
    let start = NaiveDate::from_ymd_opt(2020, 2, 24).unwrap();
    CityRasters {
        grid: GridSpec::new(id, (40.0, -90.0), rows, cols).unwrap(),
        feature_names: Arc::from((0..k).map(|i| format!("f{i}")).collect::<Vec<_>>()),
        dates: (0..days).map(|d| start + Days::new(d as u64)).collect(),
        conditions: Array4::from_shape_fn((days, k, rows, cols), |(d, f, r, c)| {
            (((d * 1000 + f * 100 + r * 10 + c) as f32) * 0.37).cos()
        }),
        mobility: Array3::from_shape_fn((days, rows, cols), |(d, r, c)| (((d + r + c) as f32) * 0.1).sin().abs() * 5.0 + shift),
    }
}

/// Tiny networks (`l = 4, k = 2, u = 1, |T| = 3`) over two 10x10 cities.
pub struct Tiny {
    pub models: Models,
    pub cfg: MetaConfig,
    pub cities: BTreeMap<String, CityRasters>,
    pub norm: Normalizer,
    pub tasks: Vec<Task>,
}

impl Tiny {
    pub fn new(with_graph: bool) -> Self {
        let net = NetConfig::tiny();
        let cities: BTreeMap<String, CityRasters> = [("a", 0.0), ("b", 3.0)]
            .into_iter()
            .map(|(id, shift)| (id.to_string(), toy_city(id, 10, 10, 35, net.features, shift)))
            .collect();
        let parts: Vec<_> = cities.values().map(|c| (c, 0..35)).collect();
        let norm = Normalizer::fit(&parts).unwrap();
        let tcfg = TaskConfig { window: net.window, horizon: net.horizon, stride: 6, ..Default::default() };
        let tasks = cities.values().flat_map(|c| partition_tasks(c, &tcfg, 0).unwrap()).collect();
        let cfg = MetaConfig {
            alpha: 0.01,
            beta: 0.01,
            inner_d_steps: 1,
            inner_g_steps: 1,
            task_batch: 2,
            batch_size: 3,
            epochs: 2,
            recon_weight: 0.7,
            vgae_weight: 0.3,
            ..Default::default()
        };
        Self { models: Models::new(&net, with_graph), cfg, cities, norm, tasks }
    }

    pub fn env(&self) -> TaskEnv<'_> {
        TaskEnv { models: &self.models, cfg: &self.cfg, cities: &self.cities, norm: &self.norm }
    }
}

/// Four-node weighted subgraph with three node features.
pub fn four_node_subgraph() -> Subgraph {
    let edges = [(0, 1, 0.7), (1, 0, 0.7), (0, 2, 0.3), (2, 3, 1.0), (3, 0, 0.5)];
    let mut adjacency = Array2::zeros((4, 4));
    for &(s, d, w) in &edges {
        adjacency[[s, d]] = w;
    }
    Subgraph {
        center: "a".into(),
        node_ids: ["a", "b", "c", "d"].map(String::from).to_vec(),
        edges: edges.iter().map(|&(src, dst, weight)| Edge { src, dst, weight, attrs: EdgeAttrs::default() }).collect(),
        adjacency,
        features: array![[1.0, 0.2, 0.0], [2.0, -0.4, 1.0], [3.0, 0.9, 0.5], [1.0, 0.0, -1.0]],
    }
}

pub fn world(seed: u64) -> World {
    generate_world(&WorldConfig { seed, ..Default::default() }, ExecMode::Parallel)
}

pub fn rasters(w: &World) -> BTreeMap<String, CityRasters> {
    w.task_cities().map(|c| (c.city_id().to_string(), c.template.to_rasters())).collect()
}

pub fn desk_config() -> ExperimentConfig {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

// ------------------------------------------------------ graph fixtures

pub struct S2Fixture {
    pub cities: Vec<S2City>,
    pub flights: BTreeMap<(String, String), u32>,
    pub distances: BTreeMap<(String, String), f64>,
}

/// `n` cities with random airline counts, a complete distance table and
/// sparse direct flights, each pair stored once.
pub fn s2_fixture(seed: u64, n: usize) -> S2Fixture {
    let mut r = rng(seed);
    let cities: Vec<S2City> = (0..n)
        .map(|i| S2City { city_id: format!("c{i:02}"), airlines: r.random_range(0..200), stage: r.random_range(1..=3) })
        .collect();
    let mut flights = BTreeMap::new();
    let mut distances = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let key = (cities[i].city_id.clone(), cities[j].city_id.clone());
            distances.insert(key.clone(), r.random_range(20.0..2500.0));
            if r.random_bool(0.3) {
                flights.insert(key, r.random_range(1..40));
            }
        }
    }
    S2Fixture { cities, flights, distances }
}

fn lookup<V: Copy>(t: &BTreeMap<(String, String), V>, a: &str, b: &str) -> Option<V> {
    t.get(&(a.to_string(), b.to_string())).or_else(|| t.get(&(b.to_string(), a.to_string()))).copied()
}

/// Exhaustive scan of the S2 rule over ordered pairs.
pub fn s2_brute_force(f: &S2Fixture, cfg: &S2Config) -> BTreeSet<(usize, usize)> {
    let hub = |a: u32| a > cfg.hub_airlines;
    let tiered = |a: u32| a > cfg.second_tier_airlines;
    let mut out = BTreeSet::new();
    for (i, a) in f.cities.iter().enumerate() {
        for (j, b) in f.cities.iter().enumerate() {
            if i == j {
                continue;
            }
            let flights: u32 = lookup(&f.flights, &a.city_id, &b.city_id).unwrap_or(0);
            let d: f64 = lookup(&f.distances, &a.city_id, &b.city_id).unwrap();
            let pair_ok = match cfg.flight_rule {
                FlightRule::BothHubs => hub(a.airlines) && hub(b.airlines),
                FlightRule::HubToTiered => (hub(a.airlines) || hub(b.airlines)) && tiered(a.airlines) && tiered(b.airlines),
            };
            if (flights > 0 && pair_ok) || d <= cfg.proximity_km {
                out.insert((i, j));
            }
        }
    }
    out
}

/// `n` cities whose 20-bin histograms come from one of a few shapes plus
/// noise, so some pairs are close and others far apart.
pub fn s1_fixture(seed: u64, n: usize) -> Vec<S1City> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let centre = r.random_range(2.0..18.0);
            let spread = r.random_range(1.5..6.0);
            let histogram = (0..20)
                .map(|b| {
                    let z = (b as f64 - centre) / spread;
                    (1000.0 * (-0.5 * z * z).exp() * r.random_range(0.8..1.2)).floor()
                })
                .collect();
            S1City { city_id: format!("c{i:02}"), stage: r.random_range(1..=3), histogram }
        })
        .collect()
}

/// KL between two count histograms: each is normalized to probabilities,
/// smoothed by the metric's epsilon and renormalized, then summed directly.
pub fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let prob = |h: &[f64]| {
        let mass: f64 = h.iter().sum();
        let smoothed: Vec<f64> = h.iter().map(|v| v / mass + KL_EPSILON).collect();
        let total: f64 = smoothed.iter().sum();
        smoothed.into_iter().map(|v| v / total).collect::<Vec<_>>()
    };
    let (p, q) = (prob(p), prob(q));
    let mut kl = 0.0;
    for (a, b) in p.iter().zip(&q) {
        kl += a * (a.ln() - b.ln());
    }
    kl
}

/// KL between two nonnegative vectors after adding the metric's epsilon to
/// each entry and normalizing.
pub fn kl_oracle_probabilities(p: &[f64], q: &[f64]) -> f64 {
    let prob = |h: &[f64]| {
        let total: f64 = h.iter().map(|v| v + KL_EPSILON).sum();
        h.iter().map(|v| (v + KL_EPSILON) / total).collect::<Vec<_>>()
    };
    let (p, q) = (prob(p), prob(q));
    p.iter().zip(&q).map(|(a, b)| a * (a.ln() - b.ln())).sum()
}

pub fn s1_brute_force(cities: &[S1City], cfg: &S1Config) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..cities.len() {
        for j in 0..cities.len() {
            if i != j && kl_oracle(&cities[i].histogram, &cities[j].histogram) <= cfg.max_kl {
                out.insert((i, j));
            }
        }
    }
    out
}

/// Flat, mildly noisy case counts with weekly tripling from the first day
/// of `month` (30-day months).
pub fn planted_curve(seed: u64, month: usize, days: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let onset = month * 30;
    (0..days)
        .map(|d| {
            let base = 20.0 * r.random_range(0.9..1.1);
            if d >= onset {
                base * 3f64.powf((d - onset) as f64 / 7.0).min(1e9)
            } else {
                base
            }
        })
        .collect()
}

// ------------------------------------------------------ baseline oracles

pub fn random_mobility(seed: u64, days: usize, rows: usize, cols: usize) -> Array3<f32> {
    let mut r = rng(seed);
    Array3::from_shape_fn((days, rows, cols), |_| r.random_range(0.0..500.0f32).round())
}

pub fn ha_oracle(m: &Array3<f32>, t: usize) -> Array2<f64> {
    let (_, rows, cols) = m.dim();
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            out[[r, c]] = (m[[t - 7, r, c]] as f64 + m[[t - 14, r, c]] as f64) / 2.0;
        }
    }
    out
}

pub fn smoothing_oracle(m: &Array3<f32>, t: usize) -> Array2<f64> {
    let (_, rows, cols) = m.dim();
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let (mut sum, mut n) = (0.0, 0.0);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < rows as isize && cc < cols as isize {
                        sum += m[[t - 7, rr as usize, cc as usize]] as f64;
                        n += 1.0;
                    }
                }
            }
            out[[r as usize, c as usize]] = sum / n;
        }
    }
    out
}

/// `||(X'X + lambda I) w - X'y|| / ||X'y||`, computed with plain loops.
pub fn ridge_residual_oracle(x: &Array2<f64>, y: &[f64], w: &[f64], lambda: f64) -> f64 {
    let (n, p) = x.dim();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p {
        let mut xty = 0.0;
        for r in 0..n {
            xty += x[[r, i]] * y[r];
        }
        let mut lhs = lambda * w[i];
        for j in 0..p {
            let mut g = 0.0;
            for r in 0..n {
                g += x[[r, i]] * x[[r, j]];
            }
            lhs += g * w[j];
        }
        num += (lhs - xty).powi(2);
        den += xty * xty;
    }
    (num / den).sqrt()
}

// ------------------------------------------------------------ criteria

pub fn criterion_1() -> Check {
    let start = Instant::now();
    let f = Tiny::new(true);
    let env = f.env();
    let sub = four_node_subgraph();
    let (pg, pd) = f.models.init(4);
    let task = &f.tasks[0];
    let support = env.batch(&task.train[..3]).map_err(|e| e.to_string())?;
    let query = env.batch(&task.test[..3]).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let r0 = seed::rng(8, &[]);
    let (_, gd) = env.d_loss_grad(&pg, &pd, &support, Some(&sub), &mut r0.clone()).unwrap();
    let nd = central_difference(&pd, h, |q| env.d_loss_grad(&pg, q, &support, Some(&sub), &mut r0.clone()).unwrap().0);
    worst.push(("f_D", relative_error(&gd, &nd)));

    let (_, gg) = env.g_loss_grad(&pg, &pd, &support, Some(&sub), &mut r0.clone()).unwrap();
    let ng = central_difference(&pg, h, |q| env.g_loss_grad(q, &pd, &support, Some(&sub), &mut r0.clone()).unwrap().0.total);
    worst.push(("f_G", relative_error(&gg, &ng)));

    // Query objective at task-adapted parameters: the gradient the outer
    // step consumes.
    let (mut ag, mut ad) = (pg.clone(), pd.clone());
    let mut r1 = seed::rng(9, &[]);
    env.inner_update_d(&ag, &mut ad, &support, Some(&sub), f.cfg.alpha, &mut r1).unwrap();
    env.inner_update_g(&mut ag, &ad, &support, Some(&sub), f.cfg.alpha, &mut r1).unwrap();
    let (_, qd) = env.d_loss_grad(&ag, &ad, &query, Some(&sub), &mut r1.clone()).unwrap();
    let nqd = central_difference(&ad, h, |q| env.d_loss_grad(&ag, q, &query, Some(&sub), &mut r1.clone()).unwrap().0);
    worst.push(("query D", relative_error(&qd, &nqd)));
    let (_, qg) = env.g_loss_grad(&ag, &ad, &query, Some(&sub), &mut r1.clone()).unwrap();
    let nqg = central_difference(&ag, h, |q| env.g_loss_grad(q, &ad, &query, Some(&sub), &mut r1.clone()).unwrap().0.total);
    worst.push(("query G", relative_error(&qg, &nqg)));

    let mut layout = ParamLayout::new();
    let enc = GraphEncoder::new(&mut layout, "g", 3, 4, 3);
    let p: Vec<f64> = layout.init(&mut seed::rng(3, &[])).iter().map(|v| v * 0.5).collect();
    let eta = enc.sample_eta(4, &mut seed::rng(4, &[]));
    let cache = enc.encode(&p, &sub, Some(eta.clone()));
    let mut gv = vec![0.0; p.len()];
    enc.backward(&p, &sub, &cache, None, 1.0, &mut gv);
    let nv = central_difference(&p, h, |q| enc.loss(&sub, &enc.encode(q, &sub, Some(eta.clone()))));
    worst.push(("VGAE", relative_error(&gv, &nv)));

    let secs = start.elapsed().as_secs_f64();
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    ensure(worst.iter().all(|(_, e)| *e < 1e-4), || format!("relative error above 1e-4: {}", detail.join(", ")))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max relative errors {} in {secs:.1} s", detail.join(", ")))
}

pub fn criterion_2() -> Check {
    let mut f = Tiny::new(false);
    f.cfg.inner_d_steps = 0;
    f.cfg.inner_g_steps = 0;
    f.cfg.outer_optimizer = OuterOptimizer::Sgd;
    f.cfg.beta = 0.05;
    let env = f.env();
    let mut state = MetaState::new(&f.models, &f.cfg, 7);
    let before = state.clone();
    let task = &f.tasks[0];
    let out = env.run_task(&state, task, None, &mut seed::rng(1, &[])).map_err(|e| e.to_string())?;
    let mut r = seed::rng(1, &[]);
    let q = env.minibatch(&task.test, &mut r).unwrap();
    let (_, gd) = env.d_loss_grad(&before.theta_g, &before.theta_d, &q, None, &mut r).unwrap();
    let (_, gg) = env.g_loss_grad(&before.theta_g, &before.theta_d, &q, None, &mut r).unwrap();
    meta_outer_update(&mut state, &[out]).map_err(|e| e.to_string())?;
    let diff = |theta: &[f64], old: &[f64], g: &[f64]| {
        theta.iter().zip(old).zip(g).map(|((t, o), g)| (t - (o - 0.05 * g)).abs()).fold(0.0, f64::max)
    };
    let dg = diff(&state.theta_g, &before.theta_g, &gg);
    let dd = diff(&state.theta_d, &before.theta_d, &gd);
    ensure(dg.max(dd) <= 1e-10, || format!("max deviation G {dg:.1e}, D {dd:.1e}"))?;
    Ok(format!("max deviation from a plain step: G {dg:.1e}, D {dd:.1e}"))
}

pub fn criterion_3() -> Check {
    let mut r = rng(31);
    let x = Array2::from_shape_fn((6, 4), |_| r.random_range(-2.0..2.0));
    let w = Array2::from_shape_fn((4, 3), |_| r.random_range(-2.0..2.0));
    let got = gcn_layer(x.view(), Array2::zeros((6, 6)).view(), w.view(), Activation::Linear);
    let dense = (&got - &x.dot(&w)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(dense < 1e-12, || format!("empty adjacency deviates from dense by {dense:.1e}"))?;
    // Both nodes see (A + I) = ones with degree 2, so every entry of the
    // normalized operator is 1/2 and each output row is the mean of X.
    let x2 = array![[1.0, 2.0], [3.0, 4.0]];
    let a2 = array![[0.0, 1.0], [1.0, 0.0]];
    let got2 = gcn_layer(x2.view(), a2.view(), Array2::<f64>::eye(2).view(), Activation::Linear);
    let hand = array![[2.0, 3.0], [2.0, 3.0]];
    let two = (&got2 - &hand).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(two < 1e-10, || format!("2-node case off by {two:.1e}"))?;
    Ok(format!("dense reduction {dense:.1e}, 2-node hand case {two:.1e}"))
}

pub fn criterion_4() -> Check {
    let mut s2_edges = 0;
    for seed in 0..10 {
        let f = s2_fixture(seed, 50);
        for rule in [FlightRule::BothHubs, FlightRule::HubToTiered] {
            let cfg = S2Config { flight_rule: rule, ..Default::default() };
            let g = build_sttg_s2(&f.cities, &f.flights, &f.distances, &cfg).map_err(|e| e.to_string())?;
            let brute = s2_brute_force(&f, &cfg);
            ensure(g.edge_set() == brute, || format!("S2 fixture {seed} {rule:?}: {} vs {} arcs", g.edge_set().len(), brute.len()))?;
            s2_edges += brute.len();
        }
    }
    let mut s1_edges = 0;
    for seed in 0..10 {
        let cities = s1_fixture(seed, 50);
        for max_kl in [0.05, 0.5, 2.0] {
            let cfg = S1Config { max_kl, ..Default::default() };
            let g = build_sttg_s1(&cities, &cfg).map_err(|e| e.to_string())?;
            let brute = s1_brute_force(&cities, &cfg);
            ensure(g.edge_set() == brute, || format!("S1 fixture {seed} max_kl {max_kl}: {} vs {} arcs", g.edge_set().len(), brute.len()))?;
            s1_edges += brute.len();
        }
    }
    let mut planted = 0;
    for seed in 0..50u64 {
        let month = (seed % 8) as usize;
        let s = detect_stage(&planted_curve(seed, month, 245)).map_err(|e| e.to_string())?;
        ensure(s.month == Some(month), || format!("curve {seed}: planted month {month}, detected {:?}", s.month))?;
        planted += 1;
    }
    let w = world(2020);
    for c in &w.cities {
        let s = detect_stage(&c.template.epidemic_curve).map_err(|e| e.to_string())?;
        ensure(s.month == Some(c.template.planted_month), || {
            format!("{}: planted month {}, detected {:?}", c.city_id(), c.template.planted_month, s.month)
        })?;
        planted += 1;
    }
    Ok(format!("{s2_edges} S2 and {s1_edges} S1 arcs match exhaustive scans; {planted}/{planted} planted months recovered"))
}

pub fn criterion_5() -> Check {
    let mut cells = 0;
    for seed in 0..20 {
        let (rows, cols) = (3 + seed as usize % 7, 2 + seed as usize % 9);
        let m = random_mobility(seed, 28, rows, cols);
        for t in 14..28 {
            let ha = historical_average(m.view(), t).map_err(|e| e.to_string())?;
            ensure(ha == ha_oracle(&m, t), || format!("HA differs on fixture {seed} day {t}"))?;
            let sm = smoothing_estimate(m.view(), t).map_err(|e| e.to_string())?;
            ensure(sm == smoothing_oracle(&m, t), || format!("smoothing differs on fixture {seed} day {t}"))?;
            cells += rows * cols;
        }
    }
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x = Array2::from_shape_fn((120, 14), |_| r.random_range(-3.0..3.0));
        let y: Vec<f64> = (0..120).map(|_| r.random_range(-10.0..10.0)).collect();
        for lambda in RIDGE_LAMBDA_GRID {
            let w = ridge_fit(x.view(), ndarray::ArrayView1::from(&y), lambda).map_err(|e| e.to_string())?;
            worst = worst.max(ridge_residual_oracle(&x, &y, w.as_slice().unwrap(), lambda));
        }
    }
    ensure(worst < 1e-8, || format!("ridge normal-equation residual {worst:.1e}"))?;
    Ok(format!("HA and smoothing exact on {cells} cell-days; ridge residual {worst:.1e}"))
}

pub fn criterion_6() -> Check {
    let mut r = rng(61);
    for i in 0..1000 {
        let n = r.random_range(1..60);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..100.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..100.0)).collect();
        let (e_r, e_m) = (rmse(&a, &b).unwrap(), mae(&a, &b).unwrap());
        ensure(e_r >= e_m, || format!("fixture {i}: RMSE {e_r} < MAE {e_m}"))?;
    }
    let mut self_kl = 0.0f64;
    for _ in 0..100 {
        let v: Vec<f64> = (0..200).map(|_| r.random_range(0.0..1000.0)).collect();
        for bins in [5, 10, 20, 30] {
            for dir in [KlDirection::GeneratedToReal, KlDirection::RealToGenerated] {
                self_kl = self_kl.max(kl_divergence_binned(&v, &v, bins, dir).unwrap().abs());
            }
        }
    }
    ensure(self_kl < 1e-6, || format!("self-divergence {self_kl:.1e}"))?;
    let kl = kl_probabilities(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
    ensure((kl - 0.3681).abs() < 1e-3, || format!("KL((0.9,0.1)||(0.5,0.5)) = {kl:.4}"))?;
    Ok(format!("RMSE >= MAE on 1000 fixtures; max self-divergence {self_kl:.1e}; KL case {kl:.4} nats"))
}

/// Held-out results of one training seed.
pub struct SeedResult {
    pub seed: u64,
    pub rmse: BTreeMap<Method, f64>,
}

pub fn replication(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<(Vec<SeedResult>, f64), String> {
    let start = Instant::now();
    let w = generate_world(&cfg.world, ExecMode::Parallel);
    let cities = rasters(&w);
    let graph = w.s2_graph(&cfg.graph.s2).map_err(|e| e.to_string())?;
    let ex = Experiment::new(cfg, &cities, Some(&graph), ExecMode::Parallel).map_err(|e| e.to_string())?;
    let methods = [Method::Ha, Method::Cgan, Method::Storm, Method::StormNograph, Method::StormUnadapted];
    let mut out = Vec::new();
    for &seed in seeds {
        let rep = ex.run(seed, &methods).map_err(|e| e.to_string())?;
        let rmse = methods.iter().map(|&m| (m, rep.rmse(m).unwrap())).collect();
        out.push(SeedResult { seed, rmse });
    }
    Ok((out, start.elapsed().as_secs_f64()))
}

pub fn median_of(results: &[SeedResult], m: Method) -> f64 {
    protocol::median(&results.iter().map(|r| r.rmse[&m]).collect::<Vec<_>>()).unwrap()
}

pub fn criterion_7(results: &[SeedResult], secs: f64) -> Check {
    let med = |m| median_of(results, m);
    let (storm, cgan, ha, nograph) = (med(Method::Storm), med(Method::Cgan), med(Method::Ha), med(Method::StormNograph));
    let per_seed: Vec<String> = results
        .iter()
        .map(|r| format!("seed {} storm {:.2} nograph {:.2} cgan {:.2}", r.seed, r.rmse[&Method::Storm], r.rmse[&Method::StormNograph], r.rmse[&Method::Cgan]))
        .collect();
    let detail = format!(
        "median RMSE storm(S2) {storm:.3}, storm without graph {nograph:.3}, cGAN {cgan:.3}, HA {ha:.3} [{}]; {:.1} min on {} core(s)",
        per_seed.join("; "),
        secs / 60.0,
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    ensure(storm < cgan && storm < ha && storm <= nograph && nograph <= cgan, || detail.clone())?;
    Ok(detail)
}

pub fn criterion_8(results: &[SeedResult]) -> Check {
    let (adapted, unadapted) = (median_of(results, Method::Storm), median_of(results, Method::StormUnadapted));
    let per_seed: Vec<String> = results
        .iter()
        .map(|r| format!("seed {} {:.2} vs {:.2}", r.seed, r.rmse[&Method::Storm], r.rmse[&Method::StormUnadapted]))
        .collect();
    let detail = format!("median RMSE adapted {adapted:.3} vs meta-initialization {unadapted:.3} [{}]", per_seed.join("; "));
    ensure(adapted < unadapted, || detail.clone())?;
    Ok(detail)
}

pub fn criterion_9() -> Check {
    let mut cfg = ExperimentConfig::default();
    cfg.meta.epochs = 3;
    cfg.meta.adapt_steps = 5;
    cfg.cgan.steps = 20;
    let w = world(cfg.world.seed);
    let cities = rasters(&w);
    let graph = w.s2_graph(&cfg.graph.s2).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let methods = [Method::Ridge, Method::Cgan, Method::Storm, Method::StormNograph];
    let mut outputs = Vec::new();
    for (i, mode) in [ExecMode::Parallel, ExecMode::Sequential, ExecMode::Parallel].into_iter().enumerate() {
        let ex = Experiment::new(&cfg, &cities, Some(&graph), mode).map_err(|e| e.to_string())?;
        let rep = ex.run(5, &methods).map_err(|e| e.to_string())?;
        let p = dir.path().join(format!("metrics{i}.csv"));
        protocol::write_metrics_csv(&rep.metrics, &p).map_err(|e| e.to_string())?;
        let k = dir.path().join(format!("kl{i}.csv"));
        protocol::write_kl_csv(&rep.kl, &k).map_err(|e| e.to_string())?;
        let bits: Vec<u64> = rep
            .histories
            .values()
            .flatten()
            .flat_map(|h| [h.d_loss, h.g_adv, h.recon, h.vgae])
            .map(f64::to_bits)
            .collect();
        outputs.push((bits, std::fs::read(&p).unwrap(), std::fs::read(&k).unwrap()));
    }
    ensure(outputs.iter().all(|o| *o == outputs[0]), || "histories or metric CSVs differ between runs".into())?;
    Ok(format!(
        "3 runs (parallel, sequential, parallel) agree bitwise on {} loss values and {} bytes of CSV",
        outputs[0].0.len(),
        outputs[0].1.len() + outputs[0].2.len()
    ))
}

pub fn criterion_10() -> Check {
    let mut audited = 0;
    for world_seed in [2020, 7] {
        let cfg = ExperimentConfig { world: WorldConfig { seed: world_seed, ..Default::default() }, ..Default::default() };
        let w = generate_world(&cfg.world, ExecMode::Parallel);
        let cities = rasters(&w);
        for test in cities.keys() {
            let pcfg = protocol::ProtocolConfig { test_city: test.clone(), ..cfg.protocol.clone() };
            let split = Split::new(&pcfg, &cities).map_err(|e| e.to_string())?;
            let n = &cfg.net;
            let adapt = protocol::samples_ending_in(&cities[test], n.window, n.horizon, pcfg.estimate_stride, split.adapt_days.clone())
                .map_err(|e| e.to_string())?;
            let adapt_days: Vec<usize> = adapt.iter().map(|s| s.t_end).collect();
            let ridge_days: Vec<usize> = split.adapt_days.clone().collect();
            for seed in 0..3 {
                let tasks = protocol::training_tasks(&cities, &split, &cfg.tasks, seed).map_err(|e| e.to_string())?;
                let fits = [
                    FitSet { label: "adaptation", city: test, days: adapt_days.clone() },
                    FitSet { label: "ridge", city: test, days: ridge_days.clone() },
                ];
                audit_leakage(&split, &tasks, &fits).map_err(|e| format!("world {world_seed}, test {test}: {e}"))?;
                // The audit itself must notice a planted leak.
                let mut leaky = tasks.clone();
                leaky[0].test[0].t_end = split.eval_days.start + 2;
                ensure(audit_leakage(&split, &leaky, &[]).is_err(), || "planted task leak not detected".into())?;
                let bad = [FitSet { label: "adaptation", city: test, days: vec![split.eval_days.start] }];
                ensure(audit_leakage(&split, &[], &bad).is_err(), || "planted adaptation leak not detected".into())?;
                audited += 1;
            }
        }
    }
    Ok(format!("{audited} splits over 2 corpora pass; planted leaks are caught"))
}
