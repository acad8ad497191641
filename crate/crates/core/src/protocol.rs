//! Held-out-city evaluation: the train/adapt/evaluate split, a leakage
//! audit, full-grid estimates of the evaluation week for every method, and
//! the metric tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use ndarray::{s, Array2, Array5, Axis};
use serde::{Deserialize, Serialize};

use crate::baselines::{self, ridge, Cgan, CganConfig, RidgeModel, RIDGE_LAMBDA_GRID};
use crate::error::{Error, Result};
use crate::griddata::tasks::TaskConfig;
use crate::griddata::window::window_origins;
use crate::griddata::{covering_origins, partition_tasks, CityRasters, Normalizer, Sample, Task, DAYS_PER_WEEK};
use crate::metatrain::{self, EpochLog, MetaConfig, MetaState, Models, TaskEnv};
use crate::metrics::{self, KlDirection, KL_BIN_SWEEP};
use crate::nets::{Batch, NetConfig};
use crate::par::ExecMode;
use crate::seed::{self, Rng};
use crate::sttg::{build::S1Config, build::S2Config, Scenario, Subgraph, TaskGraph};
use crate::synthcity::world::WorldConfig;

const STREAM_TASKS: u64 = 10;
const STREAM_ADAPT: u64 = 11;
const STREAM_ESTIMATE: u64 = 12;
const STREAM_CGAN: u64 = 13;
const STREAM_MODEL: u64 = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub test_city: String,
    /// Zero-based week whose seven days are estimated.
    pub eval_week: usize,
    /// Weeks immediately before the evaluation week used for adaptation.
    pub adapt_weeks: usize,
    /// Window stride of full-grid estimates and of adaptation samples.
    pub estimate_stride: usize,
    pub kl_bins: Vec<usize>,
    pub kl_direction: KlDirection,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            test_city: "metro00".into(),
            eval_week: 34,
            adapt_weeks: 2,
            estimate_stride: 5,
            kl_bins: KL_BIN_SWEEP.to_vec(),
            kl_direction: KlDirection::GeneratedToReal,
        }
    }
}

/// Task graph fed to the generator, or none for the graph-free variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphChoice {
    S1,
    #[default]
    S2,
    None,
}

impl GraphChoice {
    pub fn scenario(self) -> Option<Scenario> {
        match self {
            GraphChoice::S1 => Some(Scenario::S1),
            GraphChoice::S2 => Some(Scenario::S2),
            GraphChoice::None => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GraphChoice::S1 => "s1",
            GraphChoice::S2 => "s2",
            GraphChoice::None => "none",
        }
    }
}

impl std::str::FromStr for GraphChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(GraphChoice::S1),
            "s2" => Ok(GraphChoice::S2),
            "none" => Ok(GraphChoice::None),
            _ => Err(Error::InvalidParam(format!("unknown scenario {s:?}; expected s1, s2 or none"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub scenario: GraphChoice,
    pub s1: S1Config,
    pub s2: S2Config,
}

/// Every tunable of an experiment, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training seed: task shuffles, initialization, minibatches and noise.
    pub seed: u64,
    pub world: WorldConfig,
    pub tasks: TaskConfig,
    pub graph: GraphConfig,
    pub net: NetConfig,
    pub meta: MetaConfig,
    pub cgan: CganConfig,
    pub protocol: ProtocolConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            tasks: TaskConfig::default(),
            graph: GraphConfig::default(),
            net: NetConfig::default(),
            meta: MetaConfig::default(),
            cgan: CganConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

/// Estimation methods of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ha,
    Smoothing,
    Ridge,
    Cgan,
    /// Meta-trained with the graph embedding, then adapted.
    Storm,
    /// Meta-trained with a zero embedding, then adapted.
    StormNograph,
    /// Meta-initialization with the graph embedding, not adapted.
    StormUnadapted,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ha,
        Method::Smoothing,
        Method::Ridge,
        Method::Cgan,
        Method::Storm,
        Method::StormNograph,
        Method::StormUnadapted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ha => "ha",
            Method::Smoothing => "smoothing",
            Method::Ridge => "ridge",
            Method::Cgan => "cgan",
            Method::Storm => "storm",
            Method::StormNograph => "storm_nograph",
            Method::StormUnadapted => "storm_unadapted",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::InvalidParam(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Day ranges of the held-out evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test_city: String,
    pub train_cities: Vec<String>,
    pub adapt_days: Range<usize>,
    pub eval_days: Range<usize>,
}

impl Split {
    pub fn new(cfg: &ProtocolConfig, cities: &BTreeMap<String, CityRasters>) -> Result<Self> {
        let test = cities.get(&cfg.test_city).ok_or_else(|| Error::UnknownCity(cfg.test_city.clone()))?;
        if cfg.adapt_weeks == 0 || cfg.adapt_weeks > cfg.eval_week {
            return Err(Error::InvalidParam(format!(
                "need 1..={} adaptation weeks before week {}, got {}",
                cfg.eval_week, cfg.eval_week, cfg.adapt_weeks
            )));
        }
        let eval_days = cfg.eval_week * DAYS_PER_WEEK..(cfg.eval_week + 1) * DAYS_PER_WEEK;
        if eval_days.end > test.days() {
            return Err(Error::InsufficientHistory(format!(
                "{} has {} days; week {} ends on day {}",
                cfg.test_city,
                test.days(),
                cfg.eval_week,
                eval_days.end
            )));
        }
        Ok(Self {
            test_city: cfg.test_city.clone(),
            train_cities: cities.keys().filter(|c| **c != cfg.test_city).cloned().collect(),
            adapt_days: (cfg.eval_week - cfg.adapt_weeks) * DAYS_PER_WEEK..eval_days.start,
            eval_days,
        })
    }

    /// First day that may not appear as a training or adaptation target.
    pub fn cutoff(&self) -> usize {
        self.eval_days.start
    }
}

/// Tasks of the training cities over the weeks before the evaluation week.
pub fn training_tasks(cities: &BTreeMap<String, CityRasters>, split: &Split, tcfg: &TaskConfig, seed: u64) -> Result<Vec<Task>> {
    let cfg = TaskConfig { weeks_total: tcfg.weeks_total.min(split.cutoff() / DAYS_PER_WEEK), ..tcfg.clone() };
    let mut tasks = Vec::new();
    for id in &split.train_cities {
        tasks.extend(partition_tasks(&cities[id], &cfg, seed::derive(seed, &[STREAM_TASKS]))?);
    }
    if tasks.is_empty() {
        return Err(Error::Empty("training tasks".into()));
    }
    Ok(tasks)
}

/// Normalizer fitted on the training cities before the cutoff.
pub fn fit_normalizer(cities: &BTreeMap<String, CityRasters>, split: &Split) -> Result<Normalizer> {
    let parts: Vec<_> = split.train_cities.iter().map(|id| (&cities[id], 0..split.cutoff())).collect();
    Normalizer::fit(&parts)
}

/// Samples whose target day lies in `ends`; their earlier slots may
/// precede the range.
pub fn samples_ending_in(city: &CityRasters, l: usize, horizon: usize, stride: usize, ends: Range<usize>) -> Result<Vec<Sample>> {
    if ends.start + 1 < horizon || ends.end > city.days() {
        return Err(Error::InsufficientHistory(format!(
            "{}: targets {ends:?} with {horizon} slots over {} days",
            city.city_id(),
            city.days()
        )));
    }
    let id: Arc<str> = Arc::from(city.city_id());
    let origins = window_origins(city.grid.rows, city.grid.cols, l, stride)?;
    Ok(origins
        .into_iter()
        .flat_map(|o| ends.clone().map(move |t| (o, t)))
        .map(|(window_origin, t_end)| Sample { city_id: id.clone(), window_origin, t_end, window: l, horizon })
        .collect())
}

/// Target days used to fit a method, labelled for the audit.
pub struct FitSet<'a> {
    pub label: &'a str,
    pub city: &'a str,
    pub days: Vec<usize>,
}

/// Fails if any training or adaptation target falls in the evaluation
/// week, or if the held-out city contributes to meta-training.
pub fn audit_leakage(split: &Split, tasks: &[Task], fits: &[FitSet<'_>]) -> Result<()> {
    for t in tasks {
        if *t.city_id == *split.test_city {
            return Err(Error::Leakage(format!("held-out city {} has training task {}", split.test_city, t.task_id)));
        }
        for s in t.train.iter().chain(&t.test) {
            if split.eval_days.contains(&s.t_end) {
                return Err(Error::Leakage(format!("task {} has a target on day {}", t.task_id, s.t_end)));
            }
        }
    }
    for f in fits {
        if let Some(d) = f.days.iter().find(|d| **d >= split.cutoff()) {
            return Err(Error::Leakage(format!("{} fits on {} day {d}, on or after day {}", f.label, f.city, split.cutoff())));
        }
    }
    Ok(())
}

/// Normalized condition cubes of the given windows, `(B, |T|, k, l, l)`.
pub fn window_conditions(city: &CityRasters, norm: &Normalizer, origins: &[(usize, usize)], t_end: usize, l: usize, horizon: usize) -> Array5<f64> {
    let k = city.features();
    let mut out = Array5::zeros((origins.len(), horizon, k, l, l));
    let t0 = t_end + 1 - horizon;
    for (i, &(r0, c0)) in origins.iter().enumerate() {
        let raw = city.conditions.slice(s![t0..=t_end, .., r0..r0 + l, c0..c0 + l]);
        let mut dst = out.index_axis_mut(Axis(0), i);
        for ((ti, f, r, c), v) in raw.indexed_iter() {
            dst[[ti, f, r, c]] = norm.feature(f, *v as f64);
        }
    }
    out
}

/// Full-grid estimate of one day from window estimates in model units,
/// averaged over overlaps and rescaled to visit counts.
pub fn estimate_grid<F>(city: &CityRasters, norm: &Normalizer, net: &NetConfig, stride: usize, day: usize, mut f: F) -> Result<Array2<f64>>
where
    F: FnMut(&Array5<f64>) -> Result<Array2<f64>>,
{
    let l = net.window;
    let origins = covering_origins(city.grid.rows, city.grid.cols, l, stride)?;
    let cond = window_conditions(city, norm, &origins, day, l, net.horizon);
    let maps = f(&cond)?;
    let windows: Vec<_> = origins
        .iter()
        .zip(maps.rows())
        .map(|(&o, row)| (o, row.to_owned().into_shape_with_order((l, l)).expect("l*l row")))
        .collect();
    Ok(metrics::aggregate_windows(city.grid.rows, city.grid.cols, &windows)?.mapv(|v| norm.from_model(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub city: String,
    pub date: NaiveDate,
    pub method: String,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub city: String,
    pub method: String,
    pub bins: usize,
    pub kl: f64,
}

/// Ground-truth maps of the evaluation week.
pub fn truth(city: &CityRasters, split: &Split) -> Vec<Array2<f64>> {
    split.eval_days.clone().map(|d| city.mobility.index_axis(Axis(0), d).mapv(f64::from)).collect()
}

pub fn score(city: &CityRasters, split: &Split, method: &str, estimates: &[Array2<f64>]) -> Result<Vec<MetricRow>> {
    let truth = truth(city, split);
    if estimates.len() != truth.len() {
        return Err(Error::shape("estimated days", truth.len(), estimates.len()));
    }
    split
        .eval_days
        .clone()
        .zip(estimates.iter().zip(&truth))
        .map(|(d, (e, t))| {
            let (e, t) = (e.as_standard_layout(), t.as_standard_layout());
            let (e, t) = (e.as_slice().expect("standard"), t.as_slice().expect("standard"));
            Ok(MetricRow {
                city: city.city_id().to_string(),
                date: city.dates[d],
                method: method.to_string(),
                mae: metrics::mae(e, t)?,
                rmse: metrics::rmse(e, t)?,
            })
        })
        .collect()
}

/// KL divergence between pooled estimated and real cell values of the
/// evaluation week, for each bin count.
pub fn kl_rows(city: &CityRasters, split: &Split, method: &str, estimates: &[Array2<f64>], cfg: &ProtocolConfig) -> Result<Vec<KlRow>> {
    let gen: Vec<f64> = estimates.iter().flat_map(|e| e.iter().copied()).collect();
    let real: Vec<f64> = truth(city, split).iter().flat_map(|e| e.iter().copied().collect::<Vec<_>>()).collect();
    Ok(metrics::kl_sweep(&gen, &real, &cfg.kl_bins, cfg.kl_direction)?
        .into_iter()
        .map(|(bins, kl)| KlRow { city: city.city_id().to_string(), method: method.to_string(), bins, kl })
        .collect())
}

/// Mean `(rmse, mae)` per method over the evaluated days.
pub fn summarize(rows: &[MetricRow]) -> BTreeMap<String, (f64, f64)> {
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.method.clone()).or_default();
        e.0 += r.rmse;
        e.1 += r.mae;
        e.2 += 1;
    }
    acc.into_iter().map(|(m, (r, a, n))| (m, (r / n as f64, a / n as f64))).collect()
}

/// Aligned text table: one row per method, one RMSE/MAE column pair per day.
pub fn comparison_table(rows: &[MetricRow]) -> String {
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort();
    dates.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}", "method");
    for d in &dates {
        let _ = write!(out, "  {:>17}", d.format("%a %m-%d RMSE/MAE").to_string());
    }
    let _ = writeln!(out, "  {:>17}", "mean RMSE/MAE");
    let summary = summarize(rows);
    for m in methods {
        let _ = write!(out, "{m:<width$}");
        for d in &dates {
            match rows.iter().find(|r| r.method == m && r.date == *d) {
                Some(r) => {
                    let _ = write!(out, "  {:>17}", format!("{:.2}/{:.2}", r.rmse, r.mae));
                }
                None => {
                    let _ = write!(out, "  {:>17}", "-");
                }
            }
        }
        let (r, a) = summary[m];
        let _ = writeln!(out, "  {:>17}", format!("{r:.2}/{a:.2}"));
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn write_kl_csv(rows: &[KlRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A meta-trained variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub models: Models,
    pub state: MetaState,
    pub history: Vec<EpochLog>,
}

/// Estimates and scores of one training seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub estimates: BTreeMap<Method, Vec<Array2<f64>>>,
    pub metrics: Vec<MetricRow>,
    pub kl: Vec<KlRow>,
    pub histories: BTreeMap<Method, Vec<EpochLog>>,
}

impl SeedReport {
    /// Mean RMSE of a method over the evaluation week.
    pub fn rmse(&self, m: Method) -> Option<f64> {
        summarize(&self.metrics).get(m.name()).map(|v| v.0)
    }
}

/// Prepared inputs of a held-out evaluation.
pub struct Experiment<'a> {
    pub cfg: &'a ExperimentConfig,
    pub cities: &'a BTreeMap<String, CityRasters>,
    pub graph: Option<&'a TaskGraph>,
    pub mode: ExecMode,
    pub split: Split,
    pub norm: Normalizer,
}

impl<'a> Experiment<'a> {
    pub fn new(cfg: &'a ExperimentConfig, cities: &'a BTreeMap<String, CityRasters>, graph: Option<&'a TaskGraph>, mode: ExecMode) -> Result<Self> {
        cfg.meta.validate()?;
        let split = Split::new(&cfg.protocol, cities)?;
        let norm = fit_normalizer(cities, &split)?;
        for c in cities.values() {
            norm.check_compatible(c)?;
        }
        Ok(Self { cfg, cities, graph, mode, split, norm })
    }

    pub fn test_city(&self) -> &CityRasters {
        &self.cities[&self.split.test_city]
    }

    pub fn tasks(&self, seed: u64) -> Result<Vec<Task>> {
        training_tasks(self.cities, &self.split, &self.cfg.tasks, seed)
    }

    pub fn adaptation_samples(&self) -> Result<Vec<Sample>> {
        let n = &self.cfg.net;
        samples_ending_in(self.test_city(), n.window, n.horizon, self.cfg.protocol.estimate_stride, self.split.adapt_days.clone())
    }

    /// Network shapes with the node width of the task graph.
    pub fn models(&self, with_graph: bool) -> Result<Models> {
        let mut net = self.cfg.net.clone();
        if with_graph {
            let g = self.graph.ok_or_else(|| Error::InvalidParam("graph variant needs a task graph".into()))?;
            net.node_features = g.feature_dim();
        }
        Ok(Models::new(&net, with_graph))
    }

    pub fn env<'b>(&'b self, models: &'b Models) -> TaskEnv<'b> {
        TaskEnv { models, cfg: &self.cfg.meta, cities: self.cities, norm: &self.norm }
    }

    pub fn subgraph(&self, models: &Models) -> Result<Option<Subgraph>> {
        match (models.uses_graph(), self.graph) {
            (true, Some(g)) => Ok(Some(g.subgraph_1hop(&self.split.test_city)?)),
            (true, None) => Err(Error::InvalidParam("graph variant needs a task graph".into())),
            (false, _) => Ok(None),
        }
    }

    /// Randomly initialized models and outer state of one variant.
    pub fn init(&self, with_graph: bool, seed: u64) -> Result<(Models, MetaState)> {
        let models = self.models(with_graph)?;
        let state = MetaState::new(&models, &self.cfg.meta, seed::derive(seed, &[STREAM_MODEL]));
        Ok((models, state))
    }

    /// Continues meta-training from `state` up to the configured epoch
    /// count; `on_epoch` sees the state after each step.
    pub fn resume<F>(&self, models: &Models, state: &mut MetaState, seed: u64, on_epoch: F) -> Result<Vec<EpochLog>>
    where
        F: FnMut(&MetaState, &EpochLog) -> Result<()>,
    {
        let tasks = self.tasks(seed)?;
        audit_leakage(&self.split, &tasks, &[])?;
        metatrain::train(&self.env(models), self.graph, &tasks, state, seed, self.mode, on_epoch)
    }

    /// Meta-trains one variant from scratch.
    pub fn train<F>(&self, with_graph: bool, seed: u64, on_epoch: F) -> Result<Trained>
    where
        F: FnMut(&MetaState, &EpochLog) -> Result<()>,
    {
        let (models, mut state) = self.init(with_graph, seed)?;
        let history = self.resume(&models, &mut state, seed, on_epoch)?;
        Ok(Trained { models, state, history })
    }

    /// Adapts a trained variant on the held-out fortnight and returns the
    /// adapted generator parameters.
    pub fn adapt(&self, models: &Models, state: &MetaState, seed: u64) -> Result<Vec<f64>> {
        let support = self.adaptation_samples()?;
        audit_leakage(&self.split, &[], &[FitSet { label: "adaptation", city: &self.split.test_city, days: support.iter().map(|s| s.t_end).collect() }])?;
        let sub = self.subgraph(models)?;
        let mut rng = seed::rng(seed, &[STREAM_ADAPT]);
        Ok(self.env(models).adapt(state, &support, sub.as_ref(), &mut rng)?.0)
    }

    /// Evaluation-week estimates of a generator.
    pub fn estimate_storm(&self, models: &Models, pg: &[f64], seed: u64) -> Result<Vec<Array2<f64>>> {
        let env = self.env(models);
        let sub = self.subgraph(models)?;
        self.split
            .eval_days
            .clone()
            .map(|d| {
                let mut rng = seed::rng(seed, &[STREAM_ESTIMATE, d as u64]);
                estimate_grid(self.test_city(), &self.norm, models.net(), self.cfg.protocol.estimate_stride, d, |cond| {
                    env.generate(pg, cond, sub.as_ref(), &mut rng)
                })
            })
            .collect()
    }

    pub fn estimate_ha(&self) -> Result<Vec<Array2<f64>>> {
        let m = self.test_city().mobility.view();
        self.split.eval_days.clone().map(|d| baselines::historical_average(m, d)).collect()
    }

    pub fn estimate_smoothing(&self) -> Result<Vec<Array2<f64>>> {
        let m = self.test_city().mobility.view();
        self.split.eval_days.clone().map(|d| baselines::smoothing_estimate(m, d)).collect()
    }

    /// Ridge fitted on the adaptation weeks with the penalty chosen on the
    /// last of them.
    pub fn estimate_ridge(&self) -> Result<(Vec<Array2<f64>>, RidgeModel)> {
        let city = self.test_city();
        let h = self.cfg.net.horizon;
        let days: Vec<usize> = self.split.adapt_days.clone().collect();
        audit_leakage(&self.split, &[], &[FitSet { label: "ridge", city: city.city_id(), days: days.clone() }])?;
        let cut = days.len().saturating_sub(DAYS_PER_WEEK).max(1);
        let (xt, yt) = ridge::design(city, &self.norm, &days[..cut], h)?;
        let (xv, yv) = ridge::design(city, &self.norm, &days[cut..], h)?;
        let (model, _) = RidgeModel::select((xt.view(), yt.view()), (xv.view(), yv.view()), &RIDGE_LAMBDA_GRID)?;
        let shape = (city.grid.rows, city.grid.cols);
        let est = self
            .split
            .eval_days
            .clone()
            .map(|d| {
                let x = ridge::cell_features(city, &self.norm, d, h)?;
                Ok(model.predict(x.view()).mapv(|v| v.max(0.0)).into_shape_with_order(shape).expect("grid"))
            })
            .collect::<Result<_>>()?;
        Ok((est, model))
    }

    /// Fully connected cGAN trained on the adaptation fortnight only.
    pub fn estimate_cgan(&self, cfg: &CganConfig, seed: u64) -> Result<(Vec<Array2<f64>>, Vec<f64>)> {
        let support = self.adaptation_samples()?;
        audit_leakage(&self.split, &[], &[FitSet { label: "cgan", city: &self.split.test_city, days: support.iter().map(|s| s.t_end).collect() }])?;
        let gan = Cgan::new(&self.cfg.net, cfg);
        let lookup = |id: &str| self.cities.get(id);
        let state = gan.train(seed::derive(seed, &[STREAM_CGAN]), |rng: &mut Rng| {
            use rand::seq::IndexedRandom;
            let picked: Vec<Sample> = support.choose_multiple(rng, cfg.batch_size).cloned().collect();
            Batch::from_samples(lookup, &picked, &self.norm)
        })?;
        let est = self
            .split
            .eval_days
            .clone()
            .map(|d| {
                let mut rng = seed::rng(seed, &[STREAM_ESTIMATE, STREAM_CGAN, d as u64]);
                estimate_grid(self.test_city(), &self.norm, &self.cfg.net, self.cfg.protocol.estimate_stride, d, |cond| {
                    gan.generate(&state.theta_g, cond, &mut rng)
                })
            })
            .collect::<Result<_>>()?;
        Ok((est, state.history))
    }

    /// Runs the requested methods for one training seed.
    pub fn run(&self, seed: u64, methods: &[Method]) -> Result<SeedReport> {
        let mut estimates = BTreeMap::new();
        let mut histories = BTreeMap::new();
        let wants = |m| methods.contains(&m);
        if wants(Method::Ha) {
            estimates.insert(Method::Ha, self.estimate_ha()?);
        }
        if wants(Method::Smoothing) {
            estimates.insert(Method::Smoothing, self.estimate_smoothing()?);
        }
        if wants(Method::Ridge) {
            estimates.insert(Method::Ridge, self.estimate_ridge()?.0);
        }
        if wants(Method::Cgan) {
            estimates.insert(Method::Cgan, self.estimate_cgan(&self.cfg.cgan, seed)?.0);
        }
        if wants(Method::Storm) || wants(Method::StormUnadapted) {
            let t = self.train(true, seed, |_, _| Ok(()))?;
            if wants(Method::StormUnadapted) {
                estimates.insert(Method::StormUnadapted, self.estimate_storm(&t.models, &t.state.theta_g, seed)?);
            }
            if wants(Method::Storm) {
                let pg = self.adapt(&t.models, &t.state, seed)?;
                estimates.insert(Method::Storm, self.estimate_storm(&t.models, &pg, seed)?);
            }
            histories.insert(Method::Storm, t.history);
        }
        if wants(Method::StormNograph) {
            let t = self.train(false, seed, |_, _| Ok(()))?;
            let pg = self.adapt(&t.models, &t.state, seed)?;
            estimates.insert(Method::StormNograph, self.estimate_storm(&t.models, &pg, seed)?);
            histories.insert(Method::StormNograph, t.history);
        }
        let city = self.test_city();
        let mut metrics = Vec::new();
        let mut kl = Vec::new();
        for (m, est) in &estimates {
            metrics.extend(score(city, &self.split, m.name(), est)?);
            kl.extend(kl_rows(city, &self.split, m.name(), est, &self.cfg.protocol)?);
        }
        Ok(SeedReport { seed, estimates, metrics, kl, histories })
    }
}

/// Median of a nonempty list.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}
