//! Subcommand implementations. Each reads the artifacts of earlier stages
//! under the output root and writes its own directory there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use stormgan::baselines::ablation::{ablation_report, render_table, Variant};
use stormgan::checkpoint::Checkpoint;
use stormgan::griddata::{archive, CityRasters};
use stormgan::protocol::{self, Experiment, ExperimentConfig, GraphChoice, KlRow, Method, MetricRow};
use stormgan::sttg::io::{load_graph, read_cities, read_pairs, read_reference_values, save_graph};
use stormgan::sttg::{build_sttg_s2, S2City, TaskGraph};
use stormgan::synthcity::world::{generate_world, s1_from_values};
use stormgan::ExecMode;

use crate::config::stamp;
use crate::plot;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub mode: ExecMode,
}

impl Ctx {
    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    fn stage_dir(&self, stage: &str, g: GraphChoice) -> PathBuf {
        self.out.join(format!("{stage}-{}", g.name()))
    }

    pub fn graph_dir(&self, g: GraphChoice) -> PathBuf {
        self.stage_dir("graph", g)
    }

    pub fn train_dir(&self, g: GraphChoice) -> PathBuf {
        self.stage_dir("train", g)
    }

    pub fn adapt_dir(&self, g: GraphChoice) -> PathBuf {
        self.stage_dir("adapt", g)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn plot_dir(&self) -> PathBuf {
        self.out.join("plot")
    }

    fn scenario(&self) -> GraphChoice {
        self.cfg.graph.scenario
    }
}

/// Fails with the subcommand that produces `path` when it is missing.
fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {}; run `stormgan {producer}` first", path.display());
    }
    Ok(())
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let world = generate_world(&ctx.cfg.world, ctx.mode);
    let dir = ctx.data_dir();
    world.write(&dir, ctx.mode)?;
    stamp(&dir, &ctx.cfg, ctx.cfg.world.seed)?;
    log::info!("wrote {} task cities to {}", world.task_cities().count(), dir.display());
    Ok(())
}

pub fn load_cities(ctx: &Ctx) -> Result<BTreeMap<String, CityRasters>> {
    let dir = ctx.data_dir();
    require(&dir.join("manifest.json"), "synth")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == archive::EXTENSION));
    paths.sort();
    let mut cities = BTreeMap::new();
    for p in paths {
        let c = archive::read(&p).with_context(|| format!("reading {}", p.display()))?;
        cities.insert(c.city_id().to_string(), c);
    }
    ensure!(!cities.is_empty(), "no city archives in {}; run `stormgan synth` first", dir.display());
    Ok(cities)
}

pub fn build_graph(ctx: &Ctx) -> Result<()> {
    ensure!(ctx.scenario() != GraphChoice::None, "build-graph needs --scenario s1 or s2");
    let data = ctx.data_dir();
    let table = |name: &str| -> Result<PathBuf> {
        let p = data.join(name);
        require(&p, "synth")?;
        Ok(p)
    };
    let rows = read_cities(&table("cities.csv")?)?;
    let graph = match ctx.scenario() {
        GraphChoice::S1 => s1_from_values(&read_reference_values(&table("reference_mobility.csv")?)?, &rows, &ctx.cfg.graph.s1)?,
        GraphChoice::S2 => {
            let cities: Vec<S2City> = rows
                .iter()
                .map(|r| S2City { city_id: r.city_id.clone(), airlines: r.airlines, stage: r.stage })
                .collect();
            let flights = read_pairs::<u32>(&table("flights.csv")?)?;
            let distances = read_pairs::<f64>(&table("distances.csv")?)?;
            build_sttg_s2(&cities, &flights, &distances, &ctx.cfg.graph.s2)?
        }
        GraphChoice::None => unreachable!("checked above"),
    };
    let dir = ctx.graph_dir(ctx.scenario());
    stamp(&dir, &ctx.cfg, ctx.cfg.seed)?;
    save_graph(&graph, &dir.join("graph.json"))?;
    log::info!("graph with {} nodes and {} edges in {}", graph.nodes.len(), graph.edges.len(), dir.display());
    Ok(())
}

fn load_task_graph(ctx: &Ctx, g: GraphChoice) -> Result<Option<TaskGraph>> {
    if g == GraphChoice::None {
        return Ok(None);
    }
    let p = ctx.graph_dir(g).join("graph.json");
    require(&p, &format!("build-graph --scenario {}", g.name()))?;
    Ok(Some(load_graph(&p)?))
}

fn load_checkpoint(path: &Path, producer: &str) -> Result<Checkpoint> {
    require(path, producer)?;
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn check_normalizer(ck: &Checkpoint, ex: &Experiment<'_>) -> Result<()> {
    ensure!(
        ck.normalizer == ex.norm,
        "checkpoint was fitted on different data or a different split; rerun `stormgan train`"
    );
    Ok(())
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let cities = load_cities(ctx)?;
    let g = ctx.scenario();
    let graph = load_task_graph(ctx, g)?;
    let ex = Experiment::new(&ctx.cfg, &cities, graph.as_ref(), ctx.mode)?;
    let dir = ctx.train_dir(g);
    stamp(&dir, &ctx.cfg, ctx.cfg.seed)?;
    for e in fs::read_dir(&dir)? {
        let p = e?.path();
        if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("epoch-")) {
            fs::remove_file(p)?;
        }
    }
    let seed = ctx.cfg.seed;
    let every = ctx.cfg.meta.checkpoint_every;
    let (models, mut state) = ex.init(graph.is_some(), seed)?;
    let mut seen = Vec::new();
    let history = ex.resume(&models, &mut state, seed, |st, log| {
        seen.push(log.clone());
        log::info!(
            "epoch {}: d {:.4} g_adv {:.4} recon {:.4} vgae {:.4}",
            log.epoch,
            log.d_loss,
            log.g_adv,
            log.recon,
            log.vgae
        );
        if every > 0 && st.epoch % every == 0 {
            Checkpoint::new(seed, &models, &ctx.cfg.meta, &ex.norm, st, &seen).save(&dir.join(format!("epoch-{:04}.json", st.epoch)))?;
        }
        Ok(())
    })?;
    Checkpoint::new(seed, &models, &ctx.cfg.meta, &ex.norm, &state, &history).save(&dir.join("checkpoint.json"))?;
    let mut w = csv::Writer::from_path(dir.join("history.csv"))?;
    for h in &history {
        w.serialize(h)?;
    }
    w.flush()?;
    log::info!("trained {} epochs into {}", state.epoch, dir.display());
    Ok(())
}

pub fn adapt(ctx: &Ctx) -> Result<()> {
    let g = ctx.scenario();
    let ck = load_checkpoint(&ctx.train_dir(g).join("checkpoint.json"), &format!("train --scenario {}", g.name()))?;
    let cities = load_cities(ctx)?;
    let graph = load_task_graph(ctx, g)?;
    let ex = Experiment::new(&ctx.cfg, &cities, graph.as_ref(), ctx.mode)?;
    check_normalizer(&ck, &ex)?;
    let models = ck.models();
    let pg = ex.adapt(&models, &ck.state, ctx.cfg.seed)?;
    let mut adapted = ck.clone();
    adapted.meta = ctx.cfg.meta.clone();
    adapted.state.theta_g = pg;
    let dir = ctx.adapt_dir(g);
    stamp(&dir, &ctx.cfg, ctx.cfg.seed)?;
    adapted.save(&dir.join("checkpoint.json"))?;
    log::info!("adapted to {} into {}", ctx.cfg.protocol.test_city, dir.display());
    Ok(())
}

/// Evaluation-week estimates as written by `eval` and read by `plot`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateFile {
    pub city: String,
    pub dates: Vec<NaiveDate>,
    pub truth: Vec<Vec<Vec<f64>>>,
    pub methods: Vec<(String, Vec<Vec<Vec<f64>>>)>,
}

fn nested(maps: &[Array2<f64>]) -> Vec<Vec<Vec<f64>>> {
    maps.iter().map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()).collect()
}

fn unnested(maps: &[Vec<Vec<f64>>]) -> Result<Vec<Array2<f64>>> {
    maps.iter()
        .map(|m| {
            let cols = m.first().map_or(0, Vec::len);
            let flat: Vec<f64> = m.iter().flatten().copied().collect();
            Ok(Array2::from_shape_vec((m.len(), cols), flat)?)
        })
        .collect()
}

pub fn eval(ctx: &Ctx, methods: &[Method]) -> Result<()> {
    let cities = load_cities(ctx)?;
    let g = ctx.scenario();
    let wants_graph = methods.iter().any(|m| matches!(m, Method::Storm | Method::StormUnadapted));
    if wants_graph && g == GraphChoice::None {
        bail!("methods storm and storm_unadapted need --scenario s1 or s2");
    }
    let graph = if wants_graph { load_task_graph(ctx, g)? } else { None };
    let ex = Experiment::new(&ctx.cfg, &cities, graph.as_ref(), ctx.mode)?;
    let seed = ctx.cfg.seed;
    let mut estimates: Vec<(Method, Vec<Array2<f64>>)> = Vec::new();
    for &m in methods {
        let est = match m {
            Method::Ha => ex.estimate_ha()?,
            Method::Smoothing => ex.estimate_smoothing()?,
            Method::Ridge => ex.estimate_ridge()?.0,
            Method::Cgan => ex.estimate_cgan(&ctx.cfg.cgan, seed)?.0,
            Method::Storm | Method::StormUnadapted | Method::StormNograph => {
                let (dir, producer) = match m {
                    Method::Storm => (ctx.adapt_dir(g), format!("adapt --scenario {}", g.name())),
                    Method::StormUnadapted => (ctx.train_dir(g), format!("train --scenario {}", g.name())),
                    _ => (ctx.adapt_dir(GraphChoice::None), "adapt --scenario none".to_string()),
                };
                let ck = load_checkpoint(&dir.join("checkpoint.json"), &producer)?;
                check_normalizer(&ck, &ex)?;
                ex.estimate_storm(&ck.models(), &ck.state.theta_g, seed)?
            }
        };
        estimates.push((m, est));
    }
    let city = ex.test_city();
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut kl: Vec<KlRow> = Vec::new();
    for (m, est) in &estimates {
        metrics.extend(protocol::score(city, &ex.split, m.name(), est)?);
        kl.extend(protocol::kl_rows(city, &ex.split, m.name(), est, &ctx.cfg.protocol)?);
    }
    let dir = ctx.eval_dir();
    stamp(&dir, &ctx.cfg, seed)?;
    protocol::write_metrics_csv(&metrics, &dir.join("metrics.csv"))?;
    protocol::write_kl_csv(&kl, &dir.join("kl.csv"))?;

    let summary = protocol::summarize(&metrics);
    let rung = |m: Method| summary.get(m.name()).copied();
    let mut scores = BTreeMap::new();
    for (v, m) in [(Variant::Base, Method::Cgan), (Variant::BaseStMeta, Method::StormNograph)] {
        if let Some(s) = rung(m) {
            scores.insert(v, s);
        }
    }
    if g == GraphChoice::S2 {
        if let Some(s) = rung(Method::Storm) {
            scores.insert(Variant::Full, s);
        }
    }
    let table = format!(
        "{} test city, evaluation week {}\n\n{}\nablation (mean RMSE / MAE)\n{}",
        city.city_id(),
        ctx.cfg.protocol.eval_week,
        protocol::comparison_table(&metrics),
        render_table(&ablation_report(&scores))
    );
    fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");

    let file = EstimateFile {
        city: city.city_id().to_string(),
        dates: ex.split.eval_days.clone().map(|d| city.dates[d]).collect(),
        truth: nested(&protocol::truth(city, &ex.split)),
        methods: estimates.iter().map(|(m, e)| (m.name().to_string(), nested(e))).collect(),
    };
    fs::write(dir.join("estimates.json"), serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn plot(ctx: &Ctx) -> Result<()> {
    let src = ctx.eval_dir();
    let est_path = src.join("estimates.json");
    require(&est_path, "eval")?;
    let file: EstimateFile = serde_json::from_str(&fs::read_to_string(&est_path)?)?;
    let truth = unnested(&file.truth)?;
    let methods: Vec<(String, Vec<Array2<f64>>)> =
        file.methods.iter().map(|(n, e)| Ok((n.clone(), unnested(e)?))).collect::<Result<_>>()?;
    let vmax = truth.iter().flat_map(|t| t.iter().copied()).fold(0.0, f64::max);

    let dir = ctx.plot_dir();
    stamp(&dir, &ctx.cfg, ctx.cfg.seed)?;
    for (d, date) in file.dates.iter().enumerate() {
        let mut panels = vec![&truth[d]];
        panels.extend(methods.iter().map(|(_, e)| &e[d]));
        plot::heatmap_panels(&panels, vmax, 4).save(dir.join(format!("heatmap-{date}.png")))?;
    }
    let names: Vec<&str> = methods.iter().map(|(n, _)| n.as_str()).collect();
    fs::write(
        dir.join("heatmap-legend.txt"),
        format!("{}: panels left to right: truth, {}\ncolor scale: 0 to {vmax:.1} visits per cell\n", file.city, names.join(", ")),
    )?;

    let kl_path = src.join("kl.csv");
    require(&kl_path, "eval")?;
    let mut rows: Vec<KlRow> = Vec::new();
    for r in csv::Reader::from_path(&kl_path)?.deserialize() {
        rows.push(r?);
    }
    let mut series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for r in rows {
        match series.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, s)) => s.push((r.bins, r.kl)),
            None => series.push((r.method.clone(), vec![(r.bins, r.kl)])),
        }
    }
    let curves: Vec<_> = series.iter().map(|(_, s)| s.clone()).collect();
    plot::kl_curves(&curves, 640, 400).save(dir.join("kl.png"))?;
    let legend: String = series
        .iter()
        .enumerate()
        .map(|(i, (m, _))| format!("{m}: {}\n", plot::PALETTE[i % plot::PALETTE.len()].0))
        .collect();
    fs::write(dir.join("kl-legend.txt"), legend)?;
    log::info!("wrote {} heat maps and the KL curve to {}", file.dates.len(), dir.display());
    Ok(())
}
