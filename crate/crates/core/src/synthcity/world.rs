//! A national set of synthetic cities: the task cities that get full
//! raster archives plus context cities that only appear in the task graph.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Axis;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{generate_named, CityTemplate, Coefficients, SizeClass, SynthConfig, CASE_REF, FEATURES, INCOME_REF, POP_REF};
use crate::error::{Error, Result};
use crate::griddata::{archive, geometry};
use crate::par::{self, ExecMode};
use crate::seed;
use crate::sttg::{self, io::CityRow, S1City, S1Config, S2City, S2Config, TaskGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub task_cities: Vec<SizeClass>,
    pub context_cities: usize,
    /// Day whose mobility is compared across cities for S1.
    pub reference_day: usize,
    pub synth: SynthConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 2020,
            task_cities: vec![
                SizeClass::Metro,
                SizeClass::Metro,
                SizeClass::Metro,
                SizeClass::Mid,
                SizeClass::Mid,
                SizeClass::Small,
            ],
            context_cities: 14,
            reference_day: 49,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldCity {
    pub template: CityTemplate,
    /// City centre, (lat, lon).
    pub location: (f64, f64),
    pub airlines: u32,
    pub is_task: bool,
}

impl WorldCity {
    pub fn city_id(&self) -> &str {
        self.template.city_id()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub cities: Vec<WorldCity>,
    /// Keyed by the lexicographically ordered pair.
    pub direct_flights: BTreeMap<(String, String), u32>,
    pub distances_km: BTreeMap<(String, String), f64>,
}

fn airlines(rng: &mut seed::Rng, class: SizeClass) -> u32 {
    match class {
        SizeClass::Metro => rng.random_range(110..=260),
        SizeClass::Mid => rng.random_range(40..=95),
        SizeClass::Small => rng.random_range(5..=30),
    }
}

fn flight_probability(a: SizeClass, b: SizeClass) -> f64 {
    use SizeClass::*;
    match (a, b) {
        (Metro, Metro) => 0.85,
        (Metro, Mid) | (Mid, Metro) => 0.5,
        (Mid, Mid) => 0.2,
        _ => 0.05,
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Builds the world. Task city `i` is named `<class><i:02>`; outbreak
/// stages cycle through 1..=3 from a seeded offset so that every stage is
/// represented among the task cities.
pub fn generate_world(cfg: &WorldConfig, mode: ExecMode) -> World {
    let mut rng = seed::rng(cfg.seed, &[0x0071_D]);
    let offset = rng.random_range(0..3u8);
    let classes = [SizeClass::Metro, SizeClass::Mid, SizeClass::Small];
    let mut specs = Vec::new();
    for (i, &class) in cfg.task_cities.iter().enumerate() {
        let stage = 1 + (offset + i as u8) % 3;
        specs.push((format!("{}{i:02}", class.name()), class, stage, true));
    }
    for j in 0..cfg.context_cities {
        let class = classes[rng.random_range(0..3)];
        let stage = rng.random_range(1..=3u8);
        let i = cfg.task_cities.len() + j;
        specs.push((format!("{}{i:02}", class.name()), class, stage, false));
    }
    let placed: Vec<((f64, f64), u32)> = specs
        .iter()
        .map(|s| {
            let loc = (rng.random_range(30.0..46.0), rng.random_range(-122.0..-72.0));
            (loc, airlines(&mut rng, s.1))
        })
        .collect();
    let templates = par::map(mode, &specs, |(id, class, stage, _)| {
        let i = specs.iter().position(|s| &s.0 == id).expect("own spec");
        let (lat, lon) = placed[i].0;
        generate_named(id, cfg.seed, *class, *stage, (lat - 0.2, lon - 0.25), &cfg.synth)
    });
    let cities: Vec<WorldCity> = templates
        .into_iter()
        .zip(&specs)
        .zip(&placed)
        .map(|((template, spec), &(location, airlines))| WorldCity { template, location, airlines, is_task: spec.3 })
        .collect();

    let mut direct_flights = BTreeMap::new();
    let mut distances_km = BTreeMap::new();
    for i in 0..cities.len() {
        for j in i + 1..cities.len() {
            let (a, b) = (&cities[i], &cities[j]);
            let key = ordered(a.city_id(), b.city_id());
            distances_km.insert(key.clone(), geometry::haversine_km(a.location, b.location));
            if rng.random_bool(flight_probability(a.template.size_class, b.template.size_class)) {
                let cap = a.airlines.min(b.airlines) / 10 + 1;
                direct_flights.insert(key, rng.random_range(1..=cap));
            }
        }
    }
    World { config: cfg.clone(), cities, direct_flights, distances_km }
}

/// Ground truth written next to the archives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub closed_form: String,
    pub constants: BTreeMap<String, f64>,
    pub feature_names: Vec<String>,
    pub noise_sd: f64,
    pub cities: Vec<CityManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityManifest {
    pub city_id: String,
    pub size_class: SizeClass,
    pub is_task: bool,
    pub archive: Option<String>,
    pub rows: usize,
    pub cols: usize,
    pub location: (f64, f64),
    pub airlines: u32,
    pub stage: u8,
    pub stage_month: Option<usize>,
    pub planted_month: usize,
    pub county_share: Vec<f64>,
    pub coefficients: Coefficients,
}

pub const CLOSED_FORM: &str = "visits = round(poi_density * sigmoid(a*population/POP_REF + b*income/INCOME_REF \
     - c*ln(1+county_cases)/ln(1+CASE_REF) - d[0]*stay_at_home - d[1]*business_closure) \
     * weekly[weekday] * (1 + eps)), eps ~ N(0, noise_sd)";

impl World {
    pub fn task_cities(&self) -> impl Iterator<Item = &WorldCity> {
        self.cities.iter().filter(|c| c.is_task)
    }

    pub fn city(&self, id: &str) -> Option<&WorldCity> {
        self.cities.iter().find(|c| c.city_id() == id)
    }

    pub fn city_rows(&self) -> Vec<CityRow> {
        self.cities
            .iter()
            .map(|c| CityRow {
                city_id: c.city_id().to_string(),
                lat: c.location.0,
                lon: c.location.1,
                airlines: c.airlines,
                stage: c.template.stage,
            })
            .collect()
    }

    /// Cell values of every city on the reference day.
    pub fn reference_values(&self, mode: ExecMode) -> BTreeMap<String, Vec<f64>> {
        let day = self.config.reference_day;
        par::map(mode, &self.cities, |c| {
            let m = c.template.simulate_mobility();
            (c.city_id().to_string(), m.index_axis(Axis(0), day).iter().copied().collect())
        })
        .into_iter()
        .collect()
    }

    pub fn s2_graph(&self, cfg: &S2Config) -> Result<TaskGraph> {
        let cities: Vec<S2City> = self
            .cities
            .iter()
            .map(|c| S2City { city_id: c.city_id().to_string(), airlines: c.airlines, stage: c.template.stage })
            .collect();
        sttg::build_sttg_s2(&cities, &self.direct_flights, &self.distances_km, cfg)
    }

    pub fn s1_graph(&self, cfg: &S1Config, mode: ExecMode) -> Result<TaskGraph> {
        s1_from_values(&self.reference_values(mode), &self.city_rows(), cfg)
    }

    pub fn manifest(&self) -> Manifest {
        let constants = [("POP_REF", POP_REF), ("INCOME_REF", INCOME_REF), ("CASE_REF", CASE_REF)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Manifest {
            seed: self.config.seed,
            closed_form: CLOSED_FORM.to_string(),
            constants,
            feature_names: FEATURES.iter().map(|s| s.to_string()).collect(),
            noise_sd: self.config.synth.noise_sd,
            cities: self
                .cities
                .iter()
                .map(|c| CityManifest {
                    city_id: c.city_id().to_string(),
                    size_class: c.template.size_class,
                    is_task: c.is_task,
                    archive: c.is_task.then(|| format!("{}.{}", c.city_id(), archive::EXTENSION)),
                    rows: c.template.grid.rows,
                    cols: c.template.grid.cols,
                    location: c.location,
                    airlines: c.airlines,
                    stage: c.template.stage,
                    stage_month: c.template.stage_month,
                    planted_month: c.template.planted_month,
                    county_share: c.template.county_share.clone(),
                    coefficients: c.template.coefficients.clone(),
                })
                .collect(),
        }
    }

    /// Writes archives for task cities, the manifest and the graph tables.
    pub fn write(&self, dir: &Path, mode: ExecMode) -> Result<()> {
        fs::create_dir_all(dir)?;
        let tasks: Vec<&WorldCity> = self.task_cities().collect();
        par::map(mode, &tasks, |c| {
            let path = dir.join(format!("{}.{}", c.city_id(), archive::EXTENSION));
            archive::write(&c.template.to_rasters(), &path)
        })
        .into_iter()
        .collect::<Result<Vec<()>>>()?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(dir.join("manifest.json"), manifest + "\n")?;
        sttg::io::write_cities(&self.city_rows(), &dir.join("cities.csv"))?;
        sttg::io::write_pairs(&self.direct_flights, &dir.join("flights.csv"))?;
        sttg::io::write_pairs(&self.distances_km, &dir.join("distances.csv"))?;
        sttg::io::write_reference_values(&self.reference_values(mode), &dir.join("reference_mobility.csv"))?;
        let mut w = csv::Writer::from_path(dir.join("epidemic.csv"))?;
        w.write_record(["city_id", "day", "cases", "stay_at_home", "business_closure"])?;
        for c in &self.cities {
            for (d, v) in c.template.epidemic_curve.iter().enumerate() {
                w.write_record([
                    c.city_id().to_string(),
                    d.to_string(),
                    format!("{v:.4}"),
                    c.template.policy_timeline[[d, 0]].to_string(),
                    c.template.policy_timeline[[d, 1]].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// S1 graph from per-city reference-day cell values.
pub fn s1_from_values(values: &BTreeMap<String, Vec<f64>>, cities: &[CityRow], cfg: &S1Config) -> Result<TaskGraph> {
    let order: Vec<&CityRow> = cities.iter().collect();
    let slices: Vec<&[f64]> = order
        .iter()
        .map(|c| {
            values
                .get(&c.city_id)
                .map(|v| v.as_slice())
                .ok_or_else(|| Error::EmptyHistogram(c.city_id.clone()))
        })
        .collect::<Result<_>>()?;
    let hists = sttg::mobility_histograms(&slices, cfg.bins)?;
    let nodes: Vec<S1City> = order
        .iter()
        .zip(hists)
        .map(|(c, histogram)| S1City { city_id: c.city_id.clone(), stage: c.stage, histogram })
        .collect();
    sttg::build_sttg_s1(&nodes, cfg)
}
