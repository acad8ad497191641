//! Synthetic cities with a known mobility process.
//!
//! Each city has smooth population, income and POI fields, a daily
//! epidemic curve split over two counties, and two policy flags that react
//! to the curve. Daily visits per cell follow
//!
//! ```text
//! round(poi * sigmoid(a*pop/POP_REF + b*income/INCOME_REF
//!                     - c*ln(1 + county_cases)/ln(1 + CASE_REF)
//!                     - sum_j d_j*policy_j) * weekly[dow] * (1 + eps))
//! ```
//!
//! with `eps ~ N(0, noise_sd)`. The per-city coefficients are drawn from a
//! meta-distribution that depends on the city's size class and outbreak
//! stage, so that cities close in the task graph behave alike.

pub mod world;

use std::sync::Arc;

use chrono::{Datelike, Days, NaiveDate};
use ndarray::{Array2, Array3, Array4};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::griddata::{CityRasters, GridSpec, MobilityMap, DAYS_PER_WEEK};
use crate::layers::act::sigmoid;
use crate::seed;
use crate::sttg::stage::{detect_stage, DAYS_PER_MONTH};

pub use world::{generate_world, World, WorldConfig};

pub const POP_REF: f64 = 10_000.0;
pub const INCOME_REF: f64 = 100.0;
pub const CASE_REF: f64 = 1_000.0;

pub const FEATURES: [&str; 7] = [
    "population",
    "income",
    "poi_density",
    "log_cases",
    "stay_at_home",
    "business_closure",
    "weekday",
];
pub const POLICIES: [&str; 2] = ["stay_at_home", "business_closure"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Metro,
    Mid,
    Small,
}

impl SizeClass {
    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Metro => "metro",
            SizeClass::Mid => "mid",
            SizeClass::Small => "small",
        }
    }

    fn side_range(self) -> (usize, usize) {
        match self {
            SizeClass::Metro => (50, 72),
            SizeClass::Mid => (37, 50),
            SizeClass::Small => (20, 32),
        }
    }

    /// Range of the mean POI capacity per cell.
    fn poi_range(self) -> (f64, f64) {
        match self {
            SizeClass::Metro => (60.0, 100.0),
            SizeClass::Mid => (30.0, 50.0),
            SizeClass::Small => (9.0, 15.0),
        }
    }

    fn peak_density(self) -> (f64, f64) {
        match self {
            SizeClass::Metro => (6_000.0, 9_000.0),
            SizeClass::Mid => (3_500.0, 6_000.0),
            SizeClass::Small => (1_500.0, 3_500.0),
        }
    }

    fn case_peak(self) -> (f64, f64) {
        match self {
            SizeClass::Metro => (300.0, 900.0),
            SizeClass::Mid => (80.0, 250.0),
            SizeClass::Small => (15.0, 60.0),
        }
    }
}

impl std::str::FromStr for SizeClass {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metro" => Ok(Self::Metro),
            "mid" => Ok(Self::Mid),
            "small" => Ok(Self::Small),
            _ => Err(crate::Error::InvalidParam(format!("unknown size class {s:?}"))),
        }
    }
}

/// Per-city coefficients of the mobility process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// One weight per entry of [`POLICIES`].
    pub d: Vec<f64>,
    /// Multiplier per weekday, Monday first; mean 1.
    pub weekly: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub weeks: usize,
    pub noise_sd: f64,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            weeks: 35,
            noise_sd: 0.05,
            start: NaiveDate::from_ymd_opt(2020, 2, 24).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn days(&self) -> usize {
        self.weeks * DAYS_PER_WEEK
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityTemplate {
    pub grid: GridSpec,
    pub size_class: SizeClass,
    pub seed: u64,
    pub start: NaiveDate,
    /// Residents per cell.
    pub population_field: Array2<f64>,
    /// Visit capacity per cell.
    pub poi_density: Array2<f64>,
    /// Median household income per cell, thousands.
    pub income_field: Array2<f64>,
    /// County index per cell.
    pub county: Array2<usize>,
    /// Fraction of the city's cases reported in each county.
    pub county_share: Vec<f64>,
    /// (day, policy) flags in {0, 1}.
    pub policy_timeline: Array2<f64>,
    /// City-wide daily cases.
    pub epidemic_curve: Vec<f64>,
    pub stage_month: Option<usize>,
    pub stage: u8,
    /// Month in which the first wave was planted.
    pub planted_month: usize,
    pub coefficients: Coefficients,
    pub noise_sd: f64,
}

fn uniform(rng: &mut seed::Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..hi)
}

/// Sum of isotropic Gaussian bumps, each scaled to peak at `amp`.
fn blobs(rng: &mut seed::Rng, rows: usize, cols: usize, n: usize, sigma: (f64, f64), amp: (f64, f64)) -> Array2<f64> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.random_range(0.0..rows as f64),
                rng.random_range(0.0..cols as f64),
                uniform(rng, sigma),
                uniform(rng, amp),
            )
        })
        .collect();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        bumps
            .iter()
            .map(|&(br, bc, s, a)| {
                let d2 = (r as f64 + 0.5 - br).powi(2) + (c as f64 + 0.5 - bc).powi(2);
                a * (-d2 / (2.0 * s * s)).exp()
            })
            .sum()
    })
}

/// Two-sided exponential wave peaking at `peak` with height `amp`.
fn wave(t: f64, peak: f64, amp: f64, grow: f64, decay: f64) -> f64 {
    if t <= peak {
        amp * (grow * (t - peak)).exp()
    } else {
        amp * (-decay * (t - peak)).exp()
    }
}

struct Epidemic {
    curve: Vec<f64>,
    planted_month: usize,
    first_peak: f64,
}

/// City-wide expected daily cases. The first wave starts growing (doubling every
/// 3.5 to 4.5 days) at the start of a month chosen by `stage`, so that
/// stage detection can recover it. Earlier cities see a slower summer wave;
/// stage 1 and 2 cities get an autumn resurgence still growing at the end.
fn epidemic(rng: &mut seed::Rng, days: usize, class: SizeClass, stage: u8) -> Epidemic {
    let months = days.div_ceil(DAYS_PER_MONTH);
    let third = (months / 3).max(1);
    let lo = (stage as usize - 1) * third;
    let hi = if stage == 3 { months.saturating_sub(2).max(lo) } else { lo + third - 1 };
    let month = rng.random_range(lo..=hi);
    let onset = (month * DAYS_PER_MONTH + rng.random_range(0..=3)) as f64;
    let amp = uniform(rng, class.case_peak());
    let grow = std::f64::consts::LN_2 / uniform(rng, (3.5, 4.5));
    let rise = uniform(rng, (34.0, 40.0));
    let base = amp * (-grow * rise).exp();
    let peak = onset + rise;
    let decay = std::f64::consts::LN_2 / uniform(rng, (10.0, 16.0));
    let floor = base * uniform(rng, (3.0, 6.0));
    let summer = (stage == 1).then(|| {
        let p = (4 * DAYS_PER_MONTH) as f64 + uniform(rng, (15.0, 45.0));
        (p, amp * uniform(rng, (0.3, 0.6)), std::f64::consts::LN_2 / uniform(rng, (9.0, 12.0)))
    });
    let autumn = (stage < 3).then(|| {
        let g = std::f64::consts::LN_2 / uniform(rng, (6.5, 8.0));
        let level_at_end = amp * uniform(rng, (0.6, 1.2));
        let p = days as f64 + 35.0;
        (p, level_at_end * (g * 35.0).exp(), g)
    });
    let normal = Normal::new(0.0, 0.05).expect("valid sd");
    let curve = (0..days)
        .map(|d| {
            let t = d as f64;
            let mut v = base + wave(t, peak, amp, grow, decay);
            if t > peak {
                v += floor * (1.0 - (-decay * (t - peak)).exp());
            }
            if let Some((p, a, g)) = summer {
                v += wave(t, p, a, g, decay);
            }
            if let Some((p, a, g)) = autumn {
                v += wave(t, p, a, g, decay);
            }
            (v * (1.0 + normal.sample(rng))).max(0.0)
        })
        .collect();
    Epidemic { curve, planted_month: month, first_peak: amp }
}

/// Stay-at-home starts once the trailing weekly mean passes 20% of the
/// first peak and lasts 40 to 60 days, once. Business closure follows the
/// trailing mean with hysteresis (on above 30%, off below 12%).
fn policies(rng: &mut seed::Rng, curve: &[f64], first_peak: f64) -> Array2<f64> {
    let days = curve.len();
    let lag = rng.random_range(3..=6usize);
    let stay_len = rng.random_range(40..=60usize);
    let trailing = |t: usize| -> f64 {
        let hi = t + 1;
        let lo = hi.saturating_sub(DAYS_PER_WEEK);
        curve[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    };
    let mut out = Array2::zeros((days, POLICIES.len()));
    let mut stay_start = None;
    let mut closed = false;
    for t in lag..days {
        let m = trailing(t - lag);
        if stay_start.is_none() && m > 0.2 * first_peak {
            stay_start = Some(t);
        }
        if let Some(s) = stay_start {
            if t < s + stay_len {
                out[[t, 0]] = 1.0;
            }
        }
        if !closed && m > 0.3 * first_peak {
            closed = true;
        } else if closed && m < 0.12 * first_peak {
            closed = false;
        }
        out[[t, 1]] = closed as u8 as f64;
    }
    out
}

/// Coefficient meta-distribution. Case sensitivity falls with later
/// outbreak stage; policy sensitivity and weekly amplitude rise with size.
fn coefficients(rng: &mut seed::Rng, class: SizeClass, stage: u8) -> Coefficients {
    let c_base = match stage {
        1 => 1.6,
        2 => 1.2,
        _ => 0.8,
    };
    let (stay, closure, amplitude) = match class {
        SizeClass::Metro => (1.0, 0.8, 1.3),
        SizeClass::Mid => (0.8, 0.6, 1.0),
        SizeClass::Small => (0.6, 0.45, 0.7),
    };
    let shape = [1.0, 1.0, 1.02, 1.04, 1.1, 1.15, 0.85];
    let gamma = amplitude * uniform(rng, (0.8, 1.2));
    let raw: Vec<f64> = shape.iter().map(|s: &f64| s.powf(gamma)).collect();
    let mean = raw.iter().sum::<f64>() / 7.0;
    let mut weekly = [0.0; 7];
    for (w, r) in weekly.iter_mut().zip(&raw) {
        *w = r / mean;
    }
    Coefficients {
        a: uniform(rng, (1.6, 2.4)),
        b: uniform(rng, (0.6, 1.2)),
        c: c_base + uniform(rng, (-0.15, 0.15)),
        d: vec![stay + uniform(rng, (-0.1, 0.1)), closure + uniform(rng, (-0.1, 0.1))],
        weekly,
    }
}

/// Deterministic city with a random outbreak stage.
pub fn generate_city(seed: u64, size_class: SizeClass) -> CityTemplate {
    let stage = seed::rng(seed, &[0x57A6E]).random_range(1..=3u8);
    let id = format!("{}-{seed}", size_class.name());
    generate_named(&id, seed, size_class, stage, (40.0, -90.0), &SynthConfig::default())
}

/// Deterministic city with a planted outbreak stage and grid origin.
pub fn generate_named(
    city_id: &str,
    seed: u64,
    size_class: SizeClass,
    stage: u8,
    origin: (f64, f64),
    cfg: &SynthConfig,
) -> CityTemplate {
    let stage = stage.clamp(1, 3);
    let mut rng = seed::rng(seed, &[seed::hash_str(city_id)]);
    let (lo, hi) = size_class.side_range();
    let rows = rng.random_range(lo..=hi);
    let cols = rng.random_range(lo..=hi);
    let grid = GridSpec::new(city_id, origin, rows, cols).expect("size classes exceed the window");
    let side = rows.min(cols) as f64;

    let peak = uniform(&mut rng, size_class.peak_density());
    let mut population_field = blobs(&mut rng, rows, cols, 5, (side / 10.0, side / 4.0), (0.3, 1.0));
    let pmax = population_field.iter().cloned().fold(0.0, f64::max);
    population_field.mapv_inplace(|v| peak * (0.04 + 0.96 * v / pmax));

    let income_field = blobs(&mut rng, rows, cols, 4, (side / 8.0, side / 3.0), (20.0, 70.0)) + 35.0;

    let mut activity = blobs(&mut rng, rows, cols, 6, (side / 14.0, side / 6.0), (0.2, 1.0));
    let amax = activity.iter().cloned().fold(0.0, f64::max);
    activity.mapv_inplace(|v| 0.3 + v / amax);
    let mut poi_density = &activity * &population_field.mapv(|p| 0.2 + p / peak);
    let mean = poi_density.mean().unwrap_or(1.0);
    let target = uniform(&mut rng, size_class.poi_range());
    poi_density.mapv_inplace(|v| (v / mean * target).round());

    let split = (cols as f64 * uniform(&mut rng, (0.35, 0.65))) as usize;
    let county = Array2::from_shape_fn((rows, cols), |(_, c)| usize::from(c >= split));
    let share0 = uniform(&mut rng, (0.45, 0.75));
    let county_share = vec![share0, 1.0 - share0];

    let epi = epidemic(&mut rng, cfg.days(), size_class, stage);
    let info = detect_stage(&epi.curve).expect("timeline spans at least three months");
    let policy_timeline = policies(&mut rng, &epi.curve, epi.first_peak);
    let coefficients = coefficients(&mut rng, size_class, info.stage);

    CityTemplate {
        grid,
        size_class,
        seed,
        start: cfg.start,
        population_field,
        poi_density,
        income_field,
        county,
        county_share,
        policy_timeline,
        epidemic_curve: epi.curve,
        stage_month: info.month,
        stage: info.stage,
        planted_month: epi.planted_month,
        coefficients,
        noise_sd: cfg.noise_sd,
    }
}

impl CityTemplate {
    pub fn days(&self) -> usize {
        self.epidemic_curve.len()
    }

    pub fn city_id(&self) -> &str {
        &self.grid.city_id
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Days::new(day as u64)
    }

    /// Monday = 0.
    pub fn weekday(&self, day: usize) -> usize {
        self.date(day).weekday().num_days_from_monday() as usize
    }

    pub fn county_cases(&self, day: usize, county: usize) -> f64 {
        self.epidemic_curve[day] * self.county_share[county]
    }

    /// Argument of the logistic at one cell and day.
    pub fn drive(&self, day: usize, row: usize, col: usize) -> f64 {
        let k = &self.coefficients;
        let cases = self.county_cases(day, self.county[[row, col]]);
        let policy: f64 = k
            .d
            .iter()
            .enumerate()
            .map(|(j, d)| d * self.policy_timeline[[day, j]])
            .sum();
        k.a * self.population_field[[row, col]] / POP_REF + k.b * self.income_field[[row, col]] / INCOME_REF
            - k.c * cases.ln_1p() / CASE_REF.ln_1p()
            - policy
    }

    /// Expected visits before noise and rounding.
    pub fn expected(&self, day: usize, row: usize, col: usize) -> f64 {
        self.poi_density[[row, col]] * sigmoid(self.drive(day, row, col)) * self.coefficients.weekly[self.weekday(day)]
    }

    /// Noise-free closed form for one day.
    pub fn noiseless_mobility(&self, day: usize) -> MobilityMap {
        MobilityMap(Array2::from_shape_fn((self.grid.rows, self.grid.cols), |(r, c)| {
            self.expected(day, r, c).round()
        }))
    }

    /// Multiplicative noise factors; drawn independently of the drivers so
    /// that two templates differing only in drivers share the same noise.
    fn noise(&self) -> Array3<f64> {
        let shape = (self.days(), self.grid.rows, self.grid.cols);
        if self.noise_sd <= 0.0 {
            return Array3::ones(shape);
        }
        let mut rng = seed::rng(self.seed, &[seed::hash_str(self.city_id()), 0x401_5E]);
        let normal = Normal::new(0.0, self.noise_sd).expect("finite sd");
        Array3::from_shape_simple_fn(shape, || 1.0 + normal.sample(&mut rng))
    }

    /// Daily visit maps, `(day, row, col)`.
    pub fn simulate_mobility(&self) -> Array3<f64> {
        let mut m = self.noise();
        for ((d, r, c), v) in m.indexed_iter_mut() {
            *v = (self.expected(d, r, c) * v.max(0.0)).round();
        }
        m
    }

    /// Condition layers in [`FEATURES`] order, `(day, feature, row, col)`.
    pub fn conditions(&self) -> Array4<f64> {
        let (rows, cols) = (self.grid.rows, self.grid.cols);
        Array4::from_shape_fn((self.days(), FEATURES.len(), rows, cols), |(d, f, r, c)| match f {
            0 => self.population_field[[r, c]],
            1 => self.income_field[[r, c]],
            2 => self.poi_density[[r, c]],
            3 => self.county_cases(d, self.county[[r, c]]).ln_1p(),
            4 => self.policy_timeline[[d, 0]],
            5 => self.policy_timeline[[d, 1]],
            _ => self.weekday(d) as f64 / 6.0,
        })
    }

    pub fn to_rasters(&self) -> CityRasters {
        CityRasters {
            grid: self.grid.clone(),
            feature_names: FEATURES.iter().map(|s| s.to_string()).collect::<Vec<_>>().into(),
            dates: (0..self.days()).map(|d| self.date(d)).collect(),
            conditions: self.conditions().mapv(|v| v as f32),
            mobility: self.simulate_mobility().mapv(|v| v as f32),
        }
    }

    pub fn feature_names() -> Arc<[String]> {
        FEATURES.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
    }
}
