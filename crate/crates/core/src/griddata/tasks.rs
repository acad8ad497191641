use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::window::window_samples_in;
use super::{CityRasters, Sample, DAYS_PER_WEEK, HORIZON, WINDOW};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub weeks_total: usize,
    pub weeks_per_task: usize,
    pub train_fraction: f64,
    pub window: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            weeks_total: 35,
            weeks_per_task: 5,
            train_fraction: 0.8,
            window: WINDOW,
            horizon: HORIZON,
            stride: 5,
        }
    }
}

/// One city over `weeks_per_task` consecutive weeks, split into a support
/// (`train`) and query (`test`) set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub city_id: Arc<str>,
    /// Half-open week interval `[start, end)`.
    pub week_range: (usize, usize),
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Task {
    pub fn slot_range(&self) -> std::ops::Range<usize> {
        self.week_range.0 * DAYS_PER_WEEK..self.week_range.1 * DAYS_PER_WEEK
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits one city's timeline into non-overlapping tasks and shuffles each
/// task's samples into an 80/20 support/query split.
pub fn partition_tasks(city: &CityRasters, cfg: &TaskConfig, seed: u64) -> Result<Vec<Task>> {
    let available = city.days() / DAYS_PER_WEEK;
    if city.days() % DAYS_PER_WEEK != 0 {
        log::warn!("{}: dropping {} trailing days of a partial week", city.city_id(), city.days() % DAYS_PER_WEEK);
    }
    let weeks = available.min(cfg.weeks_total);
    if weeks < cfg.weeks_per_task {
        log::warn!(
            "{}: only {weeks} full weeks, fewer than {} per task; no tasks created",
            city.city_id(),
            cfg.weeks_per_task
        );
        return Ok(Vec::new());
    }
    let n_tasks = weeks / cfg.weeks_per_task;
    if weeks % cfg.weeks_per_task != 0 {
        log::warn!(
            "{}: dropping {} trailing weeks that do not fill a task",
            city.city_id(),
            weeks % cfg.weeks_per_task
        );
    }
    let city_key = seed::hash_str(city.city_id());
    let mut tasks = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let w0 = i * cfg.weeks_per_task;
        let w1 = w0 + cfg.weeks_per_task;
        let slots = w0 * DAYS_PER_WEEK..w1 * DAYS_PER_WEEK;
        let mut samples = window_samples_in(city, cfg.window, cfg.horizon, cfg.stride, slots)?;
        let mut rng = seed::rng(seed, &[city_key, i as u64]);
        samples.shuffle(&mut rng);
        let n_train = (cfg.train_fraction * samples.len() as f64).round() as usize;
        let test = samples.split_off(n_train.min(samples.len()));
        tasks.push(Task {
            task_id: format!("{}-w{:02}-{:02}", city.city_id(), w0, w1),
            city_id: Arc::from(city.city_id()),
            week_range: (w0, w1),
            train: samples,
            test,
        });
    }
    Ok(tasks)
}
