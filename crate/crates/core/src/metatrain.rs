//! First-order MAML over mobility-estimation tasks: alternating inner
//! updates of D and G on each task's support set, an outer step from the
//! query-set gradients at the adapted parameters, and fast adaptation on a
//! held-out city.

use std::collections::BTreeMap;

use ndarray::{Array2, Array5, Axis};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::embed::TaskEmbedding;
use crate::error::{Error, Result};
use crate::griddata::{CityRasters, Normalizer, Sample};
use crate::nets::batch::sample_noise;
use crate::nets::{
    disc_loss, gen_adv_loss, make_disc_batches, mse_loss, Batch, Discriminator, GanMode, Generator, NetConfig,
};
use crate::par::{self, ExecMode};
use crate::params::{all_finite, clip_norm, sgd_step, Adam};
use crate::seed::{self, Rng};
use crate::sttg::{Subgraph, TaskGraph};
use crate::griddata::tasks::Task;

const STREAM_INIT_G: u64 = 1;
const STREAM_INIT_D: u64 = 2;
const STREAM_SELECT: u64 = 3;
const STREAM_TASK: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterOptimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner learning rate.
    pub alpha: f64,
    /// Outer learning rate.
    pub beta: f64,
    pub inner_d_steps: usize,
    pub inner_g_steps: usize,
    /// Tasks per outer step.
    pub task_batch: usize,
    /// Samples per inner or query minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the pixel MSE added to the generator loss.
    pub recon_weight: f64,
    /// Weight of the graph autoencoder loss added to the generator loss.
    pub vgae_weight: f64,
    pub outer_optimizer: OuterOptimizer,
    pub gan_mode: GanMode,
    /// Gradient norm cap for inner and adaptation steps; 0 disables.
    pub grad_clip: f64,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
    /// Also update D during adaptation.
    pub adapt_disc: bool,
    /// Noise draws averaged per estimate.
    pub estimate_draws: usize,
    /// Epoch interval between checkpoints; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 1e-3,
            inner_d_steps: 5,
            inner_g_steps: 5,
            task_batch: 4,
            batch_size: 8,
            epochs: 200,
            recon_weight: 1.0,
            vgae_weight: 0.1,
            outer_optimizer: OuterOptimizer::Adam,
            gan_mode: GanMode::Saturating,
            grad_clip: 0.0,
            adapt_steps: 100,
            adapt_lr: 1e-2,
            adapt_disc: false,
            estimate_draws: 1,
            checkpoint_every: 20,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [("alpha", self.alpha), ("beta", self.beta), ("adapt_lr", self.adapt_lr)];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.task_batch == 0 || self.batch_size == 0 || self.estimate_draws == 0 {
            return Err(Error::InvalidParam("task_batch, batch_size and estimate_draws must be positive".into()));
        }
        if !(self.recon_weight >= 0.0 && self.vgae_weight >= 0.0 && self.grad_clip >= 0.0) {
            return Err(Error::InvalidParam("loss weights and grad_clip must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Generator and discriminator architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub gen: Generator,
    pub disc: Discriminator,
}

impl Models {
    pub fn new(net: &NetConfig, with_graph: bool) -> Self {
        Self { gen: Generator::new(net, with_graph), disc: Discriminator::new(net) }
    }

    pub fn net(&self) -> &NetConfig {
        &self.gen.cfg
    }

    pub fn uses_graph(&self) -> bool {
        self.gen.encoder.is_some()
    }

    /// Fresh `(theta_G, theta_D)`.
    pub fn init(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        (
            self.gen.init_params(&mut seed::rng(seed, &[STREAM_INIT_G])),
            self.disc.init_params(&mut seed::rng(seed, &[STREAM_INIT_D])),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterState {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl OuterState {
    pub fn new(kind: OuterOptimizer, len: usize, lr: f64) -> Self {
        match kind {
            OuterOptimizer::Sgd => Self::Sgd { lr },
            OuterOptimizer::Adam => Self::Adam(Adam::new(len, lr)),
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Self::Sgd { lr } => sgd_step(params, grad, *lr),
            Self::Adam(a) if a.lr == 0.0 => {}
            Self::Adam(a) => a.update(params, grad),
        }
    }
}

/// Meta parameters and outer optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub theta_g: Vec<f64>,
    pub theta_d: Vec<f64>,
    pub opt_g: OuterState,
    pub opt_d: OuterState,
    /// Completed outer steps.
    pub epoch: usize,
}

impl MetaState {
    pub fn new(models: &Models, cfg: &MetaConfig, seed: u64) -> Self {
        let (theta_g, theta_d) = models.init(seed);
        Self {
            opt_g: OuterState::new(cfg.outer_optimizer, theta_g.len(), cfg.beta),
            opt_d: OuterState::new(cfg.outer_optimizer, theta_d.len(), cfg.beta),
            theta_g,
            theta_d,
            epoch: 0,
        }
    }
}

/// Read-only inputs shared by every task computation.
#[derive(Clone, Copy)]
pub struct TaskEnv<'a> {
    pub models: &'a Models,
    pub cfg: &'a MetaConfig,
    pub cities: &'a BTreeMap<String, CityRasters>,
    pub norm: &'a Normalizer,
}

/// Generator loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenLoss {
    pub adv: f64,
    pub recon: f64,
    pub vgae: f64,
    pub total: f64,
}

/// Losses on a task's query set at the adapted parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryLoss {
    pub d: f64,
    pub g: GenLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_id: String,
    pub grad_g: Vec<f64>,
    pub grad_d: Vec<f64>,
    pub query: QueryLoss,
}

/// Mean query losses of one outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub tasks: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub recon: f64,
    pub vgae: f64,
}

fn finite(v: f64, what: &str, stage: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: what.into(), stage: stage.into() })
    }
}

struct Embedded {
    rows: Array2<f64>,
    emb: Option<TaskEmbedding>,
}

impl<'a> TaskEnv<'a> {
    pub fn batch(&self, samples: &[Sample]) -> Result<Batch> {
        Batch::from_samples(|id| self.cities.get(id), samples, self.norm)
    }

    /// Up to `batch_size` distinct samples in random order.
    pub fn minibatch(&self, samples: &[Sample], rng: &mut Rng) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::Empty("sample set".into()));
        }
        let picked: Vec<Sample> = samples.choose_multiple(rng, self.cfg.batch_size).cloned().collect();
        self.batch(&picked)
    }

    fn embed(&self, pg: &[f64], sub: Option<&Subgraph>, rows: usize, rng: Option<&mut Rng>) -> Result<Embedded> {
        let z_dim = self.models.net().z_dim;
        match (&self.models.gen.encoder, sub) {
            (None, _) => Ok(Embedded { rows: Array2::zeros((rows, z_dim)), emb: None }),
            (Some(_), None) => Err(Error::InvalidParam("graph variant needs a subgraph".into())),
            (Some(enc), Some(sub)) => {
                if sub.features.ncols() != enc.in_dim {
                    return Err(Error::shape("node features", enc.in_dim, sub.features.ncols()));
                }
                let eta = rng.map(|r| enc.sample_eta(sub.len(), r));
                let emb = enc.embed(pg, sub, eta);
                let rows = emb.z.broadcast((rows, z_dim)).expect("row vector").to_owned();
                Ok(Embedded { rows, emb: Some(emb) })
            }
        }
    }

    /// Generated maps for `cond` in model units, `(B, l*l)`. Without an
    /// RNG the embedding uses its mean and noise is drawn from a fixed stream.
    pub fn generate(&self, pg: &[f64], cond: &Array5<f64>, sub: Option<&Subgraph>, rng: &mut Rng) -> Result<Array2<f64>> {
        let b = cond.dim().0;
        let net = self.models.net();
        let emb = self.embed(pg, sub, b, None)?;
        let mut acc = Array2::<f64>::zeros((b, net.pixels()));
        for _ in 0..self.cfg.estimate_draws {
            let noise = sample_noise(b, net, rng);
            acc += &self.models.gen.forward(pg, cond, &noise, &emb.rows)?.out;
        }
        Ok(acc / self.cfg.estimate_draws as f64)
    }

    /// `f_D` on a minibatch and its gradient with respect to `theta_D`.
    pub fn d_loss_grad(
        &self,
        pg: &[f64],
        pd: &[f64],
        batch: &Batch,
        sub: Option<&Subgraph>,
        rng: &mut Rng,
    ) -> Result<(f64, Vec<f64>)> {
        let (gen, disc) = (&self.models.gen, &self.models.disc);
        let b = batch.len();
        let emb = self.embed(pg, sub, b, Some(rng))?;
        let noise = sample_noise(b, self.models.net(), rng);
        let fake = gen.forward(pg, &batch.cond, &noise, &emb.rows)?.out;
        let db = make_disc_batches(&fake, &batch.target, rng)?;
        let cond = batch.cond.select(Axis(0), &db.source);
        let history = batch.history.select(Axis(0), &db.source);
        let cache = disc.forward(pd, &cond, &history, db.candidates.view())?;
        let (loss, dl) = disc_loss(&cache.logits, &db.labels, db.per_combo);
        finite(loss, "discriminator loss", "f_D")?;
        let mut grad = vec![0.0; pd.len()];
        disc.backward(pd, &cache, dl.view(), &mut grad, false);
        Ok((loss, grad))
    }

    /// Generator objective on a minibatch and its gradient with respect to
    /// `theta_G`, including the encoder.
    pub fn g_loss_grad(
        &self,
        pg: &[f64],
        pd: &[f64],
        batch: &Batch,
        sub: Option<&Subgraph>,
        rng: &mut Rng,
    ) -> Result<(GenLoss, Vec<f64>)> {
        let (gen, disc, cfg) = (&self.models.gen, &self.models.disc, self.cfg);
        let b = batch.len();
        let emb = self.embed(pg, sub, b, Some(rng))?;
        let noise = sample_noise(b, self.models.net(), rng);
        let gcache = gen.forward(pg, &batch.cond, &noise, &emb.rows)?;
        let dcache = disc.forward(pd, &batch.cond, &batch.history, gcache.out.view())?;
        let (adv, dl) = gen_adv_loss(&dcache.logits, cfg.gan_mode);
        let mut scratch = vec![0.0; pd.len()];
        let mut dout = disc.backward(pd, &dcache, dl.view(), &mut scratch, true).expect("candidate gradient");
        let (recon, dm) = mse_loss(&gcache.out, &batch.target);
        dout.scaled_add(cfg.recon_weight, &dm);
        let mut grad = vec![0.0; pg.len()];
        let dz = gen.backward(pg, &gcache, dout.view(), &mut grad);
        let mut vgae = 0.0;
        if let (Some(enc), Some(e), Some(sub)) = (&gen.encoder, &emb.emb, sub) {
            vgae = enc.loss(sub, &e.cache);
            enc.backward(pg, sub, &e.cache, Some(&dz.sum_axis(Axis(0))), cfg.vgae_weight, &mut grad);
        }
        let total = adv + cfg.recon_weight * recon + cfg.vgae_weight * vgae;
        finite(total, "generator loss", "f_G")?;
        Ok((GenLoss { adv, recon, vgae, total }, grad))
    }

    fn step(&self, params: &mut [f64], mut grad: Vec<f64>, lr: f64, what: &str) -> Result<()> {
        if !all_finite(&grad) {
            return Err(Error::NonFinite { what: what.into(), stage: "gradient".into() });
        }
        if self.cfg.grad_clip > 0.0 {
            clip_norm(&mut grad, self.cfg.grad_clip);
        }
        sgd_step(params, &grad, lr);
        Ok(())
    }

    /// One descent step of D on `f_D`; returns the loss before the step.
    pub fn inner_update_d(
        &self,
        pg: &[f64],
        pd: &mut [f64],
        batch: &Batch,
        sub: Option<&Subgraph>,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<f64> {
        let (loss, grad) = self.d_loss_grad(pg, pd, batch, sub, rng)?;
        self.step(pd, grad, lr, "discriminator gradient")?;
        Ok(loss)
    }

    /// One descent step of G on its objective; returns the loss before the step.
    pub fn inner_update_g(
        &self,
        pg: &mut [f64],
        pd: &[f64],
        batch: &Batch,
        sub: Option<&Subgraph>,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<GenLoss> {
        let (loss, grad) = self.g_loss_grad(pg, pd, batch, sub, rng)?;
        self.step(pg, grad, lr, "generator gradient")?;
        Ok(loss)
    }

    /// Inner loop on the support set followed by query gradients at the
    /// adapted parameters. The meta parameters are only read.
    pub fn run_task(&self, state: &MetaState, task: &Task, sub: Option<&Subgraph>, rng: &mut Rng) -> Result<TaskOutcome> {
        let cfg = self.cfg;
        let mut pg = state.theta_g.clone();
        let mut pd = state.theta_d.clone();
        for s in 0..cfg.inner_d_steps.max(cfg.inner_g_steps) {
            if s < cfg.inner_d_steps {
                let b = self.minibatch(&task.train, rng)?;
                self.inner_update_d(&pg, &mut pd, &b, sub, cfg.alpha, rng)?;
            }
            if s < cfg.inner_g_steps {
                let b = self.minibatch(&task.train, rng)?;
                self.inner_update_g(&mut pg, &pd, &b, sub, cfg.alpha, rng)?;
            }
        }
        let q = self.minibatch(&task.test, rng)?;
        let (d, grad_d) = self.d_loss_grad(&pg, &pd, &q, sub, rng)?;
        let (g, grad_g) = self.g_loss_grad(&pg, &pd, &q, sub, rng)?;
        Ok(TaskOutcome { task_id: task.task_id.clone(), grad_g, grad_d, query: QueryLoss { d, g } })
    }

    /// Subgraph per task city, checked before any training starts.
    pub fn task_subgraphs(&self, tasks: &[Task], graph: Option<&TaskGraph>) -> Result<BTreeMap<String, Subgraph>> {
        let mut subs = BTreeMap::new();
        for t in tasks {
            if !self.cities.contains_key(&*t.city_id) {
                return Err(Error::UnknownCity(t.city_id.to_string()));
            }
            if !self.models.uses_graph() || subs.contains_key(&*t.city_id) {
                continue;
            }
            let g = graph.ok_or_else(|| Error::InvalidParam("graph variant needs a task graph".into()))?;
            subs.insert(t.city_id.to_string(), g.subgraph_1hop(&t.city_id)?);
        }
        Ok(subs)
    }

    /// Copies the meta parameters and fine-tunes them on `support`.
    /// Returns `(theta_G', theta_D')` and the generator loss per step.
    pub fn adapt(
        &self,
        state: &MetaState,
        support: &[Sample],
        sub: Option<&Subgraph>,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<GenLoss>)> {
        if support.is_empty() {
            return Err(Error::Empty("adaptation set".into()));
        }
        let cfg = self.cfg;
        let mut pg = state.theta_g.clone();
        let mut pd = state.theta_d.clone();
        let mut losses = Vec::with_capacity(cfg.adapt_steps);
        for _ in 0..cfg.adapt_steps {
            if cfg.adapt_disc {
                let b = self.minibatch(support, rng)?;
                self.inner_update_d(&pg, &mut pd, &b, sub, cfg.adapt_lr, rng)?;
            }
            let b = self.minibatch(support, rng)?;
            losses.push(self.inner_update_g(&mut pg, &pd, &b, sub, cfg.adapt_lr, rng)?);
        }
        Ok((pg, pd, losses))
    }
}

/// `theta <- theta - beta * mean_i grad_i` for both networks, through the
/// configured outer optimizer.
pub fn meta_outer_update(state: &mut MetaState, outcomes: &[TaskOutcome]) -> Result<()> {
    if outcomes.is_empty() {
        return Err(Error::Empty("task batch".into()));
    }
    let n = outcomes.len() as f64;
    let mut gg = vec![0.0; state.theta_g.len()];
    let mut gd = vec![0.0; state.theta_d.len()];
    for o in outcomes {
        if o.grad_g.len() != gg.len() || o.grad_d.len() != gd.len() {
            return Err(Error::shape("task gradient", gg.len(), o.grad_g.len()));
        }
        gg.iter_mut().zip(&o.grad_g).for_each(|(a, b)| *a += b / n);
        gd.iter_mut().zip(&o.grad_d).for_each(|(a, b)| *a += b / n);
    }
    state.opt_g.apply(&mut state.theta_g, &gg);
    state.opt_d.apply(&mut state.theta_d, &gd);
    Ok(())
}

/// Task indices of one outer step, drawn without replacement.
pub fn select_tasks(n_tasks: usize, batch: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..n_tasks).collect();
    let mut rng = seed::rng(seed, &[STREAM_SELECT, epoch as u64]);
    all.choose_multiple(&mut rng, batch).copied().collect()
}

/// Meta-trains from `state` up to `cfg.epochs` outer steps. `on_epoch` sees
/// the state after every step, e.g. for checkpointing. Tasks whose losses
/// turn non-finite are dropped from their outer step with a warning.
pub fn train<F>(
    env: &TaskEnv<'_>,
    graph: Option<&TaskGraph>,
    tasks: &[Task],
    state: &mut MetaState,
    seed: u64,
    mode: ExecMode,
    mut on_epoch: F,
) -> Result<Vec<EpochLog>>
where
    F: FnMut(&MetaState, &EpochLog) -> Result<()>,
{
    env.cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Empty("training tasks".into()));
    }
    let subs = env.task_subgraphs(tasks, graph)?;
    let mut history = Vec::new();
    while state.epoch < env.cfg.epochs {
        let epoch = state.epoch;
        let chosen = select_tasks(tasks.len(), env.cfg.task_batch, seed, epoch);
        let snapshot = &*state;
        let results = par::map(mode, &chosen, |&ti| {
            let task = &tasks[ti];
            let mut rng = seed::rng(seed, &[STREAM_TASK, epoch as u64, ti as u64]);
            env.run_task(snapshot, task, subs.get(&*task.city_id), &mut rng)
        });
        let mut outcomes = Vec::with_capacity(results.len());
        for (r, &ti) in results.into_iter().zip(&chosen) {
            match r {
                Ok(o) => outcomes.push(o),
                Err(e @ Error::NonFinite { .. }) => log::warn!("epoch {epoch}: task {} aborted: {e}", tasks[ti].task_id),
                Err(e) => return Err(e),
            }
        }
        if outcomes.is_empty() {
            return Err(Error::NonFinite { what: "every task in the batch".into(), stage: format!("epoch {epoch}") });
        }
        meta_outer_update(state, &outcomes)?;
        state.epoch += 1;
        let n = outcomes.len() as f64;
        let mean = |f: fn(&TaskOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
        let log = EpochLog {
            epoch,
            tasks: outcomes.len(),
            d_loss: mean(|o| o.query.d),
            g_adv: mean(|o| o.query.g.adv),
            recon: mean(|o| o.query.g.recon),
            vgae: mean(|o| o.query.g.vgae),
        };
        log::debug!("epoch {epoch}: d {:.4} g {:.4} recon {:.4}", log.d_loss, log.g_adv, log.recon);
        on_epoch(state, &log)?;
        history.push(log);
    }
    Ok(history)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::embed::tests::four_node_fixture;
    use crate::gradcheck::{central_difference, relative_error};
    use crate::griddata::tasks::{partition_tasks, TaskConfig};
    use crate::griddata::window::tests::blank_city;

    pub(crate) struct Fixture {
        pub models: Models,
        pub cfg: MetaConfig,
        pub cities: BTreeMap<String, CityRasters>,
        pub norm: Normalizer,
        pub tasks: Vec<Task>,
    }

    impl Fixture {
        pub fn env(&self) -> TaskEnv<'_> {
            TaskEnv { models: &self.models, cfg: &self.cfg, cities: &self.cities, norm: &self.norm }
        }
    }

    /// Tiny networks over two 10x10 cities of five weeks each.
    pub(crate) fn fixture(with_graph: bool) -> Fixture {
        let net = NetConfig::tiny();
        let mut cities = BTreeMap::new();
        for id in ["a", "b"] {
            let mut c = blank_city(id, 10, 10, 35, net.features);
            let shift = if id == "a" { 0.0 } else { 3.0 };
            c.mobility.mapv_inplace(|v| (v * 0.1).sin().abs() * 5.0 + shift);
            c.conditions.mapv_inplace(|v| (v * 0.37).cos());
            cities.insert(id.to_string(), c);
        }
        let parts: Vec<_> = cities.values().map(|c| (c, 0..35)).collect();
        let norm = Normalizer::fit(&parts).unwrap();
        let tcfg = TaskConfig { window: net.window, horizon: net.horizon, stride: 6, ..Default::default() };
        let tasks = cities.values().flat_map(|c| partition_tasks(c, &tcfg, 0).unwrap()).collect();
        let cfg = MetaConfig { alpha: 0.01, beta: 0.01, inner_d_steps: 1, inner_g_steps: 1, task_batch: 2, batch_size: 3, epochs: 2, ..Default::default() };
        Fixture { models: Models::new(&net, with_graph), cfg, cities, norm, tasks }
    }

    fn graph() -> TaskGraph {
        use crate::sttg::{Edge, EdgeAttrs, Scenario, TaskNode, Tier};
        let node = |id: &str, s: u8, a: [f64; 3]| TaskNode { city_id: id.into(), stage: s, tier: Tier::Hub, attrs: a.to_vec() };
        TaskGraph {
            scenario: Scenario::S2,
            nodes: vec![node("a", 1, [1.0, 0.5, 0.0]), node("b", 2, [2.0, -0.3, 1.0]), node("c", 3, [3.0, 0.1, 0.0])],
            edges: vec![
                Edge { src: 0, dst: 1, weight: 1.0, attrs: EdgeAttrs::default() },
                Edge { src: 1, dst: 0, weight: 0.5, attrs: EdgeAttrs::default() },
                Edge { src: 2, dst: 0, weight: 0.5, attrs: EdgeAttrs::default() },
            ],
        }
    }

    fn query(f: &Fixture) -> Batch {
        f.env().batch(&f.tasks[0].test[..3]).unwrap()
    }

    #[test]
    fn zero_rate_leaves_parameters_unchanged() {
        let f = fixture(true);
        let env = f.env();
        let (mut pg, mut pd) = f.models.init(1);
        let (g0, d0) = (pg.clone(), pd.clone());
        let b = query(&f);
        let sub = four_node_fixture();
        let mut rng = seed::rng(0, &[]);
        env.inner_update_d(&pg, &mut pd, &b, Some(&sub), 0.0, &mut rng).unwrap();
        env.inner_update_g(&mut pg, &pd, &b, Some(&sub), 0.0, &mut rng).unwrap();
        assert_eq!(pg, g0);
        assert_eq!(pd, d0);
    }

    #[test]
    fn small_discriminator_step_lowers_its_loss() {
        let f = fixture(false);
        let env = f.env();
        let (pg, mut pd) = f.models.init(2);
        let b = query(&f);
        let rng = seed::rng(5, &[]);
        let before = env.d_loss_grad(&pg, &pd, &b, None, &mut rng.clone()).unwrap().0;
        env.inner_update_d(&pg, &mut pd, &b, None, 1e-3, &mut rng.clone()).unwrap();
        let after = env.d_loss_grad(&pg, &pd, &b, None, &mut rng.clone()).unwrap().0;
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn small_generator_step_with_frozen_d_does_not_raise_its_loss() {
        for mode in [GanMode::Saturating, GanMode::NonSaturating] {
            let mut f = fixture(true);
            f.cfg.gan_mode = mode;
            let env = f.env();
            let (mut pg, pd) = f.models.init(3);
            let b = query(&f);
            let sub = four_node_fixture();
            let rng = seed::rng(6, &[]);
            let before = env.g_loss_grad(&pg, &pd, &b, Some(&sub), &mut rng.clone()).unwrap().0.total;
            env.inner_update_g(&mut pg, &pd, &b, Some(&sub), 1e-3, &mut rng.clone()).unwrap();
            let after = env.g_loss_grad(&pg, &pd, &b, Some(&sub), &mut rng.clone()).unwrap().0.total;
            assert!(after <= before, "{mode:?}: {after} > {before}");
        }
    }

    #[test]
    fn discriminator_loss_gradient_matches_finite_differences() {
        let f = fixture(true);
        let env = f.env();
        let (pg, pd) = f.models.init(4);
        let b = query(&f);
        let sub = four_node_fixture();
        let rng = seed::rng(8, &[]);
        let (_, grad) = env.d_loss_grad(&pg, &pd, &b, Some(&sub), &mut rng.clone()).unwrap();
        let numeric = central_difference(&pd, 1e-5, |q| env.d_loss_grad(&pg, q, &b, Some(&sub), &mut rng.clone()).unwrap().0);
        assert!(relative_error(&grad, &numeric) < 1e-4);
    }

    #[test]
    fn generator_loss_gradient_matches_finite_differences() {
        let mut f = fixture(true);
        f.cfg.recon_weight = 0.7;
        f.cfg.vgae_weight = 0.3;
        let env = f.env();
        let (pg, pd) = f.models.init(5);
        let b = query(&f);
        let sub = four_node_fixture();
        let rng = seed::rng(9, &[]);
        let (_, grad) = env.g_loss_grad(&pg, &pd, &b, Some(&sub), &mut rng.clone()).unwrap();
        let numeric = central_difference(&pg, 1e-5, |q| env.g_loss_grad(q, &pd, &b, Some(&sub), &mut rng.clone()).unwrap().0.total);
        let err = relative_error(&grad, &numeric);
        assert!(err < 1e-4, "{err}");
    }

    fn sgd_fixture() -> Fixture {
        let mut f = fixture(false);
        f.cfg.inner_d_steps = 0;
        f.cfg.inner_g_steps = 0;
        f.cfg.outer_optimizer = OuterOptimizer::Sgd;
        f.cfg.beta = 0.05;
        f
    }

    #[test]
    fn one_task_without_inner_steps_is_a_plain_gradient_step() {
        let f = sgd_fixture();
        let env = f.env();
        let mut state = MetaState::new(&f.models, &f.cfg, 7);
        let before = state.clone();
        let task = &f.tasks[0];
        let out = env.run_task(&state, task, None, &mut seed::rng(1, &[])).unwrap();
        // Same minibatch and noise, drawn directly at the meta parameters.
        let mut rng = seed::rng(1, &[]);
        let q = env.minibatch(&task.test, &mut rng).unwrap();
        let (_, gd) = env.d_loss_grad(&before.theta_g, &before.theta_d, &q, None, &mut rng).unwrap();
        let (_, gg) = env.g_loss_grad(&before.theta_g, &before.theta_d, &q, None, &mut rng).unwrap();
        meta_outer_update(&mut state, &[out]).unwrap();
        for (i, p) in state.theta_g.iter().enumerate() {
            assert!((p - (before.theta_g[i] - 0.05 * gg[i])).abs() < 1e-10);
        }
        for (i, p) in state.theta_d.iter().enumerate() {
            assert!((p - (before.theta_d[i] - 0.05 * gd[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn two_tasks_average_their_query_gradients() {
        let f = sgd_fixture();
        let env = f.env();
        let mut state = MetaState::new(&f.models, &f.cfg, 7);
        let before = state.clone();
        let outs: Vec<TaskOutcome> = f.tasks[..2]
            .iter()
            .enumerate()
            .map(|(i, t)| env.run_task(&state, t, None, &mut seed::rng(i as u64, &[])).unwrap())
            .collect();
        meta_outer_update(&mut state, &outs).unwrap();
        for i in 0..state.theta_g.len() {
            let mut mean = 0.0;
            for o in &outs {
                mean += o.grad_g[i];
            }
            mean /= 2.0;
            assert!((state.theta_g[i] - (before.theta_g[i] - 0.05 * mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_outer_rate_freezes_meta_parameters() {
        for kind in [OuterOptimizer::Sgd, OuterOptimizer::Adam] {
            let mut f = fixture(false);
            f.cfg.beta = 0.0;
            f.cfg.outer_optimizer = kind;
            let mut state = MetaState::new(&f.models, &f.cfg, 3);
            let before = state.clone();
            let out = f.env().run_task(&state, &f.tasks[0], None, &mut seed::rng(0, &[])).unwrap();
            meta_outer_update(&mut state, &[out]).unwrap();
            assert_eq!(state.theta_g, before.theta_g);
            assert_eq!(state.theta_d, before.theta_d);
        }
    }

    #[test]
    fn empty_task_batch_is_an_error() {
        let f = fixture(false);
        let mut state = MetaState::new(&f.models, &f.cfg, 3);
        assert!(matches!(meta_outer_update(&mut state, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn inner_loop_does_not_touch_meta_parameters() {
        let f = fixture(true);
        let state = MetaState::new(&f.models, &f.cfg, 3);
        let before = state.clone();
        let sub = graph().subgraph_1hop("a").unwrap();
        let out = f.env().run_task(&state, &f.tasks[0], Some(&sub), &mut seed::rng(0, &[])).unwrap();
        assert_eq!(state, before);
        assert!(out.grad_g.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn one_epoch_gives_one_history_entry() {
        let mut f = fixture(true);
        f.cfg.epochs = 1;
        f.cfg.task_batch = 1;
        let g = graph();
        let mut state = MetaState::new(&f.models, &f.cfg, 3);
        let h = train(&f.env(), Some(&g), &f.tasks[..1], &mut state, 1, ExecMode::Sequential, |_, _| Ok(())).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(state.epoch, 1);
    }

    #[test]
    fn reruns_and_execution_modes_agree_bitwise() {
        let f = fixture(true);
        let g = graph();
        let run = |mode| {
            let mut state = MetaState::new(&f.models, &f.cfg, 3);
            let h = train(&f.env(), Some(&g), &f.tasks, &mut state, 11, mode, |_, _| Ok(())).unwrap();
            (h, state)
        };
        let a = run(ExecMode::Parallel);
        let b = run(ExecMode::Parallel);
        let c = run(ExecMode::Sequential);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn city_missing_from_graph_fails_before_training() {
        let f = fixture(true);
        let mut g = graph();
        g.nodes[1].city_id = "zz".into();
        let mut state = MetaState::new(&f.models, &f.cfg, 3);
        let mut calls = 0;
        let r = train(&f.env(), Some(&g), &f.tasks, &mut state, 1, ExecMode::Sequential, |_, _| {
            calls += 1;
            Ok(())
        });
        assert!(matches!(r, Err(Error::UnknownCity(c)) if c == "b"));
        assert_eq!(calls, 0);
        assert_eq!(state.epoch, 0);
    }

    #[test]
    fn adaptation_without_steps_returns_meta_parameters() {
        let mut f = fixture(false);
        f.cfg.adapt_steps = 0;
        let state = MetaState::new(&f.models, &f.cfg, 3);
        let (pg, pd, l) = f.env().adapt(&state, &f.tasks[0].train, None, &mut seed::rng(0, &[])).unwrap();
        assert_eq!((pg, pd), (state.theta_g.clone(), state.theta_d.clone()));
        assert!(l.is_empty());
        assert!(matches!(f.env().adapt(&state, &[], None, &mut seed::rng(0, &[])), Err(Error::Empty(_))));
    }

    #[test]
    fn adaptation_leaves_d_alone_unless_asked() {
        let mut f = fixture(false);
        f.cfg.adapt_steps = 2;
        f.cfg.adapt_lr = 0.01;
        let state = MetaState::new(&f.models, &f.cfg, 3);
        let (pg, pd, _) = f.env().adapt(&state, &f.tasks[0].train, None, &mut seed::rng(0, &[])).unwrap();
        assert_ne!(pg, state.theta_g);
        assert_eq!(pd, state.theta_d);
        f.cfg.adapt_disc = true;
        let (_, pd, _) = f.env().adapt(&state, &f.tasks[0].train, None, &mut seed::rng(0, &[])).unwrap();
        assert_ne!(pd, state.theta_d);
    }

    #[test]
    fn config_rejects_negative_rates() {
        let cfg = MetaConfig { alpha: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(MetaConfig::default().validate().is_ok());
    }
}
