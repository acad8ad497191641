use ndarray::{concatenate, Array1, Array2, Array5, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::act::{relu_backward, relu_inplace, softplus, softplus_backward};
use crate::layers::Dense;
use crate::nets::{disc_loss, gen_adv_loss, mse_loss, Batch, GanMode, NetConfig};
use crate::params::{all_finite, Adam, Init, ParamLayout};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CganConfig {
    pub hidden: usize,
    /// Length of the noise vector appended to the flattened conditions.
    pub noise_dim: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub recon_weight: f64,
    pub gan_mode: GanMode,
}

impl Default for CganConfig {
    fn default() -> Self {
        Self { hidden: 128, noise_dim: 32, steps: 300, lr: 1e-3, batch_size: 8, recon_weight: 1.0, gan_mode: GanMode::Saturating }
    }
}

/// Conditional GAN whose generator and discriminator are three fully
/// connected layers over flattened inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cgan {
    pub cfg: CganConfig,
    pub net: NetConfig,
    pub g_layout: ParamLayout,
    pub d_layout: ParamLayout,
    pub g: [Dense; 3],
    pub d: [Dense; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CganState {
    pub theta_g: Vec<f64>,
    pub theta_d: Vec<f64>,
    /// Generator loss per training step.
    pub history: Vec<f64>,
}

struct MlpCache {
    input: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    pre: Array2<f64>,
}

fn mlp_forward(layers: &[Dense; 3], p: &[f64], input: Array2<f64>) -> MlpCache {
    let mut h1 = layers[0].forward(p, input.view());
    relu_inplace(&mut h1);
    let mut h2 = layers[1].forward(p, h1.view());
    relu_inplace(&mut h2);
    let pre = layers[2].forward(p, h2.view());
    MlpCache { input, h1, h2, pre }
}

fn mlp_backward(layers: &[Dense; 3], p: &[f64], c: &MlpCache, dpre: ArrayView2<f64>, grad: &mut [f64], need_dx: bool) -> Option<Array2<f64>> {
    let mut d2 = layers[2].backward(p, c.h2.view(), dpre, grad, true).expect("dx");
    relu_backward(&mut d2, c.h2.view());
    let mut d1 = layers[1].backward(p, c.h1.view(), d2.view(), grad, true).expect("dx");
    relu_backward(&mut d1, c.h1.view());
    layers[0].backward(p, c.input.view(), d1.view(), grad, need_dx)
}

fn flatten(cond: &Array5<f64>) -> Array2<f64> {
    let b = cond.dim().0;
    let std = cond.as_standard_layout();
    Array2::from_shape_vec((b, cond.len() / b.max(1)), std.iter().copied().collect()).expect("row count")
}

impl Cgan {
    pub fn new(net: &NetConfig, cfg: &CganConfig) -> Self {
        let flat = net.horizon * net.features * net.pixels();
        let h = cfg.hidden;
        let gain = std::f64::consts::SQRT_2;
        let mut g_layout = ParamLayout::new();
        let g0 = Dense::new(&mut g_layout, "cgan.g1", flat + cfg.noise_dim, h, gain);
        let g1 = Dense::new(&mut g_layout, "cgan.g2", h, h, gain);
        let w = g_layout.add("cgan.g3.w", h, net.pixels(), Init::Scaled { fan_in: h, gain: 0.5 });
        let b = g_layout.add("cgan.g3.b", 1, net.pixels(), Init::Const(0.541_324_854_612_918_1));
        let mut d_layout = ParamLayout::new();
        let d0 = Dense::new(&mut d_layout, "cgan.d1", flat + net.pixels(), h, gain);
        let d1 = Dense::new(&mut d_layout, "cgan.d2", h, h, gain);
        let d2 = Dense::new(&mut d_layout, "cgan.d3", h, 1, 1.0);
        Self { cfg: cfg.clone(), net: net.clone(), g_layout, d_layout, g: [g0, g1, Dense { w, b }], d: [d0, d1, d2] }
    }

    pub fn init(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        (self.g_layout.init(&mut seed::rng(seed, &[1])), self.d_layout.init(&mut seed::rng(seed, &[2])))
    }

    fn check(&self, cond: &Array5<f64>) -> Result<()> {
        let n = &self.net;
        let (_, t, k, h, w) = cond.dim();
        for (what, e, a) in [("cgan slots", n.horizon, t), ("cgan features", n.features, k), ("cgan window rows", n.window, h), ("cgan window cols", n.window, w)] {
            if e != a {
                return Err(Error::shape(what, e, a));
            }
        }
        Ok(())
    }

    fn noise(&self, b: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((b, self.cfg.noise_dim), || StandardNormal.sample(rng))
    }

    fn g_forward(&self, pg: &[f64], cond_flat: &Array2<f64>, noise: &Array2<f64>) -> (MlpCache, Array2<f64>) {
        let input = concatenate![Axis(1), cond_flat.view(), noise.view()];
        let c = mlp_forward(&self.g, pg, input);
        let out = c.pre.mapv(softplus);
        (c, out)
    }

    fn d_forward(&self, pd: &[f64], cond_flat: &Array2<f64>, cand: ArrayView2<f64>) -> (MlpCache, Array1<f64>) {
        let input = concatenate![Axis(1), cond_flat.view(), cand];
        let c = mlp_forward(&self.d, pd, input);
        let logits = c.pre.column(0).to_owned();
        (c, logits)
    }

    /// Nonnegative maps in model units, `(B, l*l)`.
    pub fn generate(&self, pg: &[f64], cond: &Array5<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        self.check(cond)?;
        let flat = flatten(cond);
        let noise = self.noise(flat.nrows(), rng);
        Ok(self.g_forward(pg, &flat, &noise).1)
    }

    /// Real-versus-generated discriminator loss and its gradient.
    pub fn d_loss_grad(&self, pg: &[f64], pd: &[f64], batch: &Batch, rng: &mut Rng) -> Result<(f64, Vec<f64>)> {
        self.check(&batch.cond)?;
        let b = batch.len();
        let flat = flatten(&batch.cond);
        let noise = self.noise(b, rng);
        let fake = self.g_forward(pg, &flat, &noise).1;
        let cand = concatenate![Axis(0), fake.view(), batch.target.view()];
        let cond2 = concatenate![Axis(0), flat.view(), flat.view()];
        let (c, logits) = self.d_forward(pd, &cond2, cand.view());
        let labels: Vec<f64> = (0..2 * b).map(|i| if i < b { 0.0 } else { 1.0 }).collect();
        let (loss, dl) = disc_loss(&logits, &labels, b);
        let mut grad = vec![0.0; pd.len()];
        mlp_backward(&self.d, pd, &c, dl.insert_axis(Axis(1)).view(), &mut grad, false);
        Ok((loss, grad))
    }

    /// Adversarial plus reconstruction loss of the generator and its gradient.
    pub fn g_loss_grad(&self, pg: &[f64], pd: &[f64], batch: &Batch, rng: &mut Rng) -> Result<(f64, Vec<f64>)> {
        self.check(&batch.cond)?;
        let b = batch.len();
        let flat = flatten(&batch.cond);
        let noise = self.noise(b, rng);
        let (gc, fake) = self.g_forward(pg, &flat, &noise);
        let (dc, logits) = self.d_forward(pd, &flat, fake.view());
        let (adv, dl) = gen_adv_loss(&logits, self.cfg.gan_mode);
        let mut scratch = vec![0.0; pd.len()];
        let dinput = mlp_backward(&self.d, pd, &dc, dl.insert_axis(Axis(1)).view(), &mut scratch, true).expect("dx");
        let width = flat.ncols();
        let mut dout = dinput.slice(ndarray::s![.., width..]).to_owned();
        let (recon, dm) = mse_loss(&fake, &batch.target);
        dout.scaled_add(self.cfg.recon_weight, &dm);
        softplus_backward(&mut dout, gc.pre.view());
        let mut grad = vec![0.0; pg.len()];
        mlp_backward(&self.g, pg, &gc, dout.view(), &mut grad, false);
        Ok((adv + self.cfg.recon_weight * recon, grad))
    }

    /// Alternating Adam steps of D and G on minibatches from `next_batch`.
    pub fn train<F>(&self, seed: u64, mut next_batch: F) -> Result<CganState>
    where
        F: FnMut(&mut Rng) -> Result<Batch>,
    {
        let (mut pg, mut pd) = self.init(seed);
        let mut opt_g = Adam::new(pg.len(), self.cfg.lr);
        let mut opt_d = Adam::new(pd.len(), self.cfg.lr);
        let mut rng = seed::rng(seed, &[3]);
        let mut history = Vec::with_capacity(self.cfg.steps);
        for step in 0..self.cfg.steps {
            let b = next_batch(&mut rng)?;
            let (_, gd) = self.d_loss_grad(&pg, &pd, &b, &mut rng)?;
            let b = next_batch(&mut rng)?;
            let (lg, gg) = self.g_loss_grad(&pg, &pd, &b, &mut rng)?;
            if !lg.is_finite() || !all_finite(&gd) || !all_finite(&gg) {
                return Err(Error::NonFinite { what: "cgan gradient".into(), stage: format!("step {step}") });
            }
            opt_d.update(&mut pd, &gd);
            opt_g.update(&mut pg, &gg);
            history.push(lg);
        }
        Ok(CganState { theta_g: pg, theta_d: pd, history })
    }
}
