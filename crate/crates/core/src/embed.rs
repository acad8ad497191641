//! Variational graph autoencoder over task subgraphs and pooling of its
//! node latents into one task embedding.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::layers::act::{relu_backward, relu_inplace, sigmoid, softplus};
use crate::layers::Dense;
use crate::params::{Init, ParamLayout, Slot};
use crate::sttg::Subgraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

/// `D^-1/2 (A + I) D^-1/2` with `D_ii = sum_j (A + I)_ij`.
pub fn normalize_adjacency(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut hat = a.to_owned() + Array2::<f64>::eye(n);
    let inv_sqrt: Array1<f64> = hat.sum_axis(Axis(1)).mapv(|d| 1.0 / d.sqrt());
    for ((i, j), v) in hat.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    hat
}

/// One graph convolution `act(D^-1/2 (A + I) D^-1/2 X W)`.
pub fn gcn_layer(x: ArrayView2<f64>, a: ArrayView2<f64>, w: ArrayView2<f64>, act: Activation) -> Array2<f64> {
    let mut h = normalize_adjacency(a).dot(&x).dot(&w);
    if act == Activation::Relu {
        relu_inplace(&mut h);
    }
    h
}

/// `sigmoid(Z Z^T)`.
pub fn vgae_decode(z: ArrayView2<f64>) -> Array2<f64> {
    z.dot(&z.t()).mapv(sigmoid)
}

/// Binarized adjacency with self loops, the reconstruction target.
pub fn reconstruction_target(sub: &Subgraph) -> Array2<f64> {
    sub.binary_adjacency() + Array2::<f64>::eye(sub.len())
}

/// Weight of positive entries: negatives per positive, at least 1.
pub fn positive_weight(target: ArrayView2<f64>) -> f64 {
    let pos = target.sum();
    let total = target.len() as f64;
    ((total - pos) / pos.max(1.0)).max(1.0)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over dimensions and averaged
/// over nodes.
pub fn kl_term(mu: ArrayView2<f64>, logvar: ArrayView2<f64>) -> f64 {
    let n = mu.nrows().max(1) as f64;
    mu.iter()
        .zip(logvar.iter())
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum::<f64>()
        / n
}

/// Weighted binary cross-entropy of reconstructed edge probabilities
/// against the binarized adjacency (mean over entries) plus the KL term.
pub fn vgae_loss(sub: &Subgraph, mu: ArrayView2<f64>, logvar: ArrayView2<f64>, rec: ArrayView2<f64>) -> f64 {
    let target = reconstruction_target(sub);
    let pw = positive_weight(target.view());
    let bce: f64 = rec
        .iter()
        .zip(target.iter())
        .map(|(&p, &t)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            if t > 0.5 {
                -pw * p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / target.len() as f64;
    bce + kl_term(mu, logvar)
}

/// Encoder and pooling weights, stored in a shared flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEncoder {
    pub layers: Vec<Slot>,
    pub mu: Slot,
    pub logvar: Slot,
    pub pool: Dense,
    pub in_dim: usize,
    pub hidden: usize,
    pub z_dim: usize,
}

/// Intermediate values of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub a_norm: Array2<f64>,
    /// Input of each shared layer after propagation, `A_norm H`.
    pub propagated: Vec<Array2<f64>>,
    /// Output of each shared layer after ReLU.
    pub hidden: Vec<Array2<f64>>,
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    pub eta: Option<Array2<f64>>,
    pub latents: Array2<f64>,
    pub pooled_input: Array2<f64>,
}

/// Task embedding and the pieces retained for the auxiliary loss.
#[derive(Debug, Clone)]
pub struct TaskEmbedding {
    pub z: Array1<f64>,
    pub cache: EncoderCache,
}

impl GraphEncoder {
    /// Two shared GCN layers `in -> hidden -> hidden`, GCN heads for mean
    /// and log-variance, and a linear pooling of
    /// `[latent(center), mean latent]` to `z_dim`.
    pub fn new(layout: &mut ParamLayout, prefix: &str, in_dim: usize, hidden: usize, z_dim: usize) -> Self {
        let he = |fan_in: usize| Init::Scaled { fan_in, gain: 2f64.sqrt() };
        let layers = vec![
            layout.add(format!("{prefix}.gcn0"), in_dim, hidden, he(in_dim)),
            layout.add(format!("{prefix}.gcn1"), hidden, hidden, he(hidden)),
        ];
        let mu = layout.add(format!("{prefix}.mu"), hidden, z_dim, Init::Scaled { fan_in: hidden, gain: 1.0 });
        let logvar = layout.add(format!("{prefix}.logvar"), hidden, z_dim, Init::Scaled { fan_in: hidden, gain: 0.1 });
        let pool = Dense::new(layout, &format!("{prefix}.pool"), 2 * z_dim, z_dim, 1.0);
        Self { layers, mu, logvar, pool, in_dim, hidden, z_dim }
    }

    /// Encodes a subgraph. With `eta` the latents are `mu + exp(logvar/2) * eta`;
    /// without, they are `mu`.
    pub fn encode(&self, p: &[f64], sub: &Subgraph, eta: Option<Array2<f64>>) -> EncoderCache {
        let a_norm = normalize_adjacency(sub.adjacency.view());
        let mut h = sub.features.clone();
        let mut propagated = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(self.layers.len());
        for w in &self.layers {
            let ah = a_norm.dot(&h);
            let mut out = ah.dot(&w.view(p));
            relu_inplace(&mut out);
            propagated.push(ah);
            hidden.push(out.clone());
            h = out;
        }
        let ah = a_norm.dot(&h);
        let mu = ah.dot(&self.mu.view(p));
        let logvar = ah.dot(&self.logvar.view(p));
        propagated.push(ah);
        let latents = match &eta {
            Some(e) => &mu + &(logvar.mapv(|v| (0.5 * v).exp()) * e),
            None => mu.clone(),
        };
        let center = latents.slice(s![0..1, ..]);
        let mean = latents.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
        let pooled_input = concatenate![Axis(1), center, mean];
        EncoderCache { a_norm, propagated, hidden, mu, logvar, eta, latents, pooled_input }
    }

    pub fn sample_eta<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.z_dim), || StandardNormal.sample(rng))
    }

    pub fn embed(&self, p: &[f64], sub: &Subgraph, eta: Option<Array2<f64>>) -> TaskEmbedding {
        let cache = self.encode(p, sub, eta);
        let z = self.pool.forward(p, cache.pooled_input.view()).row(0).to_owned();
        TaskEmbedding { z, cache }
    }

    /// Auxiliary loss computed from logits for numerical stability.
    pub fn loss(&self, sub: &Subgraph, cache: &EncoderCache) -> f64 {
        let target = reconstruction_target(sub);
        let pw = positive_weight(target.view());
        let logits = cache.latents.dot(&cache.latents.t());
        let bce: f64 = logits
            .iter()
            .zip(target.iter())
            .map(|(&s, &t)| if t > 0.5 { pw * softplus(-s) } else { softplus(s) })
            .sum::<f64>()
            / target.len() as f64;
        bce + kl_term(cache.mu.view(), cache.logvar.view())
    }

    /// Accumulates gradients of `dz . z + weight * loss` into `grad`.
    pub fn backward(&self, p: &[f64], sub: &Subgraph, cache: &EncoderCache, dz: Option<&Array1<f64>>, weight: f64, grad: &mut [f64]) {
        let n = cache.latents.nrows();
        let mut dlat = Array2::<f64>::zeros(cache.latents.raw_dim());
        if let Some(dz) = dz {
            let dz = dz.view().insert_axis(Axis(0));
            let dpool = self.pool.backward(p, cache.pooled_input.view(), dz, grad, true).expect("dx");
            let zd = self.z_dim;
            {
                let mut row0 = dlat.row_mut(0);
                row0 += &dpool.slice(s![0, 0..zd]);
            }
            let dmean = dpool.slice(s![0, zd..]).mapv(|v| v / n as f64);
            for mut r in dlat.rows_mut() {
                r += &dmean;
            }
        }
        let mut dmu = Array2::<f64>::zeros(cache.mu.raw_dim());
        let mut dlv = Array2::<f64>::zeros(cache.logvar.raw_dim());
        if weight != 0.0 {
            let target = reconstruction_target(sub);
            let pw = positive_weight(target.view());
            let logits = cache.latents.dot(&cache.latents.t());
            let scale = weight / target.len() as f64;
            let ds = Array2::from_shape_fn(logits.raw_dim(), |(i, j)| {
                let t = target[[i, j]];
                let w = if t > 0.5 { pw } else { 1.0 };
                scale * w * (sigmoid(logits[[i, j]]) - t)
            });
            dlat += &(&ds + &ds.t()).dot(&cache.latents);
            let nf = n as f64;
            dmu += &cache.mu.mapv(|m| weight * m / nf);
            dlv += &cache.logvar.mapv(|lv| weight * 0.5 * (lv.exp() - 1.0) / nf);
        }
        dmu += &dlat;
        if let Some(eta) = &cache.eta {
            dlv += &(&dlat * eta * &cache.logvar.mapv(|v| 0.5 * (0.5 * v).exp()));
        }
        let top = cache.propagated.last().expect("head input");
        self.mu.view_mut(grad).scaled_add(1.0, &top.t().dot(&dmu));
        self.logvar.view_mut(grad).scaled_add(1.0, &top.t().dot(&dlv));
        let mut dh = cache.a_norm.t().dot(&(dmu.dot(&self.mu.view(p).t()) + dlv.dot(&self.logvar.view(p).t())));
        for (l, w) in self.layers.iter().enumerate().rev() {
            relu_backward(&mut dh, cache.hidden[l].view());
            w.view_mut(grad).scaled_add(1.0, &cache.propagated[l].t().dot(&dh));
            if l > 0 {
                dh = cache.a_norm.t().dot(&dh.dot(&w.view(p).t()));
            }
        }
    }
}
