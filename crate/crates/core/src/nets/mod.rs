//! Conditional generator (per-slot CNN, LSTM, embedding concat, dense head)
//! and discriminator (per-slot CNN, space-time mean, MLP), with the batch
//! plumbing and adversarial losses they share.

pub mod batch;
pub mod discriminator;
pub mod generator;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::act::{sigmoid, softplus};

pub use batch::Batch;
pub use discriminator::{DiscCache, Discriminator};
pub use generator::{GenCache, Generator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Window edge `l`.
    pub window: usize,
    /// Condition features `k`.
    pub features: usize,
    /// Noise channels `u`.
    pub noise: usize,
    /// Slots per sample `|T|`.
    pub horizon: usize,
    pub conv_hidden: usize,
    /// Per-slot feature size `d`.
    pub conv_out: usize,
    pub lstm_hidden: usize,
    pub z_dim: usize,
    /// Node feature width of the task graph; 0 disables the graph encoder.
    pub node_features: usize,
    pub gcn_hidden: usize,
    pub disc_conv_hidden: usize,
    pub disc_conv_out: usize,
    pub disc_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            window: 10,
            features: 7,
            noise: 4,
            horizon: 7,
            conv_hidden: 16,
            conv_out: 32,
            lstm_hidden: 64,
            z_dim: 16,
            node_features: 5,
            gcn_hidden: 16,
            disc_conv_hidden: 16,
            disc_conv_out: 32,
            disc_hidden: 32,
        }
    }
}

impl NetConfig {
    pub fn pixels(&self) -> usize {
        self.window * self.window
    }

    /// Small configuration used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            window: 4,
            features: 2,
            noise: 1,
            horizon: 3,
            conv_hidden: 3,
            conv_out: 5,
            lstm_hidden: 4,
            z_dim: 3,
            node_features: 3,
            gcn_hidden: 4,
            disc_conv_hidden: 3,
            disc_conv_out: 4,
            disc_hidden: 4,
        }
    }
}

/// Generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    /// Minimize `mean log(1 - D(G))`.
    #[default]
    Saturating,
    /// Minimize `-mean log D(G)`.
    NonSaturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Fake,
    Real,
    Mismatch,
}

/// Labelled discriminator rows: generated, real and mismatched candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscBatch {
    /// Candidate final-slot maps, one row per labelled row.
    pub candidates: Array2<f64>,
    /// Sample whose conditions and history accompany each row.
    pub source: Vec<usize>,
    pub kinds: Vec<RowKind>,
    pub labels: Vec<f64>,
    /// Samples per combination (the `m` of the losses).
    pub per_combo: usize,
}

/// Uniform random permutation with no fixed point, by rejection.
pub fn derangement<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Option<Vec<usize>> {
    if n < 2 {
        return None;
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Some(p);
        }
    }
}

/// Builds the three combinations: generated maps with their conditions,
/// real maps with their conditions, and real maps paired with another
/// sample's conditions by a seeded derangement. Only combination two is
/// labelled real.
pub fn make_disc_batches<R: rand::Rng + ?Sized>(generated: &Array2<f64>, real: &Array2<f64>, rng: &mut R) -> Result<DiscBatch> {
    if generated.dim() != real.dim() {
        return Err(Error::shape("generated batch", real.nrows(), generated.nrows()));
    }
    let m = real.nrows();
    if m == 0 {
        return Err(Error::Empty("discriminator batch".into()));
    }
    let mut rows = vec![generated.view(), real.view()];
    let mut source: Vec<usize> = (0..m).chain(0..m).collect();
    let mut kinds = vec![RowKind::Fake; m];
    kinds.extend(std::iter::repeat_n(RowKind::Real, m));
    let perm = derangement(m, rng);
    let mismatched;
    match perm {
        Some(perm) => {
            mismatched = real.select(Axis(0), &perm);
            rows.push(mismatched.view());
            source.extend(0..m);
            kinds.extend(std::iter::repeat_n(RowKind::Mismatch, m));
        }
        None => log::warn!("batch of one sample; skipping mismatched pairs"),
    }
    let candidates = ndarray::concatenate(Axis(0), &rows).expect("equal widths");
    let labels = kinds.iter().map(|k| if *k == RowKind::Real { 1.0 } else { 0.0 }).collect();
    Ok(DiscBatch { candidates, source, kinds, labels, per_combo: m })
}

/// `f_D = -(1/m) sum [log(1 - D(fake)) + log D(real) + log(1 - D(mismatch))]`
/// evaluated from logits. Returns the loss and its gradient per logit.
pub fn disc_loss(logits: &Array1<f64>, labels: &[f64], m: usize) -> (f64, Array1<f64>) {
    let m = m.max(1) as f64;
    let mut loss = 0.0;
    let grad = Array1::from_iter(logits.iter().zip(labels).map(|(&s, &y)| {
        if y > 0.5 {
            loss += softplus(-s);
            (sigmoid(s) - 1.0) / m
        } else {
            loss += softplus(s);
            sigmoid(s) / m
        }
    }));
    (loss / m, grad)
}

/// Adversarial generator loss on fake logits and its gradient per logit.
pub fn gen_adv_loss(fake_logits: &Array1<f64>, mode: GanMode) -> (f64, Array1<f64>) {
    let m = fake_logits.len().max(1) as f64;
    match mode {
        GanMode::Saturating => (
            -fake_logits.iter().map(|&s| softplus(s)).sum::<f64>() / m,
            fake_logits.mapv(|s| -sigmoid(s) / m),
        ),
        GanMode::NonSaturating => (
            fake_logits.iter().map(|&s| softplus(-s)).sum::<f64>() / m,
            fake_logits.mapv(|s| (sigmoid(s) - 1.0) / m),
        ),
    }
}

/// Mean squared error over all entries and its gradient.
pub fn mse_loss(est: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = est.len().max(1) as f64;
    let diff = est - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff.mapv(|d| 2.0 * d / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::Array;

    #[test]
    fn four_samples_give_twelve_rows_four_real() {
        let g = Array2::from_elem((4, 9), 1.0);
        let r = Array::from_shape_fn((4, 9), |(i, j)| (i * 9 + j) as f64);
        let b = make_disc_batches(&g, &r, &mut seed::rng(0, &[])).unwrap();
        assert_eq!(b.candidates.nrows(), 12);
        assert_eq!(b.labels.iter().filter(|&&l| l == 1.0).count(), 4);
        for row in 8..12 {
            assert_ne!(b.candidates.row(row), r.row(b.source[row]));
        }
    }

    #[test]
    fn derangement_is_seeded_and_fixed_point_free() {
        for n in 2..20 {
            let a = derangement(n, &mut seed::rng(3, &[n as u64])).unwrap();
            let b = derangement(n, &mut seed::rng(3, &[n as u64])).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().enumerate().all(|(i, &j)| i != j));
            let mut s = a.clone();
            s.sort();
            assert_eq!(s, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_sample_skips_mismatch() {
        let g = Array2::zeros((1, 4));
        let b = make_disc_batches(&g, &g, &mut seed::rng(0, &[])).unwrap();
        assert_eq!(b.candidates.nrows(), 2);
    }

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        let logits = Array1::from(vec![-800.0, 800.0, -800.0]);
        let (loss, _) = disc_loss(&logits, &[0.0, 1.0, 0.0], 1);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_formulas_match_probabilities() {
        let logits = Array1::from(vec![0.3, -1.1, 2.0, 0.4, -0.2, 1.5]);
        let labels = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let d: Vec<f64> = logits.iter().map(|&s| sigmoid(s)).collect();
        let expect = -((1.0 - d[0]).ln() + (1.0 - d[1]).ln() + d[2].ln() + d[3].ln() + (1.0 - d[4]).ln() + (1.0 - d[5]).ln()) / 2.0;
        assert!((disc_loss(&logits, &labels, 2).0 - expect).abs() < 1e-12);
        let fake = Array1::from(vec![0.3, -1.1]);
        let sat = ((1.0 - d[0]).ln() + (1.0 - d[1]).ln()) / 2.0;
        assert!((gen_adv_loss(&fake, GanMode::Saturating).0 - sat).abs() < 1e-12);
        let ns = -(d[0].ln() + d[1].ln()) / 2.0;
        assert!((gen_adv_loss(&fake, GanMode::NonSaturating).0 - ns).abs() < 1e-12);
    }
}
