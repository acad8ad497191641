//! Flat parameter storage.
//!
//! Every network keeps its weights in one contiguous `Vec<f64>`; layers hold
//! [`Slot`]s (offset + 2-D shape) into it. Gradients use the same layout, so
//! meta-updates, optimizers, checkpoints and finite-difference checks all
//! work on plain slices.

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn slice<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.range()]
    }

    pub fn slice_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.range()]
    }

    pub fn view<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), self.slice(p)).expect("slot shape")
    }

    pub fn view_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        let (r, c) = (self.rows, self.cols);
        ArrayViewMut2::from_shape((r, c), self.slice_mut(p)).expect("slot shape")
    }
}

/// How a tensor is filled at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Gaussian with std `gain / sqrt(fan_in)`.
    Scaled { fan_in: usize, gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub slot: Slot,
    pub init: Init,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<LayoutEntry>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        self.len += rows * cols;
        self.entries.push(LayoutEntry {
            name: name.into(),
            slot,
            init,
        });
        slot
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<Slot> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.slot)
    }

    /// Entries whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a LayoutEntry> + 'a {
        self.entries.iter().filter(move |e| e.name.starts_with(prefix))
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.len];
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        for e in &self.entries {
            let dst = e.slot.slice_mut(&mut p);
            match e.init {
                Init::Zeros => {}
                Init::Const(v) => dst.fill(v),
                Init::Scaled { fan_in, gain } => {
                    let std = gain / (fan_in.max(1) as f64).sqrt();
                    for x in dst.iter_mut() {
                        *x = std * std_normal.sample(rng);
                    }
                }
            }
        }
        p
    }
}

/// `params -= lr * grad`
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    debug_assert_eq!(params.len(), grad.len());
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

pub fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Rescales `grad` in place so its L2 norm does not exceed `max_norm`.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let n = l2_norm(grad);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
