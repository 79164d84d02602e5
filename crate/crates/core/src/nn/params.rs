use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<(String, Mat)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(self.position(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
        self.entries.len() - 1
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.position(name)
            .map(|i| &self.entries[i].1)
            .ok_or_else(|| Error::Compatibility(format!("missing parameter `{name}`")))
    }

    pub fn at(&self, i: usize) -> &Mat {
        &self.entries[i].1
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Mat {
        &mut self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, m)| m.is_finite())
    }

    /// Places every parameter on the tape as a leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, m)| tape.leaf(m.clone())).collect()
    }
}

/// Weights and biases drawn from U(−1/√fan_in, 1/√fan_in).
pub fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Embedding table with N(0, 1/dim) entries.
pub fn normal_embedding<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Mat {
    let s = 1.0 / (dim.max(1) as f64).sqrt();
    Mat::from_vec(
        rows,
        dim,
        (0..rows * dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v * s
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the full gradient to this L2 norm when it is exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(_, m)| Mat::zeros(m.rows, m.cols)).collect();
        Adam {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads[i]` belongs to parameter `i` (None = zero).
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Mat>]) -> f64 {
        assert_eq!(grads.len(), params.len());
        let norm = grads
            .iter()
            .flatten()
            .map(Mat::sum_sq)
            .sum::<f64>()
            .sqrt();
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamConfig {
            lr, beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.at_mut(i);
            for j in 0..p.data.len() {
                let gj = g.as_ref().map_or(0.0, |g| g.data[j] * scale);
                m.data[j] = beta1 * m.data[j] + (1.0 - beta1) * gj;
                v.data[j] = beta2 * v.data[j] + (1.0 - beta2) * gj * gj;
                let mh = m.data[j] / bc1;
                let vh = v.data[j] / bc2;
                p.data[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        norm
    }
}
