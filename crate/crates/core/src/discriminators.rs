//! The max player: exact best response over a finite cost class, and the
//! closed-form MMD best response over random Fourier features.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::linalg::serde_rows;
use crate::mdp::{dot, rng_from_seed};

/// Finite set of tabular cost functions with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteClass {
    functions: Vec<Vec<f64>>,
}

impl FiniteClass {
    pub fn new(functions: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = functions.first() else {
            return Err(invalid("cost class is empty"));
        };
        let len = first.len();
        for (i, f) in functions.iter().enumerate() {
            if f.len() != len {
                return Err(dim(format!("member {i} has {} entries, expected {len}", f.len())));
            }
            if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(invalid(format!("member {i} leaves [0, 1]")));
            }
        }
        Ok(Self { functions })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.functions[i]
    }

    pub fn functions(&self) -> &[Vec<f64>] {
        &self.functions
    }
}

/// `argmax_f E_model f - E_expert f`, lowest index on ties. Returns `(index, value)`.
pub fn best_response_finite(class: &FiniteClass, d_model: &[f64], d_expert: &[f64]) -> Result<(usize, f64)> {
    let n = class.functions[0].len();
    if d_model.len() != n || d_expert.len() != n {
        return Err(dim("distributions do not match the class domain"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, f) in class.functions.iter().enumerate() {
        let gap = dot(d_model, f) - dot(d_expert, f);
        if gap > best.1 {
            best = (i, gap);
        }
    }
    Ok(best)
}

/// Per-dimension standardization fitted on a set of inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNormalizer {
    pub fn fit(xs: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = xs.first() else {
            return Err(invalid("cannot fit a normalizer on no data"));
        };
        let d = first.len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for x in xs {
            for ((v, m), xi) in var.iter_mut().zip(&mean).zip(x) {
                *v += (xi - m) * (xi - m) / n;
            }
        }
        let std = var.iter().map(|v| if *v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// `phi_j(x) = sqrt(2/D) cos(omega_j . x + b_j)` with Gaussian frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RffMap {
    #[serde(with = "serde_rows")]
    omega: DMatrix<f64>,
    phases: Vec<f64>,
    bandwidth: f64,
    seed: u64,
    #[serde(default)]
    normalizer: Option<InputNormalizer>,
}

impl RffMap {
    pub fn new(d_in: usize, n_features: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if n_features == 0 || !(bandwidth > 0.0) {
            return Err(invalid("need at least one feature and a positive bandwidth"));
        }
        let mut rng = rng_from_seed(seed);
        let omega = DMatrix::from_fn(n_features, d_in, |_, _| rng.sample::<f64, _>(StandardNormal) / bandwidth);
        let phases = (0..n_features)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Ok(Self {
            omega,
            phases,
            bandwidth,
            seed,
            normalizer: None,
        })
    }

    /// Explicit frequencies and phases.
    pub fn from_parts(omega: DMatrix<f64>, phases: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if omega.nrows() != phases.len() {
            return Err(dim("one phase per frequency row"));
        }
        Ok(Self {
            omega,
            phases,
            bandwidth,
            seed: 0,
            normalizer: None,
        })
    }

    pub fn with_normalizer(mut self, normalizer: InputNormalizer) -> Result<Self> {
        if normalizer.mean.len() != self.omega.ncols() {
            return Err(dim("normalizer dimension differs from the map input"));
        }
        self.normalizer = Some(normalizer);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn featurize(&self, x: &[f64]) -> DVector<f64> {
        let z = match &self.normalizer {
            Some(n) => n.apply(x),
            None => x.to_vec(),
        };
        let scale = (2.0 / self.dim() as f64).sqrt();
        let proj = &self.omega * DVector::from_column_slice(&z);
        DVector::from_iterator(self.dim(), proj.iter().zip(&self.phases).map(|(p, b)| scale * (p + b).cos()))
    }

    /// Features of the concatenated `(s, a)`.
    pub fn featurize_sa(&self, s: &[f64], a: &[f64]) -> DVector<f64> {
        let x: Vec<f64> = s.iter().chain(a).copied().collect();
        self.featurize(&x)
    }

    /// Largest possible `|w^T phi|` over unit `w`.
    pub fn max_norm(&self) -> f64 {
        2f64.sqrt()
    }
}

/// Unit-ball linear cost `f = eta * w^T phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDiscriminator {
    pub w: Vec<f64>,
}

impl LinearDiscriminator {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let n: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1.0 + 1e-9 {
            return Err(invalid(format!("discriminator norm {n} exceeds one")));
        }
        Ok(Self { w })
    }

    pub fn zero(d: usize) -> Self {
        Self { w: vec![0.0; d] }
    }

    pub fn eval(&self, phi: &DVector<f64>) -> f64 {
        self.w.iter().zip(phi.iter()).map(|(a, b)| a * b).sum()
    }

    /// `(1 + w^T phi / phi_max) / 2`, a cost in `[0, 1]`.
    pub fn eval_shifted(&self, phi: &DVector<f64>, phi_max: f64) -> f64 {
        (0.5 * (1.0 + self.eval(phi) / phi_max)).clamp(0.0, 1.0)
    }
}

/// Closed-form best response over the unit ball: `w = delta / ||delta||`,
/// value `||delta||`, where `delta = mean_model - mean_expert`.
pub fn mmd_best_response(mean_model: &[f64], mean_expert: &[f64]) -> Result<(LinearDiscriminator, f64)> {
    if mean_model.len() != mean_expert.len() {
        return Err(dim("mean embeddings differ in length"));
    }
    let delta: Vec<f64> = mean_model.iter().zip(mean_expert).map(|(a, b)| a - b).collect();
    let norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok((LinearDiscriminator::zero(delta.len()), 0.0));
    }
    Ok((
        LinearDiscriminator {
            w: delta.iter().map(|x| x / norm).collect(),
        },
        norm,
    ))
}

pub fn mean_embedding<'a>(features: impl IntoIterator<Item = &'a DVector<f64>>, dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    let mut n = 0usize;
    for f in features {
        for (a, b) in m.iter_mut().zip(f.iter()) {
            *a += b;
        }
        n += 1;
    }
    if n > 0 {
        m.iter_mut().for_each(|x| *x /= n as f64);
    }
    m
}
