use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::linalg::serde_rows;
use crate::mdp::{sample_index, DecisionRule, Policy, SimRng, TabularPolicy};

/// A differentiable stochastic policy.
pub trait ParametricPolicy<S, A>: Policy<S, A> + Clone + Send + Sync {
    fn n_params(&self) -> usize;
    fn params(&self) -> DVector<f64>;
    /// Implementations may project onto their feasible set (e.g. a std floor).
    fn set_params(&mut self, theta: &DVector<f64>);
    fn log_prob(&self, s: &S, a: &A) -> f64;
    fn grad_log_prob(&self, s: &S, a: &A) -> DVector<f64>;
    /// `KL(self(.|s) || other(.|s))`.
    fn kl(&self, other: &Self, s: &S) -> f64;
}

/// Softmax over per-state logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxTabularPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
    #[serde(skip)]
    probs: Vec<f64>,
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

impl SoftmaxTabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions || n_actions == 0 {
            return Err(dim("logit table has the wrong size"));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(invalid("logits must be finite"));
        }
        let mut p = Self {
            n_states,
            n_actions,
            logits,
            probs: vec![0.0; n_states * n_actions],
        };
        p.refresh();
        Ok(p)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(n_states, n_actions, vec![0.0; n_states * n_actions]).expect("zero logits are valid")
    }

    /// Logits `ln(p + floor)`, a smoothed copy of a tabular policy.
    pub fn from_tabular(policy: &TabularPolicy, floor: f64) -> Self {
        let logits = policy.as_slice().iter().map(|p| (p + floor).ln()).collect();
        Self::new(policy.n_states(), policy.n_actions(), logits).expect("log-probabilities are finite")
    }

    fn refresh(&mut self) {
        if self.probs.len() != self.logits.len() {
            self.probs = vec![0.0; self.logits.len()];
        }
        for s in 0..self.n_states {
            let r = s * self.n_actions..(s + 1) * self.n_actions;
            softmax_into(&self.logits[r.clone()], &mut self.probs[r]);
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn to_tabular(&self) -> TabularPolicy {
        TabularPolicy::new(self.n_states, self.n_actions, self.probs.clone()).expect("softmax rows are distributions")
    }

    /// Re-derive the cached probabilities, e.g. after deserializing.
    pub fn rebuilt(mut self) -> Self {
        self.refresh();
        self
    }
}

impl DecisionRule for SoftmaxTabularPolicy {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, _t: usize, s: usize) -> &[f64] {
        self.row(s)
    }
}

impl Policy<usize, usize> for SoftmaxTabularPolicy {
    fn sample_action(&self, s: &usize, rng: &mut SimRng) -> usize {
        sample_index(self.row(*s), rng).unwrap_or(self.n_actions - 1)
    }
}

impl ParametricPolicy<usize, usize> for SoftmaxTabularPolicy {
    fn n_params(&self) -> usize {
        self.logits.len()
    }

    fn params(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.logits)
    }

    fn set_params(&mut self, theta: &DVector<f64>) {
        self.logits.copy_from_slice(theta.as_slice());
        self.refresh();
    }

    fn log_prob(&self, s: &usize, a: &usize) -> f64 {
        self.row(*s)[*a].ln()
    }

    fn grad_log_prob(&self, s: &usize, a: &usize) -> DVector<f64> {
        let mut g = DVector::zeros(self.n_params());
        let base = s * self.n_actions;
        for (b, p) in self.row(*s).iter().enumerate() {
            g[base + b] = -p;
        }
        g[base + a] += 1.0;
        g
    }

    fn kl(&self, other: &Self, s: &usize) -> f64 {
        self.row(*s)
            .iter()
            .zip(other.row(*s))
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p / q).ln())
            .sum::<f64>()
            .max(0.0)
    }
}

/// Gaussian policy with mean `W [s; 1]` and state-independent log std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearPolicy {
    #[serde(with = "serde_rows")]
    weights: DMatrix<f64>,
    log_std: Vec<f64>,
    min_log_std: f64,
}

pub const INIT_LOG_STD: f64 = -0.25;
pub const MIN_LOG_STD: f64 = -2.0;

impl GaussianLinearPolicy {
    /// `weights` is `d_A x (d_S + 1)`; the last column is the bias.
    pub fn new(weights: DMatrix<f64>, log_std: Vec<f64>, min_log_std: f64) -> Result<Self> {
        if log_std.len() != weights.nrows() {
            return Err(dim("one log std per action dimension"));
        }
        let log_std = log_std.into_iter().map(|l| l.max(min_log_std)).collect();
        Ok(Self {
            weights,
            log_std,
            min_log_std,
        })
    }

    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        Self::new(
            DMatrix::zeros(action_dim, state_dim + 1),
            vec![INIT_LOG_STD; action_dim],
            MIN_LOG_STD,
        )
        .expect("consistent shapes")
    }

    pub fn state_dim(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn action_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn min_log_std(&self) -> f64 {
        self.min_log_std
    }

    pub fn set_log_std(&mut self, log_std: &[f64]) {
        for (l, v) in self.log_std.iter_mut().zip(log_std) {
            *l = v.max(self.min_log_std);
        }
    }

    pub fn features(s: &[f64]) -> DVector<f64> {
        DVector::from_iterator(s.len() + 1, s.iter().copied().chain(std::iter::once(1.0)))
    }

    pub fn mean(&self, s: &[f64]) -> DVector<f64> {
        &self.weights * Self::features(s)
    }

    pub fn with_weights(&self, weights: DMatrix<f64>) -> Self {
        Self {
            weights,
            ..self.clone()
        }
    }
}

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

impl Policy<Vec<f64>, Vec<f64>> for GaussianLinearPolicy {
    fn sample_action(&self, s: &Vec<f64>, rng: &mut SimRng) -> Vec<f64> {
        self.mean(s)
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| m + l.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

impl ParametricPolicy<Vec<f64>, Vec<f64>> for GaussianLinearPolicy {
    fn n_params(&self) -> usize {
        self.weights.len() + self.log_std.len()
    }

    /// Row-major weights followed by the log stds.
    fn params(&self) -> DVector<f64> {
        let (r, c) = self.weights.shape();
        DVector::from_iterator(
            self.n_params(),
            (0..r)
                .flat_map(|i| (0..c).map(move |j| (i, j)))
                .map(|(i, j)| self.weights[(i, j)])
                .chain(self.log_std.iter().copied()),
        )
    }

    fn set_params(&mut self, theta: &DVector<f64>) {
        let (r, c) = self.weights.shape();
        for i in 0..r {
            for j in 0..c {
                self.weights[(i, j)] = theta[i * c + j];
            }
        }
        let ls: Vec<f64> = theta.as_slice()[r * c..].to_vec();
        self.set_log_std(&ls);
    }

    fn log_prob(&self, s: &Vec<f64>, a: &Vec<f64>) -> f64 {
        self.mean(s)
            .iter()
            .zip(a)
            .zip(&self.log_std)
            .map(|((m, x), l)| {
                let z = (x - m) / l.exp();
                -0.5 * z * z - l - HALF_LN_TAU
            })
            .sum()
    }

    fn grad_log_prob(&self, s: &Vec<f64>, a: &Vec<f64>) -> DVector<f64> {
        let x = Self::features(s);
        let mu = &self.weights * &x;
        let (r, c) = self.weights.shape();
        let mut g = DVector::zeros(self.n_params());
        for i in 0..r {
            let var = (2.0 * self.log_std[i]).exp();
            let diff = a[i] - mu[i];
            for j in 0..c {
                g[i * c + j] = diff / var * x[j];
            }
            g[r * c + i] = diff * diff / var - 1.0;
        }
        g
    }

    fn kl(&self, other: &Self, s: &Vec<f64>) -> f64 {
        let m1 = self.mean(s);
        let m2 = other.mean(s);
        (0..self.action_dim())
            .map(|i| {
                let (l1, l2) = (self.log_std[i], other.log_std[i]);
                let (v1, v2) = ((2.0 * l1).exp(), (2.0 * l2).exp());
                l2 - l1 + (v1 + (m1[i] - m2[i]).powi(2)) / (2.0 * v2) - 0.5
            })
            .sum::<f64>()
            .max(0.0)
    }
}

/// Mean negative log-likelihood of expert actions.
pub fn bc_loss<S, A, P: ParametricPolicy<S, A>>(policy: &P, pairs: &[(S, A)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    -pairs.iter().map(|(s, a)| policy.log_prob(s, a)).sum::<f64>() / pairs.len() as f64
}

pub fn bc_gradient<S, A, P: ParametricPolicy<S, A>>(policy: &P, pairs: &[(S, A)]) -> DVector<f64> {
    let mut g = DVector::zeros(policy.n_params());
    if pairs.is_empty() {
        return g;
    }
    for (s, a) in pairs {
        g -= policy.grad_log_prob(s, a);
    }
    g / pairs.len() as f64
}
