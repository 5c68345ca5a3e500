use serde::{Deserialize, Serialize};

use crate::datasets::TabularOffline;
use crate::error::{dim, invalid, Result};
use crate::mdp::Transitions;

/// Count-based model `P_hat(s'|s,a) = N(s'|s,a) / (N(s,a) + lambda)`.
///
/// Rows are sub-stochastic; the missing mass is read as a jump to an implicit
/// absorbing sink with zero cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    n_states: usize,
    n_actions: usize,
    lambda: f64,
    counts: Vec<u64>,
    next_counts: Vec<u64>,
}

impl TabularModel {
    pub fn fit(data: &TabularOffline, n_states: usize, n_actions: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(invalid("lambda must be positive"));
        }
        let mut counts = vec![0u64; n_states * n_actions];
        let mut next_counts = vec![0u64; n_states * n_actions * n_states];
        for (i, t) in data.triples.iter().enumerate() {
            if t.s >= n_states || t.sp >= n_states || t.a >= n_actions {
                return Err(dim(format!("triple {i} ({}, {}, {}) is out of range", t.s, t.a, t.sp)));
            }
            let sa = t.s * n_actions + t.a;
            counts[sa] += 1;
            next_counts[sa * n_states + t.sp] += 1;
        }
        Ok(Self {
            n_states,
            n_actions,
            lambda,
            counts,
            next_counts,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.n_actions + a]
    }

    pub fn next_count(&self, s: usize, a: usize, sp: usize) -> u64 {
        self.next_counts[(s * self.n_actions + a) * self.n_states + sp]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn p_hat(&self, s: usize, a: usize, sp: usize) -> f64 {
        self.next_count(s, a, sp) as f64 / (self.count(s, a) as f64 + self.lambda)
    }

    pub fn transitions(&self) -> Transitions {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut probs = vec![0.0; ns * na * ns];
        for sa in 0..ns * na {
            let denom = self.counts[sa] as f64 + self.lambda;
            for sp in 0..ns {
                probs[sa * ns + sp] = self.next_counts[sa * ns + sp] as f64 / denom;
            }
        }
        Transitions::new(ns, na, probs).expect("count ratios are a valid sub-stochastic table")
    }

    /// Uncertainty width at `(s, a)`; decreasing in the visit count.
    pub fn sigma(&self, s: usize, a: usize, delta: f64) -> f64 {
        sigma_tabular(self.n_states, self.n_actions, self.count(s, a) as f64, self.lambda, delta)
    }

    pub fn sigma_table(&self, delta: f64) -> Vec<f64> {
        (0..self.n_states * self.n_actions)
            .map(|sa| sigma_tabular(self.n_states, self.n_actions, self.counts[sa] as f64, self.lambda, delta))
            .collect()
    }

    /// Exact `||P_hat(.|s,a) - P(.|s,a)||_1` per pair over the real states.
    pub fn tv_to(&self, truth: &Transitions) -> Result<Vec<f64>> {
        let mine = self.transitions();
        if truth.n_states() != self.n_states || truth.n_actions() != self.n_actions {
            return Err(dim("true transition table has a different shape"));
        }
        Ok((0..self.n_states * self.n_actions)
            .map(|sa| {
                let (s, a) = (sa / self.n_actions, sa % self.n_actions);
                mine.l1_distance(truth, s, a)
            })
            .collect())
    }
}

/// `sqrt((|S| ln 2 + ln(2|S||A|/delta)) / (2(N + lambda))) + lambda / (N + lambda)`.
pub fn sigma_tabular(n_states: usize, n_actions: usize, count: f64, lambda: f64, delta: f64) -> f64 {
    let s = n_states as f64;
    let numer = s * std::f64::consts::LN_2 + (2.0 * s * n_actions as f64 / delta).ln();
    (numer / (2.0 * (count + lambda))).sqrt() + lambda / (count + lambda)
}
