use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvantageConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Environment steps per policy update.
    pub batch_size: usize,
    pub critic_l2: f64,
    /// Standardize advantages within a batch.
    pub normalize: bool,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            gae_lambda: 0.97,
            batch_size: 40_000,
            critic_l2: 1e-4,
            normalize: true,
        }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err(invalid("gamma and gae_lambda must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if self.critic_l2 < 0.0 {
            return Err(invalid("critic L2 must be nonnegative"));
        }
        Ok(())
    }
}

/// Ridge-regression value baseline over caller-supplied features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCritic {
    weights: Vec<f64>,
}

impl LinearCritic {
    pub fn zero(dim: usize) -> Self {
        Self { weights: vec![0.0; dim] }
    }

    /// Closed-form minimizer of `mean (w.phi - y)^2 + l2 ||w||^2`.
    pub fn fit(phis: &[DVector<f64>], targets: &[f64], l2: f64) -> Result<Self> {
        let d = phis.first().map(|p| p.len()).ok_or_else(|| invalid("critic needs data"))?;
        let n = phis.len() as f64;
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut b = DVector::<f64>::zeros(d);
        for (phi, y) in phis.iter().zip(targets) {
            a.ger(1.0 / n, phi, phi, 1.0);
            b.axpy(y / n, phi, 1.0);
        }
        for i in 0..d {
            a[(i, i)] += l2.max(1e-12);
        }
        let w = a
            .clone()
            .cholesky()
            .map(|c| c.solve(&b))
            .or_else(|| a.lu().solve(&b))
            .ok_or_else(|| invalid("critic normal equations are singular"))?;
        Ok(Self {
            weights: w.iter().copied().collect(),
        })
    }

    pub fn predict(&self, phi: &DVector<f64>) -> f64 {
        self.weights.iter().zip(phi.iter()).map(|(w, x)| w * x).sum()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Discounted cost-to-go `sum_l gamma^l c_{t+l}`.
pub fn discounted_returns(costs: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; costs.len()];
    let mut acc = 0.0;
    for t in (0..costs.len()).rev() {
        acc = costs[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// GAE on costs. `values` has one entry per step plus the terminal value.
pub fn gae(costs: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(values.len(), costs.len() + 1, "need a terminal value");
    let mut out = vec![0.0; costs.len()];
    let mut acc = 0.0;
    for t in (0..costs.len()).rev() {
        let delta = costs[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// Fits a fresh critic to the batch's discounted returns, then runs GAE with
/// it (terminal value zero). Returns per-trajectory advantages and the critic.
pub fn estimate_advantages<S, A, F>(
    trajs: &[Trajectory<S, A>],
    features: F,
    cfg: &AdvantageConfig,
) -> Result<(Vec<Vec<f64>>, LinearCritic)>
where
    F: Fn(&S, usize) -> DVector<f64>,
{
    let mut phis = Vec::new();
    let mut targets = Vec::new();
    let mut costs_all = Vec::with_capacity(trajs.len());
    for tr in trajs {
        let costs: Vec<f64> = tr.steps.iter().map(|s| s.cost).collect();
        targets.extend(discounted_returns(&costs, cfg.gamma));
        phis.extend(tr.steps.iter().enumerate().map(|(t, st)| features(&st.state, t)));
        costs_all.push(costs);
    }
    if phis.is_empty() {
        return Err(invalid("no rollout steps to estimate advantages from"));
    }
    let critic = LinearCritic::fit(&phis, &targets, cfg.critic_l2)?;
    let mut k = 0;
    let mut advs = Vec::with_capacity(trajs.len());
    for costs in &costs_all {
        let mut values: Vec<f64> = phis[k..k + costs.len()].iter().map(|p| critic.predict(p)).collect();
        values.push(0.0);
        k += costs.len();
        advs.push(gae(costs, &values, cfg.gamma, cfg.gae_lambda));
    }
    if cfg.normalize {
        normalize(&mut advs);
    }
    Ok((advs, critic))
}

/// Shift and scale to zero mean and unit variance (no-op when constant).
pub fn normalize(advs: &mut [Vec<f64>]) {
    let all: Vec<f64> = advs.iter().flatten().copied().collect();
    if all.len() < 2 {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let sd = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd < 1e-12 {
        advs.iter_mut().flatten().for_each(|x| *x = 0.0);
        return;
    }
    advs.iter_mut().flatten().for_each(|x| *x = (*x - mean) / sd);
}
