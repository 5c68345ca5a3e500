use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datasets::{TabularExpert, TabularOffline, VectorExpert, VectorOffline};
use crate::error::{invalid, Result};
use crate::mdp::{monte_carlo_value, FiniteMdp, LinearGaussianEnv, Policy, SimRng, TabularPolicy};
use crate::policy_opt::GaussianLinearPolicy;

/// `(J_random - J) / (J_random - J_expert)` for costs.
pub fn normalized_score(j_random: f64, j_expert: f64, j: f64) -> f64 {
    (j_random - j) / (j_random - j_expert)
}

/// Empirical action frequencies per state over the expert pairs, plus the
/// offline pairs when given (pooled without weighting). Unseen states get
/// the uniform distribution.
pub fn bc_tabular(
    expert: &TabularExpert,
    offline: Option<&TabularOffline>,
    n_states: usize,
    n_actions: usize,
) -> Result<TabularPolicy> {
    let mut counts = vec![0.0; n_states * n_actions];
    let mut add = |s: usize, a: usize| -> Result<()> {
        if s >= n_states || a >= n_actions {
            return Err(invalid(format!("pair ({s}, {a}) is out of range")));
        }
        counts[s * n_actions + a] += 1.0;
        Ok(())
    };
    for p in &expert.pairs {
        add(p.s, p.a)?;
    }
    if let Some(off) = offline {
        for t in &off.triples {
            add(t.s, t.a)?;
        }
    }
    for row in counts.chunks_mut(n_actions) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            row.iter_mut().for_each(|x| *x = 1.0 / n_actions as f64);
        }
    }
    TabularPolicy::new(n_states, n_actions, counts)
}

/// Maximum-likelihood linear-Gaussian policy: least squares for the mean on
/// `[s; 1]`, per-dimension residual scale for the std (floored).
pub fn bc_gaussian(expert: &VectorExpert, offline: Option<&VectorOffline>, min_log_std: f64) -> Result<GaussianLinearPolicy> {
    let mut xs: Vec<(&[f64], &[f64])> = expert.pairs.iter().map(|p| (p.s.as_slice(), p.a.as_slice())).collect();
    if let Some(off) = offline {
        xs.extend(off.triples.iter().map(|t| (t.s.as_slice(), t.a.as_slice())));
    }
    let (s0, a0) = xs.first().copied().ok_or_else(|| invalid("behavior cloning needs data"))?;
    let (ds, da, n) = (s0.len(), a0.len(), xs.len());
    let x = DMatrix::from_fn(n, ds + 1, |i, j| if j < ds { xs[i].0[j] } else { 1.0 });
    let y = DMatrix::from_fn(n, da, |i, j| xs[i].1[j]);
    let svd = x.clone().svd(true, true);
    let coef = svd
        .solve(&y, 1e-12)
        .map_err(|e| crate::Error::LinearAlgebra(format!("least squares failed: {e}")))?;
    let resid = &y - &x * &coef;
    let log_std: Vec<f64> = (0..da)
        .map(|j| {
            let var = resid.column(j).norm_squared() / n as f64;
            if var > 0.0 {
                0.5 * var.ln()
            } else {
                min_log_std
            }
        })
        .collect();
    GaussianLinearPolicy::new(coef.transpose(), log_std, min_log_std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorCalibration {
    pub epsilon: f64,
    pub score: f64,
    pub policy: TabularPolicy,
}

/// Bisection on the mixing weight so that the epsilon-mixed expert (uniform
/// over `allowed`) reaches `target` normalized score.
pub fn calibrate_epsilon(
    env: &FiniteMdp,
    expert: &TabularPolicy,
    allowed: &[usize],
    target: f64,
    j_random: f64,
    j_expert: f64,
) -> Result<BehaviorCalibration> {
    let score_at = |eps: f64| -> Result<(f64, TabularPolicy)> {
        let p = expert.epsilon_mix_over(eps, allowed)?;
        let j = env.true_value(&p)?;
        Ok((normalized_score(j_random, j_expert, j), p))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let (s_hi, p_hi) = score_at(hi)?;
    if s_hi >= target {
        return Ok(BehaviorCalibration {
            epsilon: hi,
            score: s_hi,
            policy: p_hi,
        });
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if score_at(mid)?.0 >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (score, policy) = score_at(lo)?;
    Ok(BehaviorCalibration {
        epsilon: lo,
        score,
        policy,
    })
}

struct UniformActions<'a>(&'a LinearGaussianEnv);

impl Policy<Vec<f64>, Vec<f64>> for UniformActions<'_> {
    fn sample_action(&self, _s: &Vec<f64>, rng: &mut SimRng) -> Vec<f64> {
        self.0.random_action(rng)
    }
}

/// Monte Carlo value of uniformly random actions.
pub fn random_value_continuous(env: &LinearGaussianEnv, episodes: usize, seed: u64) -> f64 {
    monte_carlo_value(env, &UniformActions(env), seed, episodes).0
}

/// `a = -K s`, optionally with a fixed Gaussian std.
pub fn linear_feedback_policy(gain: &DMatrix<f64>, log_std: f64) -> GaussianLinearPolicy {
    let (da, ds) = gain.shape();
    let mut w = DMatrix::zeros(da, ds + 1);
    w.columns_mut(0, ds).copy_from(&(-gain));
    GaussianLinearPolicy::new(w, vec![log_std; da], log_std.min(crate::policy_opt::MIN_LOG_STD))
        .expect("shapes agree")
}
