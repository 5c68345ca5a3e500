use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::policies::{bc_gradient, ParametricPolicy, SoftmaxTabularPolicy};
use crate::error::{dim, invalid, Result};
use crate::linalg::conjugate_gradient;
use crate::mdp::{occupancy_by_step, values_by_step, DecisionRule, Transitions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NpgConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    /// Fixed step `eta`. `None` picks the step whose quadratic KL model equals `max_kl`.
    pub step_size: Option<f64>,
    pub lambda_bc: f64,
    /// When false only the RL gradient goes through the Fisher solve.
    pub precondition_bc: bool,
    pub max_backtracks: usize,
    /// Relative CG residual above which the solve counts as failed.
    pub cg_residual_tol: f64,
}

impl Default for NpgConfig {
    fn default() -> Self {
        Self {
            max_kl: 0.01,
            cg_iters: 25,
            cg_damping: 1e-5,
            step_size: None,
            lambda_bc: 0.1,
            precondition_bc: true,
            max_backtracks: 12,
            cg_residual_tol: 0.1,
        }
    }
}

impl NpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_kl > 0.0) || self.cg_damping < 0.0 || self.lambda_bc < 0.0 {
            return Err(invalid("max_kl must be positive; damping and lambda_bc nonnegative"));
        }
        if matches!(self.step_size, Some(eta) if !(eta > 0.0)) {
            return Err(invalid("step size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NpgStepInfo {
    pub accepted: bool,
    pub kl: f64,
    pub step: f64,
    pub backtracks: usize,
    pub used_fallback: bool,
    pub grad_norm: f64,
}

/// Score matrix: one row `grad log pi(a|s)` per sample.
pub fn score_matrix<S, A, P: ParametricPolicy<S, A>>(policy: &P, samples: &[(S, A)]) -> DMatrix<f64> {
    let p = policy.n_params();
    let mut g = DMatrix::zeros(samples.len(), p);
    for (i, (s, a)) in samples.iter().enumerate() {
        g.row_mut(i).copy_from(&policy.grad_log_prob(s, a).transpose());
    }
    g
}

/// `F v = G^T G v / N + damping v`.
pub fn fisher_apply(scores: &DMatrix<f64>, v: &DVector<f64>, damping: f64) -> DVector<f64> {
    let n = scores.nrows().max(1) as f64;
    let gv = scores * v;
    scores.tr_mul(&gv) / n + v * damping
}

/// Dense `G^T G / N + damping I`.
pub fn dense_fisher(scores: &DMatrix<f64>, damping: f64) -> DMatrix<f64> {
    let n = scores.nrows().max(1) as f64;
    let mut f = scores.tr_mul(scores) / n;
    for i in 0..f.nrows() {
        f[(i, i)] += damping;
    }
    f
}

/// CG solve of `F d = g`. Returns `(d, relative residual)`.
pub fn natural_direction(scores: &DMatrix<f64>, g: &DVector<f64>, iters: usize, damping: f64) -> (DVector<f64>, f64) {
    let gn = g.norm();
    if gn == 0.0 {
        return (DVector::zeros(g.len()), 0.0);
    }
    let (d, _, _) = conjugate_gradient(|v| fisher_apply(scores, v, damping), g, iters, 1e-12 * gn);
    let res = (fisher_apply(scores, &d, damping) - g).norm() / gn;
    (d, res)
}

fn mean_kl<S, A, P: ParametricPolicy<S, A>>(old: &P, new: &P, samples: &[(S, A)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|(s, _)| old.kl(new, s)).sum::<f64>() / samples.len() as f64
}

/// One BC-regularized natural gradient step on a cost objective.
/// `samples` and `advantages` are aligned; the policy moves against
/// `grad J + lambda_bc grad l_BC`.
pub fn npg_step<S, A, P: ParametricPolicy<S, A>>(
    policy: &mut P,
    samples: &[(S, A)],
    advantages: &[f64],
    expert: &[(S, A)],
    cfg: &NpgConfig,
) -> Result<NpgStepInfo> {
    if samples.len() != advantages.len() {
        return Err(dim("one advantage per sample"));
    }
    if samples.is_empty() {
        return Err(invalid("NPG needs at least one sample"));
    }
    let scores = score_matrix(policy, samples);
    let n = samples.len() as f64;
    let g_rl = scores.tr_mul(&DVector::from_column_slice(advantages)) / n;
    let g_bc = if cfg.lambda_bc > 0.0 && !expert.is_empty() {
        bc_gradient(policy, expert) * cfg.lambda_bc
    } else {
        DVector::zeros(policy.n_params())
    };
    let total = &g_rl + &g_bc;
    let grad_norm = total.norm();
    if grad_norm == 0.0 || !grad_norm.is_finite() {
        return Ok(NpgStepInfo {
            accepted: grad_norm == 0.0,
            grad_norm,
            ..Default::default()
        });
    }

    let target = if cfg.precondition_bc { total.clone() } else { g_rl.clone() };
    let (mut dir, res) = natural_direction(&scores, &target, cfg.cg_iters, cfg.cg_damping);
    let mut used_fallback = false;
    if !dir.iter().all(|x| x.is_finite()) || res > cfg.cg_residual_tol {
        log::warn!("Fisher solve did not converge (relative residual {res:.3e}); using the plain gradient");
        dir = target;
        used_fallback = true;
    }
    if !cfg.precondition_bc {
        dir += &g_bc;
    }

    let step = match cfg.step_size {
        Some(eta) => eta,
        None => {
            let quad = dir.dot(&fisher_apply(&scores, &dir, cfg.cg_damping));
            if quad > 0.0 {
                (2.0 * cfg.max_kl / quad).sqrt()
            } else {
                (2.0 * cfg.max_kl).sqrt() / dir.norm()
            }
        }
    };

    let theta = policy.params();
    let old = policy.clone();
    let mut alpha = step;
    for backtracks in 0..=cfg.max_backtracks {
        let cand = &theta - &dir * alpha;
        policy.set_params(&cand);
        let kl = mean_kl(&old, policy, samples);
        if kl.is_finite() && kl <= cfg.max_kl {
            return Ok(NpgStepInfo {
                accepted: true,
                kl,
                step: alpha,
                backtracks,
                used_fallback,
                grad_norm,
            });
        }
        alpha *= 0.5;
    }
    *policy = old;
    Ok(NpgStepInfo {
        accepted: false,
        kl: 0.0,
        step: 0.0,
        backtracks: cfg.max_backtracks,
        used_fallback,
        grad_norm,
    })
}

/// Occupancy-weighted, time-averaged advantage `A(s, a)` of a tabular policy,
/// the exact natural gradient for softmax logits. Also returns `d(s)`.
pub fn exact_tabular_advantage(
    trans: &Transitions,
    d0: &[f64],
    horizon: usize,
    policy: &impl DecisionRule,
    cost: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ns, na) = (trans.n_states(), trans.n_actions());
    let v = values_by_step(trans, horizon, policy, cost)?;
    let occ = occupancy_by_step(trans, d0, horizon, policy)?;
    let mut adv = vec![0.0; ns * na];
    let mut mass = vec![0.0; ns];
    for t in 0..horizon {
        for s in 0..ns {
            let ds: f64 = occ[t][s * na..(s + 1) * na].iter().sum();
            if ds == 0.0 {
                continue;
            }
            mass[s] += ds;
            for a in 0..na {
                let q = cost[s * na + a] + crate::mdp::dot(trans.row(s, a), &v[t + 1]);
                adv[s * na + a] += ds * (q - v[t][s]);
            }
        }
    }
    for s in 0..ns {
        if mass[s] > 0.0 {
            adv[s * na..(s + 1) * na].iter_mut().for_each(|x| *x /= mass[s]);
        }
    }
    let h = horizon as f64;
    mass.iter_mut().for_each(|m| *m /= h);
    Ok((adv, mass))
}

/// Exact NPG on softmax logits inside a known tabular model:
/// `theta -= eta (A + lambda_bc grad l_BC)`. The BC term is not preconditioned,
/// since that would divide by the occupancy of rarely visited states.
#[allow(clippy::too_many_arguments)]
pub fn exact_tabular_npg_step(
    policy: &mut SoftmaxTabularPolicy,
    trans: &Transitions,
    d0: &[f64],
    horizon: usize,
    cost: &[f64],
    expert: &[(usize, usize)],
    eta: f64,
    lambda_bc: f64,
) -> Result<()> {
    let (adv, _) = exact_tabular_advantage(trans, d0, horizon, policy, cost)?;
    let mut theta = policy.params();
    let mut dir = DVector::from_vec(adv);
    if lambda_bc > 0.0 && !expert.is_empty() {
        dir += bc_gradient(policy, expert) * lambda_bc;
    }
    theta -= dir * eta;
    policy.set_params(&theta);
    Ok(())
}
