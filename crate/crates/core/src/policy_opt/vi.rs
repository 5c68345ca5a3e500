use crate::error::{dim, Result};
use crate::mdp::{dot, values_by_step, NonstationaryPolicy, TabularPolicy, Transitions};

/// Output of finite-horizon backward induction.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanningResult {
    /// Greedy action per step and state (lowest index wins ties).
    pub actions: Vec<Vec<usize>>,
    /// Optimal `V_t`, `t = 1..=H+1`.
    pub values: Vec<Vec<f64>>,
}

impl PlanningResult {
    /// The time-indexed optimal policy.
    pub fn nonstationary(&self, n_actions: usize) -> NonstationaryPolicy {
        NonstationaryPolicy {
            steps: self
                .actions
                .iter()
                .map(|acts| TabularPolicy::deterministic(n_actions, acts).expect("greedy actions are in range"))
                .collect(),
        }
    }

    /// The first-step greedy table, used as the exported stationary policy.
    pub fn stationary(&self, n_actions: usize) -> TabularPolicy {
        TabularPolicy::deterministic(n_actions, &self.actions[0]).expect("greedy actions are in range")
    }

    pub fn value(&self, d0: &[f64]) -> f64 {
        dot(d0, &self.values[0])
    }
}

/// Backward induction for `min_pi sum_t cost` under `trans` (rows may be
/// sub-stochastic; missing mass costs nothing afterwards).
pub fn exact_value_iteration(trans: &Transitions, cost: &[f64], horizon: usize) -> Result<PlanningResult> {
    let (ns, na) = (trans.n_states(), trans.n_actions());
    if cost.len() != ns * na {
        return Err(dim(format!("cost table has {} entries, expected {}", cost.len(), ns * na)));
    }
    let mut values = vec![vec![0.0; ns]; horizon + 1];
    let mut actions = vec![vec![0usize; ns]; horizon];
    for t in (0..horizon).rev() {
        for s in 0..ns {
            let mut best = (0, f64::INFINITY);
            for a in 0..na {
                let q = cost[s * na + a] + dot(trans.row(s, a), &values[t + 1]);
                if q < best.1 {
                    best = (a, q);
                }
            }
            actions[t][s] = best.0;
            values[t][s] = best.1;
        }
    }
    Ok(PlanningResult { actions, values })
}

/// `Q_t(s, a)` of a fixed decision rule, `t = 1..=H`.
pub fn q_values(
    trans: &Transitions,
    horizon: usize,
    policy: &impl crate::mdp::DecisionRule,
    cost: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let v = values_by_step(trans, horizon, policy, cost)?;
    let (ns, na) = (trans.n_states(), trans.n_actions());
    Ok((0..horizon)
        .map(|t| {
            (0..ns * na)
                .map(|sa| cost[sa] + dot(trans.row(sa / na, sa % na), &v[t + 1]))
                .collect()
        })
        .collect())
}

/// Every deterministic stationary policy on `n_states` states.
pub fn enumerate_deterministic(n_states: usize, n_actions: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = n_actions.checked_pow(n_states as u32).unwrap_or(usize::MAX);
    (0..total).map(move |mut code| {
        let mut acts = vec![0; n_states];
        for a in acts.iter_mut() {
            *a = code % n_actions;
            code /= n_actions;
        }
        acts
    })
}
