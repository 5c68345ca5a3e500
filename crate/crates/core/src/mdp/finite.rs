use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Policy, SimRng};
use crate::error::{dim, invalid, Error, Result};

const ROW_TOL: f64 = 1e-12;

/// A transition table over `S x A -> S`, stored row-major as `((s * A) + a) * S + s'`.
///
/// Rows may be sub-stochastic. Missing mass is interpreted as moving to an
/// absorbing terminal state with zero cost, which the recursions below never
/// materialize: mass that leaves the table simply stops contributing.
#[derive(Clone, Debug, PartialEq)]
pub struct Transitions {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Transitions {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(dim("state and action counts must be positive"));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(dim(format!(
                "transition table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions * n_states
            )));
        }
        for (i, row) in probs.chunks(n_states).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "row (s={}, a={}) has a negative or non-finite entry",
                    i / n_actions,
                    i % n_actions
                )));
            }
            let mass: f64 = row.iter().sum();
            if mass > 1.0 + ROW_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "row (s={}, a={}) sums to {mass}",
                    i / n_actions,
                    i % n_actions
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub fn row_mass(&self, s: usize, a: usize) -> f64 {
        self.row(s, a).iter().sum()
    }

    /// True when every row sums to one within `1e-12`.
    pub fn is_stochastic(&self) -> bool {
        self.probs
            .chunks(self.n_states)
            .all(|row| (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL)
    }

    /// `|| self(.|s,a) - other(.|s,a) ||_1` over the real states.
    pub fn l1_distance(&self, other: &Transitions, s: usize, a: usize) -> f64 {
        self.row(s, a)
            .iter()
            .zip(other.row(s, a))
            .map(|(p, q)| (p - q).abs())
            .sum()
    }

    fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(dim(format!(
                "transition table is {}x{}, expected {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }
}

/// Episodic finite-horizon MDP with a known cost table in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FiniteMdpDoc", into = "FiniteMdpDoc")]
pub struct FiniteMdp {
    transitions: Transitions,
    cost: Vec<f64>,
    horizon: usize,
    d0: Vec<f64>,
}

/// JSON layout of a [`FiniteMdp`].
#[derive(Serialize, Deserialize)]
struct FiniteMdpDoc {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    d0: Vec<f64>,
    transition: Vec<f64>,
    cost: Vec<f64>,
}

impl TryFrom<FiniteMdpDoc> for FiniteMdp {
    type Error = Error;

    fn try_from(doc: FiniteMdpDoc) -> Result<Self> {
        let transitions = Transitions::new(doc.n_states, doc.n_actions, doc.transition)?;
        FiniteMdp::new(transitions, doc.cost, doc.horizon, doc.d0)
    }
}

impl From<FiniteMdp> for FiniteMdpDoc {
    fn from(m: FiniteMdp) -> Self {
        FiniteMdpDoc {
            n_states: m.transitions.n_states,
            n_actions: m.transitions.n_actions,
            horizon: m.horizon,
            d0: m.d0,
            transition: m.transitions.probs,
            cost: m.cost,
        }
    }
}

impl FiniteMdp {
    pub fn new(transitions: Transitions, cost: Vec<f64>, horizon: usize, d0: Vec<f64>) -> Result<Self> {
        let (ns, na) = (transitions.n_states, transitions.n_actions);
        if !transitions.is_stochastic() {
            return Err(Error::InvalidDistribution(
                "true transition rows must sum to 1".into(),
            ));
        }
        if cost.len() != ns * na {
            return Err(dim(format!("cost has {} entries, expected {}", cost.len(), ns * na)));
        }
        if cost.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("cost entries must lie in [0, 1]".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        check_distribution(&d0, ns, "d0")?;
        Ok(Self {
            transitions,
            cost,
            horizon,
            d0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transitions.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn d0(&self) -> &[f64] {
        &self.d0
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }

    /// Same MDP with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(self.transitions.clone(), self.cost.clone(), horizon, self.d0.clone())
    }

    /// Average state-action occupancy `d^pi_P`.
    pub fn occupancy(&self, policy: &impl DecisionRule) -> Result<Vec<f64>> {
        occupancy(&self.transitions, &self.d0, self.horizon, policy)
    }

    /// Expected cumulative cost of `policy` under `f`.
    pub fn value(&self, policy: &impl DecisionRule, f: &[f64]) -> Result<f64> {
        value(&self.transitions, &self.d0, self.horizon, policy, f)
    }

    /// Expected cumulative true cost.
    pub fn true_value(&self, policy: &impl DecisionRule) -> Result<f64> {
        self.value(policy, &self.cost)
    }
}

impl Environment for FiniteMdp {
    type State = usize;
    type Action = usize;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        sample_index(&self.d0, rng).unwrap_or(0)
    }

    fn step(&self, s: &usize, a: &usize, rng: &mut SimRng) -> (f64, usize) {
        let c = self.cost[s * self.n_actions() + a];
        let next = sample_index(self.transitions.row(*s, *a), rng).unwrap_or(*s);
        (c, next)
    }
}

pub(crate) fn check_distribution(p: &[f64], n: usize, what: &str) -> Result<()> {
    if p.len() != n {
        return Err(dim(format!("{what} has {} entries, expected {n}", p.len())));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidDistribution(format!("{what} has a negative entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_TOL * n.max(1) as f64 {
        return Err(Error::InvalidDistribution(format!("{what} sums to {total}")));
    }
    Ok(())
}

/// Inverse-CDF draw. Returns `None` when the draw falls in the missing mass of a
/// sub-stochastic row.
pub(crate) fn sample_index(p: &[f64], rng: &mut SimRng) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        acc += pi;
        last = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    // Rounding can leave u just above a total that is 1 up to ulps.
    if (acc - 1.0).abs() < 1e-9 {
        last
    } else {
        None
    }
}

/// Something that maps `(t, s)` to a distribution over actions.
pub trait DecisionRule {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Action probabilities at step `t` (0-based) in state `s`.
    fn action_probs(&self, t: usize, s: usize) -> &[f64];
}

/// Stationary tabular policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(dim(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, n_actions, &format!("policy row {s}"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(dim(format!("action {a} out of range at state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    /// `(1 - epsilon) * self + epsilon * uniform`.
    pub fn epsilon_mix(&self, epsilon: f64) -> Self {
        let u = 1.0 / self.n_actions as f64;
        let probs = self
            .probs
            .iter()
            .map(|p| (1.0 - epsilon) * p + epsilon * u)
            .collect();
        Self {
            probs,
            ..self.clone()
        }
    }

    /// Like [`epsilon_mix`](Self::epsilon_mix) but the exploration mass is spread
    /// only over `allowed`; actions outside it keep `(1 - epsilon)` of their mass.
    pub fn epsilon_mix_over(&self, epsilon: f64, allowed: &[usize]) -> Result<Self> {
        if allowed.is_empty() || allowed.iter().any(|&a| a >= self.n_actions) {
            return Err(invalid("allowed action set must be nonempty and in range"));
        }
        let u = 1.0 / allowed.len() as f64;
        let mut probs: Vec<f64> = self.probs.iter().map(|p| (1.0 - epsilon) * p).collect();
        for s in 0..self.n_states {
            for &a in allowed {
                probs[s * self.n_actions + a] += epsilon * u;
            }
        }
        Ok(Self {
            probs,
            ..self.clone()
        })
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Most likely action per state, lowest index on ties.
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for a in 1..self.n_actions {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

impl DecisionRule for TabularPolicy {
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

impl Policy<usize, usize> for TabularPolicy {
    fn sample_action(&self, s: &usize, rng: &mut SimRng) -> usize {
        sample_index(self.row(*s), rng).unwrap_or(0)
    }
}

/// Time-indexed tabular policy; step `t` uses `steps[t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonstationaryPolicy {
    pub steps: Vec<TabularPolicy>,
}

impl DecisionRule for NonstationaryPolicy {
    fn n_states(&self) -> usize {
        self.steps[0].n_states
    }

    fn n_actions(&self) -> usize {
        self.steps[0].n_actions
    }

    fn action_probs(&self, t: usize, s: usize) -> &[f64] {
        self.steps[t.min(self.steps.len() - 1)].row(s)
    }
}

fn check_policy(trans: &Transitions, policy: &impl DecisionRule) -> Result<()> {
    trans.check_shape(policy.n_states(), policy.n_actions())
}

/// Per-step state-action distributions `d_t`, `t = 1..=H`, by forward recursion.
pub fn occupancy_by_step(
    trans: &Transitions,
    d0: &[f64],
    horizon: usize,
    policy: &impl DecisionRule,
) -> Result<Vec<Vec<f64>>> {
    check_policy(trans, policy)?;
    let (ns, na) = (trans.n_states, trans.n_actions);
    if d0.len() != ns {
        return Err(dim("d0 length does not match state count"));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut state_dist = d0.to_vec();
    for t in 0..horizon {
        let mut d = vec![0.0; ns * na];
        for s in 0..ns {
            if state_dist[s] == 0.0 {
                continue;
            }
            let pi = policy.action_probs(t, s);
            for a in 0..na {
                d[s * na + a] = state_dist[s] * pi[a];
            }
        }
        if t + 1 < horizon {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let w = d[s * na + a];
                    if w == 0.0 {
                        continue;
                    }
                    for (n, p) in next.iter_mut().zip(trans.row(s, a)) {
                        *n += w * p;
                    }
                }
            }
            state_dist = next;
        }
        out.push(d);
    }
    Ok(out)
}

/// `d^pi = (1/H) sum_t d_t`.
pub fn occupancy(
    trans: &Transitions,
    d0: &[f64],
    horizon: usize,
    policy: &impl DecisionRule,
) -> Result<Vec<f64>> {
    let steps = occupancy_by_step(trans, d0, horizon, policy)?;
    let mut avg = vec![0.0; trans.n_states * trans.n_actions];
    for d in &steps {
        for (x, y) in avg.iter_mut().zip(d) {
            *x += y;
        }
    }
    let h = horizon as f64;
    avg.iter_mut().for_each(|x| *x /= h);
    Ok(avg)
}

/// Backward recursion. Returns `V_t(s)` for `t = 1..=H+1` (the last entry is zero).
pub fn values_by_step(
    trans: &Transitions,
    horizon: usize,
    policy: &impl DecisionRule,
    f: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_policy(trans, policy)?;
    let (ns, na) = (trans.n_states, trans.n_actions);
    if f.len() != ns * na {
        return Err(dim(format!("cost table has {} entries, expected {}", f.len(), ns * na)));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("cost table has non-finite entries".into()));
    }
    let mut values = vec![vec![0.0; ns]; horizon + 1];
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = &tail[0];
        let cur = &mut head[t];
        for s in 0..ns {
            let pi = policy.action_probs(t, s);
            let mut v = 0.0;
            for a in 0..na {
                if pi[a] == 0.0 {
                    continue;
                }
                let q = f[s * na + a] + dot(trans.row(s, a), next);
                v += pi[a] * q;
            }
            cur[s] = v;
        }
    }
    Ok(values)
}

/// `V^pi_{P,f}` from the initial distribution.
pub fn value(
    trans: &Transitions,
    d0: &[f64],
    horizon: usize,
    policy: &impl DecisionRule,
    f: &[f64],
) -> Result<f64> {
    if d0.len() != trans.n_states {
        return Err(dim("d0 length does not match state count"));
    }
    let v = values_by_step(trans, horizon, policy, f)?;
    Ok(dot(d0, &v[0]))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Both sides of the simulation-lemma identity.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationGap {
    /// `V^pi_{P,f} - V^pi_{P_hat,f_hat}`.
    pub lhs: f64,
    /// One term per step `t = 1..=H`:
    /// `E_{d_t}[f - f_hat + E_{P}[V_hat_{t+1}] - E_{P_hat}[V_hat_{t+1}]]`.
    pub rhs_terms: Vec<f64>,
}

pub fn simulation_gap(
    mdp: &FiniteMdp,
    p_hat: &Transitions,
    f: &[f64],
    f_hat: &[f64],
    policy: &impl DecisionRule,
) -> Result<SimulationGap> {
    p_hat.check_shape(mdp.n_states(), mdp.n_actions())?;
    let (ns, na, h) = (mdp.n_states(), mdp.n_actions(), mdp.horizon);
    let v_true = mdp.value(policy, f)?;
    let v_hat_steps = values_by_step(p_hat, h, policy, f_hat)?;
    let v_hat = dot(&mdp.d0, &v_hat_steps[0]);
    let d_steps = occupancy_by_step(&mdp.transitions, &mdp.d0, h, policy)?;

    let mut rhs_terms = Vec::with_capacity(h);
    for (t, d) in d_steps.iter().enumerate() {
        let next = &v_hat_steps[t + 1];
        let mut term = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let w = d[s * na + a];
                if w == 0.0 {
                    continue;
                }
                let i = s * na + a;
                let shift = dot(mdp.transitions.row(s, a), next) - dot(p_hat.row(s, a), next);
                term += w * (f[i] - f_hat[i] + shift);
            }
        }
        rhs_terms.push(term);
    }
    Ok(SimulationGap {
        lhs: v_true - v_hat,
        rhs_terms,
    })
}
