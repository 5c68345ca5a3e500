use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_finite, DiscriminatorSpec, IterationMetrics, MiloConfig, SigmaSource, SolverReport, TabularMode};
use crate::datasets::{TabularExpert, TabularOffline};
use crate::discriminators::best_response_finite;
use crate::error::{invalid, Result};
use crate::mdp::{dot, occupancy, value, DecisionRule, FiniteMdp, NonstationaryPolicy, TabularPolicy, Transitions};
use crate::models::{theory_penalty, PenaltyVariant, TabularModel};
use crate::policy_opt::{exact_tabular_npg_step, exact_value_iteration, SoftmaxTabularPolicy};

use super::baselines::bc_tabular;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularSolution {
    /// Time-indexed policy actually executed and evaluated.
    pub policy: NonstationaryPolicy,
    /// Exported stationary table (first-step rule).
    pub stationary: TabularPolicy,
    pub report: SolverReport,
}

/// `(sigma, b)` tables for a fitted count model.
pub fn model_penalty_table(model: &TabularModel, env: &FiniteMdp, cfg: &MiloConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if cfg.penalty != PenaltyVariant::Theory {
        return Err(invalid("tabular models support only the theory penalty"));
    }
    let sigma = match cfg.sigma_source {
        SigmaSource::Theory => model.sigma_table(cfg.delta),
        SigmaSource::OracleTv => model.tv_to(env.transitions())?,
    };
    let b = sigma.iter().map(|s| theory_penalty(*s, env.horizon())).collect();
    Ok((sigma, b))
}

fn mixed_cost(f: &[f64], b: &[f64], lambda_penalty: f64, horizon: usize) -> Vec<f64> {
    let top = 2.0 * horizon as f64 + 1.0;
    f.iter()
        .zip(b)
        .map(|(f, b)| ((1.0 - lambda_penalty) * f + lambda_penalty * b).clamp(0.0, top))
        .collect()
}

/// Count model with an explicit absorbing sink at index `n_states` that
/// collects the mass the estimate leaves unassigned. The sink is treated as
/// maximally uncertain (`sigma = 2`) and invisible to the discriminator.
struct Augmented {
    p: Transitions,
    d0: Vec<f64>,
    b: Vec<f64>,
    ns: usize,
    na: usize,
}

impl Augmented {
    fn new(p_hat: &Transitions, d0: &[f64], b: &[f64], horizon: usize) -> Result<Self> {
        let (ns, na) = (p_hat.n_states(), p_hat.n_actions());
        let n = ns + 1;
        let mut probs = vec![0.0; n * na * n];
        for s in 0..ns {
            for a in 0..na {
                let row = &mut probs[(s * na + a) * n..(s * na + a + 1) * n];
                row[..ns].copy_from_slice(p_hat.row(s, a));
                row[ns] = (1.0 - p_hat.row_mass(s, a)).max(0.0);
            }
        }
        for a in 0..na {
            probs[(ns * na + a) * n + ns] = 1.0;
        }
        let mut d0 = d0.to_vec();
        d0.push(0.0);
        let mut b = b.to_vec();
        b.extend(std::iter::repeat_n(theory_penalty(2.0, horizon), na));
        Ok(Self {
            p: Transitions::new(n, na, probs)?,
            d0,
            b,
            ns,
            na,
        })
    }

    /// Pads a table over real pairs with `fill` on the sink.
    fn pad(&self, x: &[f64], fill: f64) -> Vec<f64> {
        let mut v = x.to_vec();
        v.extend(std::iter::repeat_n(fill, self.na));
        v
    }

    fn real<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.ns * self.na]
    }

    /// Drops the sink row so the policy runs in the real environment.
    fn restrict(&self, p: &NonstationaryPolicy) -> Result<NonstationaryPolicy> {
        let steps = p
            .steps
            .iter()
            .map(|t| TabularPolicy::new(self.ns, self.na, self.real(t.as_slice()).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(NonstationaryPolicy { steps })
    }
}

/// Best response of the max player: `(f, ipm)`.
fn discriminate(spec: &DiscriminatorSpec, d_model: &[f64], d_expert: &[f64]) -> Result<(Vec<f64>, f64)> {
    match spec {
        DiscriminatorSpec::OneHotMmd => {
            let delta: Vec<f64> = d_model.iter().zip(d_expert).map(|(m, e)| m - e).collect();
            let norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Ok((vec![0.5; delta.len()], 0.0));
            }
            Ok((delta.iter().map(|x| 0.5 * (1.0 + x / norm)).collect(), norm))
        }
        DiscriminatorSpec::Finite { functions } => {
            let class = crate::discriminators::FiniteClass::new(functions.clone())?;
            let (i, v) = best_response_finite(&class, d_model, d_expert)?;
            Ok((class.get(i).to_vec(), v))
        }
        DiscriminatorSpec::Rff { .. } => Err(invalid("random Fourier features need a continuous environment")),
    }
}

fn expert_nll(policy: &impl DecisionRule, pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    -pairs
        .iter()
        .map(|&(s, a)| policy.action_probs(0, s)[a].max(1e-12).ln())
        .sum::<f64>()
        / pairs.len() as f64
}

fn repeat_steps(p: &TabularPolicy, horizon: usize) -> NonstationaryPolicy {
    NonstationaryPolicy {
        steps: vec![p.clone(); horizon],
    }
}

struct Setup {
    model: Augmented,
    d_expert: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

fn setup(env: &FiniteMdp, expert: &TabularExpert, offline: &TabularOffline, cfg: &MiloConfig) -> Result<Setup> {
    cfg.validate()?;
    if expert.is_empty() || offline.is_empty() {
        return Err(invalid("expert and offline datasets must be nonempty"));
    }
    let (ns, na) = (env.n_states(), env.n_actions());
    let model = TabularModel::fit(offline, ns, na, cfg.model_lambda)?;
    let (_, b) = model_penalty_table(&model, env, cfg)?;
    let pairs: Vec<(usize, usize)> = expert.pairs.iter().map(|p| (p.s, p.a)).collect();
    if pairs.iter().any(|&(s, a)| s >= ns || a >= na) {
        return Err(invalid("expert pair out of range"));
    }
    Ok(Setup {
        model: Augmented::new(&model.transitions(), env.d0(), &b, env.horizon())?,
        d_expert: expert.distribution(ns, na),
        pairs,
    })
}

/// Pessimistic min-max imitation on a finite MDP. The true environment is
/// used only for its initial distribution, horizon and for reporting.
pub fn solve_milo_tabular(
    env: &FiniteMdp,
    expert: &TabularExpert,
    offline: &TabularOffline,
    cfg: &MiloConfig,
) -> Result<TabularSolution> {
    let start = Instant::now();
    let st = setup(env, expert, offline, cfg)?;
    let m = &st.model;
    let (na, h) = (env.n_actions(), env.horizon());

    let mut soft = if cfg.warm_start {
        let warm = bc_tabular(&crate::datasets::ExpertDataset { meta: expert.meta.clone(), pairs: vec![] }, Some(offline), m.ns + 1, na)?;
        SoftmaxTabularPolicy::from_tabular(&warm, 1e-3)
    } else {
        SoftmaxTabularPolicy::uniform(m.ns + 1, na)
    };
    let mut current = repeat_steps(&soft.to_tabular(), h);
    let mut rows = Vec::with_capacity(cfg.iterations);

    for it in 1..=cfg.iterations {
        let d_model = occupancy(&m.p, &m.d0, h, &current)?;
        let (f, ipm) = discriminate(&cfg.discriminator, m.real(&d_model), &st.d_expert)?;
        let cost = mixed_cost(&m.pad(&f, 0.0), &m.b, cfg.lambda_penalty, h);
        current = match cfg.tabular_mode {
            TabularMode::BestResponse => exact_value_iteration(&m.p, &cost, h)?.nonstationary(na),
            TabularMode::Npg => {
                exact_tabular_npg_step(&mut soft, &m.p, &m.d0, h, &cost, &st.pairs, cfg.tabular_eta, cfg.lambda_bc)?;
                repeat_steps(&soft.to_tabular(), h)
            }
        };
        let v_true = env.true_value(&m.restrict(&current)?)?;
        let v_model = value(&m.p, &m.d0, h, &current, &cost)?;
        let d_new = occupancy(&m.p, &m.d0, h, &current)?;
        let penalty_mass = dot(&d_new, &m.b);
        check_finite(it, &[v_true, v_model])?;
        rows.push(IterationMetrics {
            iter: it,
            ipm,
            v_true,
            v_model,
            bc_loss: expert_nll(&current, &st.pairs),
            penalty_mass,
        });
    }
    let final_v_true = rows.last().map(|r| r.v_true).unwrap_or(f64::NAN);
    let policy = m.restrict(&current)?;
    let stationary = policy.steps[0].clone();
    Ok(TabularSolution {
        policy,
        stationary,
        report: SolverReport {
            iterations: rows,
            final_v_true,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    })
}

/// Runs the configured solver and the same solver with `lambda_penalty = 0`.
pub fn ablate_pessimism(
    env: &FiniteMdp,
    expert: &TabularExpert,
    offline: &TabularOffline,
    cfg: &MiloConfig,
) -> Result<(TabularSolution, TabularSolution)> {
    let with = solve_milo_tabular(env, expert, offline, cfg)?;
    let without = solve_milo_tabular(
        env,
        expert,
        offline,
        &MiloConfig {
            lambda_penalty: 0.0,
            ..cfg.clone()
        },
    )?;
    Ok((with, without))
}

/// `argmin_pi E_{d_model}[c + b]` by value iteration in the learned model.
pub fn solve_offline_rl_tabular(env: &FiniteMdp, offline: &TabularOffline, cfg: &MiloConfig) -> Result<TabularSolution> {
    let start = Instant::now();
    cfg.validate()?;
    if offline.is_empty() {
        return Err(invalid("offline dataset must be nonempty"));
    }
    let (ns, na, h) = (env.n_states(), env.n_actions(), env.horizon());
    let model = TabularModel::fit(offline, ns, na, cfg.model_lambda)?;
    let (_, b) = model_penalty_table(&model, env, cfg)?;
    let m = Augmented::new(&model.transitions(), env.d0(), &b, h)?;
    // The sink pays the worst known cost on top of its penalty.
    let c_max = env.cost().iter().copied().fold(0.0, f64::max);
    let cost: Vec<f64> = m.pad(env.cost(), c_max).iter().zip(&m.b).map(|(c, b)| c + b).collect();
    let planned = exact_value_iteration(&m.p, &cost, h)?.nonstationary(na);
    let policy = m.restrict(&planned)?;
    let v_true = env.true_value(&policy)?;
    let v_model = value(&m.p, &m.d0, h, &planned, &cost)?;
    let penalty_mass = dot(&occupancy(&m.p, &m.d0, h, &planned)?, &m.b);
    check_finite(1, &[v_true, v_model])?;
    let stationary = policy.steps[0].clone();
    Ok(TabularSolution {
        policy,
        stationary,
        report: SolverReport {
            iterations: vec![IterationMetrics {
                iter: 1,
                ipm: 0.0,
                v_true,
                v_model,
                bc_loss: 0.0,
                penalty_mass,
            }],
            final_v_true: v_true,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_expert, generate_offline};
    use crate::mdp::{chain, random_mdp, rng_from_seed};
    use crate::policy_opt::enumerate_deterministic;

    fn chain_data(n_o: usize) -> (FiniteMdp, TabularExpert, TabularOffline) {
        let env = chain(5, 12, 0.1).unwrap();
        let expert = exact_value_iteration(env.transitions(), env.cost(), 12).unwrap().stationary(2);
        let behavior = expert.epsilon_mix(0.5);
        let e = generate_expert(&env, &expert, 20, 10, 1, "chain").unwrap();
        let o = generate_offline(&env, &behavior, n_o, 2, "chain").unwrap();
        (env, e, o)
    }

    #[test]
    fn zero_cost_and_zero_gradients_keep_warm_start() {
        let (env, e, o) = chain_data(500);
        let cfg = MiloConfig {
            iterations: 1,
            lambda_bc: 0.0,
            lambda_penalty: 0.0,
            discriminator: DiscriminatorSpec::Finite {
                functions: vec![vec![0.0; 10]],
            },
            ..Default::default()
        };
        let sol = solve_milo_tabular(&env, &e, &o, &cfg).unwrap();
        let warm = SoftmaxTabularPolicy::from_tabular(
            &bc_tabular(&crate::datasets::ExpertDataset { meta: e.meta.clone(), pairs: vec![] }, Some(&o), 5, 2).unwrap(),
            1e-3,
        )
        .to_tabular();
        assert_eq!(sol.stationary, warm);
        assert_eq!(sol.report.iterations.len(), 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let (env, e, o) = chain_data(500);
        let cfg = MiloConfig {
            iterations: 5,
            ..Default::default()
        };
        let a = solve_milo_tabular(&env, &e, &o, &cfg).unwrap();
        let b = solve_milo_tabular(&env, &e, &o, &cfg).unwrap();
        assert_eq!(a.report.without_timing(), b.report.without_timing());
        assert_eq!(a.report.iterations.len(), 5);
    }

    #[test]
    fn zero_penalty_ablation_arms_agree() {
        let (env, e, o) = chain_data(300);
        let cfg = MiloConfig {
            iterations: 3,
            lambda_penalty: 0.0,
            ..Default::default()
        };
        let (a, b) = ablate_pessimism(&env, &e, &o, &cfg).unwrap();
        assert_eq!(a.report.without_timing(), b.report.without_timing());
    }

    #[test]
    fn exact_model_without_penalty_is_optimal() {
        // Dense data and oracle sigma shrink b; with lambda tiny the model is exact.
        let mdp = random_mdp(4, 2, 5, &mut rng_from_seed(3)).unwrap();
        let plan = exact_value_iteration(mdp.transitions(), mdp.cost(), 5).unwrap();
        let data = generate_offline(&mdp, &TabularPolicy::uniform(4, 2), 200_000, 4, "r").unwrap();
        let cfg = MiloConfig {
            model_lambda: 1e-9,
            sigma_source: SigmaSource::OracleTv,
            ..Default::default()
        };
        let sol = solve_offline_rl_tabular(&mdp, &data, &cfg).unwrap();
        let best_stationary = enumerate_deterministic(4, 2)
            .map(|acts| mdp.true_value(&TabularPolicy::deterministic(2, &acts).unwrap()).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(sol.report.final_v_true <= best_stationary + 0.05);
        assert!((sol.report.final_v_true - plan.value(mdp.d0())).abs() < 0.05);
    }

    #[test]
    fn zero_true_cost_gives_zero_value() {
        let env = chain(4, 6, 0.0).unwrap();
        let zero = FiniteMdp::new(env.transitions().clone(), vec![0.0; 8], 6, env.d0().to_vec()).unwrap();
        let o = generate_offline(&zero, &TabularPolicy::uniform(4, 2), 300, 1, "z").unwrap();
        let sol = solve_offline_rl_tabular(&zero, &o, &MiloConfig::default()).unwrap();
        assert_eq!(sol.report.final_v_true, 0.0);
    }

    #[test]
    fn ensemble_penalty_rejected() {
        let (env, e, o) = chain_data(100);
        let cfg = MiloConfig {
            penalty: PenaltyVariant::Ensemble,
            ..Default::default()
        };
        assert!(solve_milo_tabular(&env, &e, &o, &cfg).is_err());
    }
}
