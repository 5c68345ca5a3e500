use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{BehaviorSpec, EnvSpec, ExperimentConfig, Method};
use crate::datasets::{
    generate_expert, generate_offline, single_trajectory_expert, TabularExpert, TabularOffline, VectorExpert,
    VectorOffline,
};
use crate::error::Result;
use crate::mdp::{chain, gridworld, lqr_gain, monte_carlo_value, trap_gridworld, FiniteMdp, LinearGaussianEnv, TabularPolicy};
use crate::policy_opt::{bc_loss, exact_value_iteration, GaussianLinearPolicy, MIN_LOG_STD};
use crate::solver::{
    bc_gaussian, bc_tabular, calibrate_epsilon, linear_feedback_policy, normalized_score, random_value_continuous,
    solve_milo_continuous, solve_milo_tabular, solve_offline_rl_continuous, solve_offline_rl_tabular, IterationMetrics,
    MiloConfig, SolverReport,
};

const EVAL_SEED: u64 = 0xE7A1_5EED;

/// Environment, expert, behavior and the normalization constants.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Prepared {
    Tabular {
        env: FiniteMdp,
        expert: TabularPolicy,
        behavior: TabularPolicy,
        norm: Normalization,
    },
    Continuous {
        env: LinearGaussianEnv,
        expert: GaussianLinearPolicy,
        behavior: GaussianLinearPolicy,
        norm: Normalization,
        eval_episodes: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub j_random: f64,
    pub j_expert: f64,
    pub behavior_value: f64,
    pub behavior_score: f64,
}

impl Normalization {
    pub fn score(&self, j: f64) -> f64 {
        normalized_score(self.j_random, self.j_expert, j)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    Tabular(TabularExpert, TabularOffline),
    Continuous(VectorExpert, VectorOffline),
}

/// Outcome of one method on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub seed: u64,
    pub final_value: f64,
    pub score: f64,
    pub report: SolverReport,
}

pub fn build_env_tabular(spec: &EnvSpec) -> Result<Option<FiniteMdp>> {
    Ok(match spec {
        EnvSpec::Gridworld(g) => Some(gridworld(g)?),
        EnvSpec::TrapGridworld(g) => Some(trap_gridworld(g)?),
        EnvSpec::Chain { n, horizon, slip } => Some(chain(*n, *horizon, *slip)?),
        EnvSpec::DoubleIntegrator(_) => None,
    })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    if let EnvSpec::DoubleIntegrator(spec) = &cfg.environment {
        let env = LinearGaussianEnv::double_integrator(spec)?;
        let k = lqr_gain(&env)?;
        let expert = linear_feedback_policy(&k, cfg.expert.log_std.max(MIN_LOG_STD));
        let BehaviorSpec::NoisedExpert { log_std } = cfg.behavior else {
            unreachable!("validated")
        };
        let behavior = linear_feedback_policy(&k, log_std);
        let n = cfg.eval_episodes;
        let j_random = random_value_continuous(&env, n, EVAL_SEED);
        let j_expert = monte_carlo_value(&env, &expert, EVAL_SEED, n).0;
        let behavior_value = monte_carlo_value(&env, &behavior, EVAL_SEED, n).0;
        return Ok(Prepared::Continuous {
            env,
            expert,
            behavior,
            norm: Normalization {
                j_random,
                j_expert,
                behavior_value,
                behavior_score: normalized_score(j_random, j_expert, behavior_value),
            },
            eval_episodes: n,
        });
    }
    let env = build_env_tabular(&cfg.environment)?.expect("tabular environment");
    let (ns, na) = (env.n_states(), env.n_actions());
    let expert = exact_value_iteration(env.transitions(), env.cost(), env.horizon())?.stationary(na);
    let j_expert = env.true_value(&expert)?;
    let j_random = env.true_value(&TabularPolicy::uniform(ns, na))?;
    let all: Vec<usize> = (0..na).collect();
    let behavior = match &cfg.behavior {
        BehaviorSpec::TargetScore { score, allowed_actions } => {
            let allowed = allowed_actions.as_deref().unwrap_or(&all);
            calibrate_epsilon(&env, &expert, allowed, *score, j_random, j_expert)?.policy
        }
        BehaviorSpec::Epsilon { epsilon, allowed_actions } => {
            expert.epsilon_mix_over(*epsilon, allowed_actions.as_deref().unwrap_or(&all))?
        }
        BehaviorSpec::Uniform { allowed_actions } => expert.epsilon_mix_over(1.0, allowed_actions.as_deref().unwrap_or(&all))?,
        BehaviorSpec::NoisedExpert { .. } => unreachable!("validated"),
    };
    let behavior_value = env.true_value(&behavior)?;
    Ok(Prepared::Tabular {
        env,
        expert,
        behavior,
        norm: Normalization {
            j_random,
            j_expert,
            behavior_value,
            behavior_score: normalized_score(j_random, j_expert, behavior_value),
        },
    })
}

impl Prepared {
    pub fn norm(&self) -> &Normalization {
        match self {
            Prepared::Tabular { norm, .. } | Prepared::Continuous { norm, .. } => norm,
        }
    }

    /// Deterministic datasets for one seed.
    pub fn generate(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Data> {
        let (se, so) = ExperimentConfig::data_seeds(seed);
        let id = cfg.environment.id();
        Ok(match self {
            Prepared::Tabular { env, expert, behavior, .. } => {
                let e = if cfg.single_trajectory {
                    single_trajectory_expert(env, expert, se, &id)
                } else {
                    generate_expert(env, expert, cfg.n_e, cfg.expert_pool, se, &id)?
                };
                Data::Tabular(e, generate_offline(env, behavior, cfg.n_o, so, &id)?)
            }
            Prepared::Continuous { env, expert, behavior, .. } => {
                let e = if cfg.single_trajectory {
                    single_trajectory_expert(env, expert, se, &id)
                } else {
                    generate_expert(env, expert, cfg.n_e, cfg.expert_pool, se, &id)?
                };
                Data::Continuous(e, generate_offline(env, behavior, cfg.n_o, so, &id)?)
            }
        })
    }

    pub fn save(&self, data: &Data, expert_path: &Path, offline_path: &Path) -> Result<()> {
        match data {
            Data::Tabular(e, o) => {
                e.save(expert_path)?;
                o.save(offline_path)
            }
            Data::Continuous(e, o) => {
                e.save(expert_path)?;
                o.save(offline_path)
            }
        }
    }

    pub fn load(&self, expert_path: &Path, offline_path: &Path) -> Result<Data> {
        Ok(match self {
            Prepared::Tabular { .. } => Data::Tabular(TabularExpert::load(expert_path)?, TabularOffline::load(offline_path)?),
            Prepared::Continuous { .. } => {
                Data::Continuous(VectorExpert::load(expert_path)?, VectorOffline::load(offline_path)?)
            }
        })
    }

    pub fn run_method(&self, method: Method, data: &Data, solver: &MiloConfig, seed: u64) -> Result<MethodOutcome> {
        let cfg = MiloConfig {
            seed,
            lambda_penalty: if method == Method::MiloNopess { 0.0 } else { solver.lambda_penalty },
            ..solver.clone()
        };
        let report = match (self, data) {
            (Prepared::Tabular { env, .. }, Data::Tabular(e, o)) => {
                let (na, ns) = (env.n_actions(), env.n_states());
                let bc = |p: TabularPolicy| -> Result<SolverReport> {
                    let pairs: Vec<(usize, usize)> = e.pairs.iter().map(|r| (r.s, r.a)).collect();
                    let nll = -pairs.iter().map(|&(s, a)| p.prob(s, a).max(1e-12).ln()).sum::<f64>() / pairs.len() as f64;
                    Ok(single_row(env.true_value(&p)?, nll))
                };
                match method {
                    Method::Milo | Method::MiloNopess => solve_milo_tabular(env, e, o, &cfg)?.report,
                    Method::OfflineRl => solve_offline_rl_tabular(env, o, &cfg)?.report,
                    Method::BcExpert => bc(bc_tabular(e, None, ns, na)?)?,
                    Method::BcBoth => bc(bc_tabular(e, Some(o), ns, na)?)?,
                }
            }
            (Prepared::Continuous { env, eval_episodes, .. }, Data::Continuous(e, o)) => {
                let eval_seed = EVAL_SEED.wrapping_add(seed);
                let pairs: Vec<(Vec<f64>, Vec<f64>)> = e.pairs.iter().map(|r| (r.s.clone(), r.a.clone())).collect();
                let cont = |p: GaussianLinearPolicy, mut report: SolverReport| -> SolverReport {
                    // Score every method on the same evaluation episodes.
                    set_final(&mut report, monte_carlo_value(env, &p, eval_seed, *eval_episodes).0);
                    report
                };
                match method {
                    Method::Milo | Method::MiloNopess => {
                        let s = solve_milo_continuous(env, e, o, &cfg)?;
                        cont(s.policy, s.report)
                    }
                    Method::OfflineRl => {
                        let s = solve_offline_rl_continuous(env, o, &cfg)?;
                        cont(s.policy, s.report)
                    }
                    Method::BcExpert | Method::BcBoth => {
                        let off = if method == Method::BcBoth { Some(o) } else { None };
                        let p = bc_gaussian(e, off, MIN_LOG_STD)?;
                        let nll = bc_loss(&p, &pairs);
                        cont(p, single_row(f64::NAN, nll))
                    }
                }
            }
            _ => return Err(crate::error::invalid("datasets do not match the environment")),
        };
        let final_value = report.final_v_true;
        Ok(MethodOutcome {
            method,
            seed,
            final_value,
            score: self.norm().score(final_value),
            report,
        })
    }
}

/// Report for methods without an iterative loop.
fn single_row(v_true: f64, bc: f64) -> SolverReport {
    SolverReport {
        iterations: vec![IterationMetrics {
            iter: 1,
            ipm: 0.0,
            v_true,
            v_model: 0.0,
            bc_loss: bc,
            penalty_mass: 0.0,
        }],
        final_v_true: v_true,
        wall_clock_secs: 0.0,
    }
}

fn set_final(report: &mut SolverReport, v: f64) {
    report.final_v_true = v;
    if let Some(last) = report.iterations.last_mut() {
        last.v_true = v;
    }
}
