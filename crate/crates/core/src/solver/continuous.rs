use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, DiscriminatorSpec, IterationMetrics, MiloConfig, SolverReport};
use crate::datasets::{DatasetKind, DatasetMeta, ExpertDataset, VectorExpert, VectorOffline};
use crate::discriminators::{mean_embedding, mmd_best_response, InputNormalizer, LinearDiscriminator, RffMap};
use crate::error::{invalid, Result};
use crate::mdp::{monte_carlo_value, rng_from_seed, rollout_one, Environment, LinearGaussianEnv, SimRng, Trajectory};
use crate::models::{theory_penalty, EnsembleModel, KnrModel, PenaltyVariant};
use crate::policy_opt::{bc_loss, estimate_advantages, npg_step, GaussianLinearPolicy, NpgConfig};

use super::baselines::bc_gaussian;

/// `s' = W_hat phi(s, a) + zeta N(0, I)`, clipped to the true state box. The
/// initial distribution and the boxes are taken from the real system; costs
/// are attached after the rollout.
#[derive(Clone, Debug)]
pub struct LearnedLinearEnv {
    model: KnrModel,
    truth: LinearGaussianEnv,
}

impl LearnedLinearEnv {
    pub fn new(model: KnrModel, truth: &LinearGaussianEnv) -> Self {
        Self {
            model,
            truth: truth.clone(),
        }
    }

    pub fn model(&self) -> &KnrModel {
        &self.model
    }
}

impl Environment for LearnedLinearEnv {
    type State = Vec<f64>;
    type Action = Vec<f64>;

    fn horizon(&self) -> usize {
        self.truth.horizon()
    }

    fn initial_state(&self, rng: &mut SimRng) -> Vec<f64> {
        self.truth.sample_initial(rng)
    }

    fn step(&self, s: &Vec<f64>, a: &Vec<f64>, rng: &mut SimRng) -> (f64, Vec<f64>) {
        let a = self.truth.clip_action(a);
        let mean = self.model.predict(s, &a);
        let z = self.model.zeta();
        let next: Vec<f64> = mean.iter().map(|m| m + z * rng.sample::<f64, _>(StandardNormal)).collect();
        (0.0, self.truth.clip_state(&next))
    }
}

/// `[1, s, upper(s s^T), t/H, (t/H)^2, (t/H)^3]`.
pub fn critic_features_continuous(s: &[f64], t: usize, horizon: usize) -> DVector<f64> {
    let tau = t as f64 / horizon.max(1) as f64;
    let mut v = Vec::with_capacity(5 + s.len() * (s.len() + 3) / 2);
    v.push(1.0);
    v.extend_from_slice(s);
    for i in 0..s.len() {
        for j in i..s.len() {
            v.push(s[i] * s[j]);
        }
    }
    v.extend([tau, tau * tau, tau * tau * tau]);
    DVector::from_vec(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSolution {
    pub policy: GaussianLinearPolicy,
    pub report: SolverReport,
}

enum Penalty {
    Theory(KnrModel, f64),
    Ensemble(EnsembleModel),
}

impl Penalty {
    fn eval(&self, s: &[f64], a: &[f64], horizon: usize) -> f64 {
        match self {
            Penalty::Theory(m, delta) => theory_penalty(m.sigma(s, a, *delta), horizon),
            Penalty::Ensemble(e) => e.disagreement(s, a),
        }
    }
}

struct Fitted {
    learned: LearnedLinearEnv,
    penalty: Penalty,
}

fn fit_models(env: &LinearGaussianEnv, offline: &VectorOffline, cfg: &MiloConfig) -> Result<Fitted> {
    let fm = env.feature_map();
    let phis: Vec<DVector<f64>> = offline
        .triples
        .iter()
        .map(|t| fm.features(&t.s, &env.clip_action(&t.a)))
        .collect();
    let targets: Vec<DVector<f64>> = offline.triples.iter().map(|t| DVector::from_column_slice(&t.sp)).collect();
    let provisional = KnrModel::fit_features(&phis, &targets, fm, cfg.model_lambda, 1.0, cfg.w_norm_bound)?;
    let zeta = match cfg.zeta {
        Some(z) => z,
        None => {
            let ds = fm.state_dim as f64;
            let sse: f64 = phis
                .iter()
                .zip(&targets)
                .map(|(p, y)| (provisional.predict_features(p) - y).norm_squared())
                .sum();
            (sse / (ds * phis.len() as f64)).sqrt().max(1e-6)
        }
    };
    let model = KnrModel::fit_features(&phis, &targets, fm, cfg.model_lambda, zeta, cfg.w_norm_bound)?;
    let penalty = match cfg.penalty {
        PenaltyVariant::Theory => Penalty::Theory(model.clone(), cfg.delta),
        PenaltyVariant::Ensemble => Penalty::Ensemble(EnsembleModel::fit_bootstrap(
            &phis,
            &targets,
            fm,
            cfg.ensemble_members,
            cfg.model_lambda,
            zeta,
            cfg.seed,
        )?),
    };
    Ok(Fitted {
        learned: LearnedLinearEnv::new(model, env),
        penalty,
    })
}

fn collect<E>(env: &E, policy: &GaussianLinearPolicy, steps: usize, seed: u64) -> Vec<Trajectory<Vec<f64>, Vec<f64>>>
where
    E: Environment<State = Vec<f64>, Action = Vec<f64>> + Sync,
{
    let episodes = steps.div_ceil(env.horizon().max(1)).max(1);
    (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = rng_from_seed(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(e as u64));
            rollout_one(env, policy, &mut rng)
        })
        .collect()
}

fn warm_policy(env: &LinearGaussianEnv, offline: &VectorOffline, cfg: &MiloConfig) -> Result<GaussianLinearPolicy> {
    if cfg.warm_start {
        let empty: VectorExpert = ExpertDataset {
            meta: DatasetMeta {
                kind: DatasetKind::Expert,
                env: offline.meta.env.clone(),
                seed: 0,
                n: 0,
                policy: None,
            },
            pairs: vec![],
        };
        bc_gaussian(&empty, Some(offline), crate::policy_opt::MIN_LOG_STD)
    } else {
        Ok(GaussianLinearPolicy::zeros(env.state_dim(), env.action_dim()))
    }
}

enum Objective<'a> {
    Imitate { expert: &'a VectorExpert },
    TrueCost,
}

fn run(
    env: &LinearGaussianEnv,
    objective: Objective<'_>,
    offline: &VectorOffline,
    cfg: &MiloConfig,
) -> Result<ContinuousSolution> {
    let start = Instant::now();
    cfg.validate()?;
    if offline.is_empty() {
        return Err(invalid("offline dataset must be nonempty"));
    }
    let h = env.horizon();
    let fitted = fit_models(env, offline, cfg)?;
    let mut policy = warm_policy(env, offline, cfg)?;

    let (rff, expert_pairs, expert_mean) = match &objective {
        Objective::Imitate { expert } => {
            if expert.is_empty() {
                return Err(invalid("expert dataset must be nonempty"));
            }
            let (features, bandwidth) = match cfg.discriminator {
                DiscriminatorSpec::Rff { features, bandwidth } => (features, bandwidth),
                _ => return Err(invalid("continuous imitation needs a random Fourier feature discriminator")),
            };
            let inputs: Vec<Vec<f64>> = offline
                .triples
                .iter()
                .map(|t| t.s.iter().chain(&env.clip_action(&t.a)).copied().collect())
                .collect();
            let map = RffMap::new(env.state_dim() + env.action_dim(), features, bandwidth, cfg.seed ^ 0x5eed)?
                .with_normalizer(InputNormalizer::fit(&inputs)?)?;
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = expert.pairs.iter().map(|p| (p.s.clone(), p.a.clone())).collect();
            let feats: Vec<DVector<f64>> = pairs.iter().map(|(s, a)| map.featurize_sa(s, &env.clip_action(a))).collect();
            let mean = mean_embedding(&feats, map.dim());
            (Some(map), pairs, mean)
        }
        Objective::TrueCost => (None, vec![], vec![]),
    };
    let npg_cfg = NpgConfig {
        lambda_bc: if rff.is_some() { cfg.lambda_bc } else { 0.0 },
        ..cfg.npg.clone()
    };
    let top = 2.0 * h as f64 + 1.0;
    let eval_seed = cfg.seed.wrapping_add(0xE7A1);
    let mut rows = Vec::with_capacity(cfg.iterations);

    for it in 1..=cfg.iterations {
        let batch_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(it as u64);
        let mut trajs = collect(&fitted.learned, &policy, cfg.advantage.batch_size, batch_seed);

        // Penalty and clipped costs for every visited pair.
        let pens: Vec<Vec<f64>> = trajs
            .iter()
            .map(|tr| tr.steps.iter().map(|st| fitted.penalty.eval(&st.state, &env.clip_action(&st.action), h)).collect())
            .collect();
        let (disc, ipm) = match &rff {
            Some(map) => {
                let feats: Vec<DVector<f64>> = trajs
                    .iter()
                    .flat_map(|tr| tr.steps.iter().map(|st| map.featurize_sa(&st.state, &env.clip_action(&st.action))))
                    .collect();
                let (d, v) = mmd_best_response(&mean_embedding(&feats, map.dim()), &expert_mean)?;
                (Some((map, d)), v)
            }
            None => (None, 0.0),
        };
        let lp = cfg.lambda_penalty;
        for (tr, pen) in trajs.iter_mut().zip(&pens) {
            for (st, b) in tr.steps.iter_mut().zip(pen) {
                let a = env.clip_action(&st.action);
                let base = match &disc {
                    Some((map, d)) => (1.0 - lp) * shifted(d, &map.featurize_sa(&st.state, &a), map.max_norm()) + lp * b,
                    None => env.cost(&st.state, &a) + b,
                };
                st.cost = base.clamp(0.0, top);
            }
        }
        let n_traj = trajs.len() as f64;
        let v_model = trajs.iter().map(|t| t.total_cost()).sum::<f64>() / n_traj;
        let total_steps: usize = trajs.iter().map(|t| t.len()).sum();
        let penalty_mass = pens.iter().flatten().sum::<f64>() / total_steps.max(1) as f64;

        let (advs, _) = estimate_advantages(&trajs, |s: &Vec<f64>, t| critic_features_continuous(s, t, h), &cfg.advantage)?;
        let samples: Vec<(Vec<f64>, Vec<f64>)> = trajs
            .iter()
            .flat_map(|tr| tr.steps.iter().map(|st| (st.state.clone(), st.action.clone())))
            .collect();
        let flat: Vec<f64> = advs.into_iter().flatten().collect();
        let info = npg_step(&mut policy, &samples, &flat, &expert_pairs, &npg_cfg)?;
        log::debug!("iteration {it}: ipm {ipm:.4}, kl {:.4}, accepted {}", info.kl, info.accepted);

        let v_true = monte_carlo_value(env, &policy, eval_seed, cfg.eval_episodes).0;
        check_finite(it, &[v_true, v_model])?;
        rows.push(IterationMetrics {
            iter: it,
            ipm,
            v_true,
            v_model,
            bc_loss: if expert_pairs.is_empty() { 0.0 } else { bc_loss(&policy, &expert_pairs) },
            penalty_mass,
        });
    }
    let final_v_true = rows.last().map(|r| r.v_true).unwrap_or(f64::NAN);
    Ok(ContinuousSolution {
        policy,
        report: SolverReport {
            iterations: rows,
            final_v_true,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    })
}

fn shifted(d: &LinearDiscriminator, phi: &DVector<f64>, phi_max: f64) -> f64 {
    d.eval_shifted(phi, phi_max)
}

/// Pessimistic min-max imitation with a ridge dynamics model, RFF
/// discriminator and BC-regularized NPG.
pub fn solve_milo_continuous(
    env: &LinearGaussianEnv,
    expert: &VectorExpert,
    offline: &VectorOffline,
    cfg: &MiloConfig,
) -> Result<ContinuousSolution> {
    run(env, Objective::Imitate { expert }, offline, cfg)
}

/// NPG on the known cost plus penalty inside the learned model.
pub fn solve_offline_rl_continuous(env: &LinearGaussianEnv, offline: &VectorOffline, cfg: &MiloConfig) -> Result<ContinuousSolution> {
    run(env, Objective::TrueCost, offline, cfg)
}
