use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DoubleIntegratorSpec, GridworldSpec};
use crate::policy_opt::MIN_LOG_STD;
use crate::solver::{DiscriminatorSpec, MiloConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Gridworld(GridworldSpec),
    TrapGridworld(GridworldSpec),
    Chain { n: usize, horizon: usize, slip: f64 },
    DoubleIntegrator(DoubleIntegratorSpec),
}

impl EnvSpec {
    pub fn is_continuous(&self) -> bool {
        matches!(self, EnvSpec::DoubleIntegrator(_))
    }

    pub fn id(&self) -> String {
        match self {
            EnvSpec::Gridworld(g) => format!("gridworld-{}x{}-h{}", g.width, g.height, g.horizon),
            EnvSpec::TrapGridworld(g) => format!("trap-gridworld-{}x{}-h{}", g.width, g.height, g.horizon),
            EnvSpec::Chain { n, horizon, .. } => format!("chain-{n}-h{horizon}"),
            EnvSpec::DoubleIntegrator(d) => format!("double-integrator-h{}", d.horizon),
        }
    }

    pub fn n_actions(&self) -> Option<usize> {
        match self {
            EnvSpec::Gridworld(_) => Some(4),
            EnvSpec::TrapGridworld(_) => Some(5),
            EnvSpec::Chain { .. } => Some(2),
            EnvSpec::DoubleIntegrator(_) => None,
        }
    }
}

/// Expert: exact planning on the true cost (tabular) or the LQ feedback law
/// with a fixed exploration std (continuous).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertSpec {
    pub log_std: f64,
}

impl Default for ExpertSpec {
    fn default() -> Self {
        Self { log_std: MIN_LOG_STD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorSpec {
    /// Expert mixed with uniform actions, mixing weight found by bisection so
    /// the normalized score hits `score`.
    TargetScore {
        score: f64,
        #[serde(default)]
        allowed_actions: Option<Vec<usize>>,
    },
    Epsilon {
        epsilon: f64,
        #[serde(default)]
        allowed_actions: Option<Vec<usize>>,
    },
    Uniform {
        #[serde(default)]
        allowed_actions: Option<Vec<usize>>,
    },
    /// Continuous expert mean with a wider Gaussian.
    NoisedExpert { log_std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Milo,
    MiloNopess,
    BcExpert,
    BcBoth,
    OfflineRl,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Milo, Method::MiloNopess, Method::BcExpert, Method::BcBoth, Method::OfflineRl];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Milo => "milo",
            Method::MiloNopess => "milo-nopess",
            Method::BcExpert => "bc-expert",
            Method::BcBoth => "bc-both",
            Method::OfflineRl => "offline-rl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (expected one of milo, milo-nopess, bc-expert, bc-both, offline-rl)")))
    }
}

fn default_pool() -> usize {
    10
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_eval_episodes() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub environment: EnvSpec,
    #[serde(default)]
    pub expert: ExpertSpec,
    pub behavior: BehaviorSpec,
    pub n_e: usize,
    pub n_o: usize,
    /// Expert episodes rolled out before sub-sampling `n_e` pairs.
    #[serde(default = "default_pool")]
    pub expert_pool: usize,
    /// Use every pair of one expert episode instead of `n_e` sub-sampled pairs.
    #[serde(default)]
    pub single_trajectory: bool,
    #[serde(default)]
    pub solver: MiloConfig,
    pub seeds: Vec<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Monte Carlo episodes for continuous evaluation.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Size of the discriminator class used in the statistical error term.
    /// Defaults to `|S||A|` (indicators) or twice the feature count.
    #[serde(default)]
    pub class_size: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds must be nonempty"));
        }
        if self.n_e == 0 || self.n_o == 0 || self.expert_pool == 0 {
            return Err(cfg_err("n_e, n_o and expert_pool must be positive"));
        }
        if self.methods.is_empty() {
            return Err(cfg_err("methods must be nonempty"));
        }
        if self.eval_episodes == 0 {
            return Err(cfg_err("eval_episodes must be positive"));
        }
        self.solver.validate().map_err(|e| cfg_err(format!("solver: {e}")))?;
        let continuous = self.environment.is_continuous();
        match (&self.behavior, continuous) {
            (BehaviorSpec::NoisedExpert { .. }, false) => {
                return Err(cfg_err("noised_expert behavior needs a continuous environment"))
            }
            (BehaviorSpec::NoisedExpert { .. }, true) => {}
            (_, true) => return Err(cfg_err("continuous environments support only noised_expert behavior")),
            (b, false) => {
                let na = self.environment.n_actions().unwrap_or(0);
                let allowed = match b {
                    BehaviorSpec::TargetScore { score, allowed_actions } => {
                        if !(0.0..=1.0).contains(score) {
                            return Err(cfg_err("target score must lie in [0, 1]"));
                        }
                        allowed_actions
                    }
                    BehaviorSpec::Epsilon { epsilon, allowed_actions } => {
                        if !(0.0..=1.0).contains(epsilon) {
                            return Err(cfg_err("epsilon must lie in [0, 1]"));
                        }
                        allowed_actions
                    }
                    BehaviorSpec::Uniform { allowed_actions } => allowed_actions,
                    BehaviorSpec::NoisedExpert { .. } => unreachable!(),
                };
                if let Some(a) = allowed {
                    if a.is_empty() || a.iter().any(|&x| x >= na) {
                        return Err(cfg_err(format!("allowed_actions must be nonempty indices below {na}")));
                    }
                }
            }
        }
        if continuous {
            let uses_milo = self.methods.iter().any(|m| matches!(m, Method::Milo | Method::MiloNopess));
            if uses_milo && !matches!(self.solver.discriminator, DiscriminatorSpec::Rff { .. }) {
                return Err(cfg_err("continuous imitation needs the rff discriminator"));
            }
        } else {
            if matches!(self.solver.discriminator, DiscriminatorSpec::Rff { .. }) {
                return Err(cfg_err("the rff discriminator needs a continuous environment"));
            }
            if self.solver.penalty == crate::models::PenaltyVariant::Ensemble {
                return Err(cfg_err("tabular models support only the theory penalty"));
            }
        }
        Ok(())
    }

    /// Seeds for the expert and offline datasets of run `seed`.
    pub fn data_seeds(seed: u64) -> (u64, u64) {
        let base = seed.wrapping_mul(0x2545_F491_4F6C_DD1D);
        (base.wrapping_add(1), base.wrapping_add(2))
    }
}
