//! The pessimistic min-max loop, its offline-RL special case, and BC baselines.

mod baselines;
mod continuous;
mod tabular;

pub use baselines::{
    bc_gaussian, bc_tabular, calibrate_epsilon, linear_feedback_policy, normalized_score, random_value_continuous, BehaviorCalibration,
};
pub use continuous::{
    critic_features_continuous, solve_milo_continuous, solve_offline_rl_continuous, ContinuousSolution,
    LearnedLinearEnv,
};
pub use tabular::{
    ablate_pessimism, model_penalty_table, solve_milo_tabular, solve_offline_rl_tabular, TabularSolution,
};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminators::FiniteClass;
use crate::error::{invalid, Result};
use crate::models::PenaltyVariant;
use crate::policy_opt::{AdvantageConfig, NpgConfig};

/// Where the tabular uncertainty `sigma(s, a)` comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    /// Count-based concentration bound.
    #[default]
    Theory,
    /// Exact `||P_hat - P||_1` against the true model (test oracle only).
    OracleTv,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscriminatorSpec {
    /// Unit-ball linear functions of one-hot `(s, a)` features, shifted to `[0, 1]`.
    #[default]
    OneHotMmd,
    /// Explicit finite class of cost tables.
    Finite { functions: Vec<Vec<f64>> },
    /// Unit-ball linear functions of random Fourier features, shifted to `[0, 1]`.
    Rff {
        #[serde(default = "default_rff_features")]
        features: usize,
        /// Bandwidth on standardized inputs.
        #[serde(default = "default_rff_bandwidth")]
        bandwidth: f64,
    },
}

fn default_rff_features() -> usize {
    256
}

fn default_rff_bandwidth() -> f64 {
    1.0
}

impl DiscriminatorSpec {
    pub fn finite_class(&self) -> Result<Option<FiniteClass>> {
        match self {
            DiscriminatorSpec::Finite { functions } => Ok(Some(FiniteClass::new(functions.clone())?)),
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TabularMode {
    /// Full argmin by value iteration against each discriminator.
    BestResponse,
    /// Incremental exact natural gradient on softmax logits.
    #[default]
    Npg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiloConfig {
    pub iterations: usize,
    pub lambda_bc: f64,
    pub lambda_penalty: f64,
    pub penalty: PenaltyVariant,
    pub sigma_source: SigmaSource,
    pub delta: f64,
    /// Count regularizer (tabular) or ridge parameter (linear).
    pub model_lambda: f64,
    /// Model noise scale; estimated from residuals when absent.
    pub zeta: Option<f64>,
    /// Spectral-norm bound on the true weights used in the confidence width.
    pub w_norm_bound: f64,
    pub ensemble_members: usize,
    pub discriminator: DiscriminatorSpec,
    pub tabular_mode: TabularMode,
    /// Step size of the exact tabular natural gradient.
    pub tabular_eta: f64,
    pub npg: NpgConfig,
    pub advantage: AdvantageConfig,
    /// One pass of behavior cloning on the offline data before the loop.
    pub warm_start: bool,
    pub seed: u64,
    /// Episodes for Monte Carlo evaluation in the true environment (continuous).
    pub eval_episodes: usize,
}

impl Default for MiloConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            lambda_bc: 0.1,
            lambda_penalty: 0.5,
            penalty: PenaltyVariant::Theory,
            sigma_source: SigmaSource::Theory,
            delta: 0.1,
            model_lambda: 1.0,
            zeta: None,
            w_norm_bound: 1.0,
            ensemble_members: 4,
            discriminator: DiscriminatorSpec::OneHotMmd,
            tabular_mode: TabularMode::Npg,
            tabular_eta: 0.5,
            npg: NpgConfig::default(),
            advantage: AdvantageConfig {
                batch_size: 4_000,
                ..Default::default()
            },
            warm_start: true,
            seed: 0,
            eval_episodes: 200,
        }
    }
}

impl MiloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda_penalty) {
            return Err(invalid("lambda_penalty must lie in [0, 1]"));
        }
        if self.lambda_bc < 0.0 {
            return Err(invalid("lambda_bc must be nonnegative"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(self.model_lambda > 0.0) {
            return Err(invalid("model_lambda must be positive"));
        }
        if matches!(self.zeta, Some(z) if !(z > 0.0)) {
            return Err(invalid("zeta must be positive"));
        }
        if !(self.tabular_eta > 0.0) {
            return Err(invalid("tabular_eta must be positive"));
        }
        if self.penalty == PenaltyVariant::Ensemble && self.ensemble_members < 2 {
            return Err(invalid("an ensemble needs at least two members"));
        }
        self.npg.validate()?;
        self.advantage.validate()
    }
}

/// Per-iteration metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    /// Discriminator gap `E_model f - E_expert f` at the best response.
    pub ipm: f64,
    /// True-cost value in the real environment.
    pub v_true: f64,
    /// Value of the mixed cost inside the learned model.
    pub v_model: f64,
    pub bc_loss: f64,
    /// `E_{d_model}[b]`.
    pub penalty_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: Vec<IterationMetrics>,
    pub final_v_true: f64,
    pub wall_clock_secs: f64,
}

impl SolverReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    /// Learning-curve CSV: `iter,ipm,v_true,v_model,bc_loss,penalty_mass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for m in &self.iterations {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Same report without the timing field, for determinism checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

pub(crate) fn check_finite(iter: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::Diverged {
            iteration: iter,
            message: "non-finite policy value".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_expected_header() {
        let r = SolverReport {
            iterations: vec![IterationMetrics {
                iter: 1,
                ipm: 0.5,
                v_true: 3.0,
                v_model: 2.0,
                bc_loss: 0.1,
                penalty_mass: 0.25,
            }],
            final_v_true: 3.0,
            wall_clock_secs: 0.0,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iter,ipm,v_true,v_model,bc_loss,penalty_mass");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let c = MiloConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<MiloConfig>(&s).unwrap(), c);
        let partial: MiloConfig = serde_json::from_str(r#"{"iterations": 3, "discriminator": {"kind": "rff"}}"#).unwrap();
        assert_eq!(partial.iterations, 3);
        assert_eq!(partial.discriminator, DiscriminatorSpec::Rff { features: 256, bandwidth: 1.0 });
        assert!(MiloConfig { lambda_penalty: 1.5, ..c.clone() }.validate().is_err());
        assert!(MiloConfig { iterations: 0, ..c }.validate().is_err());
    }
}
