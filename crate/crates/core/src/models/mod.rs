//! Learned dynamics with calibrated uncertainty, and the penalties built on them.

mod ensemble;
mod gp;
mod knr;
mod tabular;

pub use ensemble::{max_pairwise_distance, EnsembleModel};
pub use gp::{median_distance, GpModel, GpSigmaForm, Kernel};
pub use knr::{KnrModel, ILL_CONDITIONED};
pub use tabular::{sigma_tabular, TabularModel};

use serde::{Deserialize, Serialize};

use crate::error::{dim, Result};
use crate::mdp::{LinearGaussianEnv, Transitions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyVariant {
    /// `H min(sigma, 2)`.
    #[default]
    Theory,
    /// Maximum pairwise ensemble disagreement.
    Ensemble,
}

/// `H min(sigma, 2)`.
pub fn theory_penalty(sigma: f64, horizon: usize) -> f64 {
    horizon as f64 * sigma.min(2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub violations: usize,
    pub total: usize,
    pub fraction: f64,
}

impl CalibrationResult {
    fn from_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        let (mut violations, mut total) = (0, 0);
        for bad in flags {
            total += 1;
            violations += bad as usize;
        }
        let fraction = if total == 0 { 0.0 } else { violations as f64 / total as f64 };
        Self {
            violations,
            total,
            fraction,
        }
    }
}

/// Compare exact `||P_hat - P||_1` with `min(sigma, 2)` at every pair.
pub fn calibration_check_tabular(p_hat: &Transitions, truth: &Transitions, sigma: &[f64]) -> Result<CalibrationResult> {
    let (ns, na) = (truth.n_states(), truth.n_actions());
    if p_hat.n_states() != ns || p_hat.n_actions() != na || sigma.len() != ns * na {
        return Err(dim("calibration inputs disagree on sizes"));
    }
    Ok(CalibrationResult::from_flags((0..ns * na).map(|sa| {
        let (s, a) = (sa / na, sa % na);
        p_hat.l1_distance(truth, s, a) > sigma[sa].min(2.0)
    })))
}

/// Gaussian surrogate: `||mu_hat - mu*||_2 / zeta` against `min(sigma, 2)` at
/// each query. `model` returns `(predicted mean, sigma)`.
pub fn calibration_check_gaussian<F>(env: &LinearGaussianEnv, queries: &[(Vec<f64>, Vec<f64>)], mut model: F) -> CalibrationResult
where
    F: FnMut(&[f64], &[f64]) -> (nalgebra::DVector<f64>, f64),
{
    CalibrationResult::from_flags(queries.iter().map(|(s, a)| {
        let (mu_hat, sigma) = model(s, a);
        let gap = (mu_hat - env.true_mean(s, a)).norm() / env.noise_std();
        gap > sigma.min(2.0)
    }))
}
