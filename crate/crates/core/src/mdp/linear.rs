use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Environment, SimRng};
use crate::error::{dim, invalid, Result};
use crate::linalg::serde_rows;

/// `phi(s, a) = [s; a] / scale`, projected onto the unit ball when it leaves it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub state_dim: usize,
    pub action_dim: usize,
    pub scale: f64,
}

impl FeatureMap {
    pub fn new(state_dim: usize, action_dim: usize, scale: f64) -> Result<Self> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(invalid("feature scale must be positive"));
        }
        Ok(Self {
            state_dim,
            action_dim,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn features(&self, s: &[f64], a: &[f64]) -> DVector<f64> {
        debug_assert_eq!(s.len(), self.state_dim);
        debug_assert_eq!(a.len(), self.action_dim);
        let mut phi = DVector::from_iterator(
            self.dim(),
            s.iter().chain(a.iter()).map(|x| x / self.scale),
        );
        let norm = phi.norm();
        if norm > 1.0 {
            phi /= norm;
        }
        phi
    }
}

/// `min(1, (sum_i q_i s_i^2 + sum_j r_j a_j^2) / scale)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub state_weights: Vec<f64>,
    pub action_weights: Vec<f64>,
    pub scale: f64,
}

impl QuadraticCost {
    pub fn eval(&self, s: &[f64], a: &[f64]) -> f64 {
        let q: f64 = self.state_weights.iter().zip(s).map(|(w, x)| w * x * x).sum();
        let r: f64 = self.action_weights.iter().zip(a).map(|(w, x)| w * x * x).sum();
        ((q + r) / self.scale).clamp(0.0, 1.0)
    }
}

/// Uniform initial-state distribution over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Linear-Gaussian system `s' = W* phi(s, a) + N(0, zeta^2 I)`, clipped to a state box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianEnv {
    #[serde(with = "serde_rows")]
    w_star: DMatrix<f64>,
    feature_map: FeatureMap,
    noise_std: f64,
    horizon: usize,
    initial: InitialBox,
    cost: QuadraticCost,
    state_bounds: Vec<[f64; 2]>,
    action_bounds: Vec<[f64; 2]>,
}

impl LinearGaussianEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_star: DMatrix<f64>,
        feature_map: FeatureMap,
        noise_std: f64,
        horizon: usize,
        initial: InitialBox,
        cost: QuadraticCost,
        state_bounds: Vec<[f64; 2]>,
        action_bounds: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let (ds, da) = (feature_map.state_dim, feature_map.action_dim);
        if w_star.nrows() != ds || w_star.ncols() != feature_map.dim() {
            return Err(dim(format!(
                "W* is {}x{}, expected {}x{}",
                w_star.nrows(),
                w_star.ncols(),
                ds,
                feature_map.dim()
            )));
        }
        if !(noise_std > 0.0) {
            return Err(invalid("noise_std must be positive"));
        }
        if horizon == 0 {
            return Err(invalid("horizon must be positive"));
        }
        if initial.low.len() != ds || initial.high.len() != ds {
            return Err(dim("initial box dimension"));
        }
        if state_bounds.len() != ds || action_bounds.len() != da {
            return Err(dim("bounds dimension"));
        }
        if cost.state_weights.len() != ds || cost.action_weights.len() != da || !(cost.scale > 0.0) {
            return Err(invalid("cost weights must match dimensions and scale must be positive"));
        }
        Ok(Self {
            w_star,
            feature_map,
            noise_std,
            horizon,
            initial,
            cost,
            state_bounds,
            action_bounds,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.feature_map.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.feature_map.action_dim
    }

    pub fn w_star(&self) -> &DMatrix<f64> {
        &self.w_star
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn cost_fn(&self) -> &QuadraticCost {
        &self.cost
    }

    pub fn state_bounds(&self) -> &[[f64; 2]] {
        &self.state_bounds
    }

    pub fn action_bounds(&self) -> &[[f64; 2]] {
        &self.action_bounds
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        clip(a, &self.action_bounds)
    }

    pub fn clip_state(&self, s: &[f64]) -> Vec<f64> {
        clip(s, &self.state_bounds)
    }

    /// Mean of the next state before noise and clipping.
    pub fn true_mean(&self, s: &[f64], a: &[f64]) -> DVector<f64> {
        let a = self.clip_action(a);
        &self.w_star * self.feature_map.features(s, &a)
    }

    pub fn cost(&self, s: &[f64], a: &[f64]) -> f64 {
        self.cost.eval(s, &self.clip_action(a))
    }

    pub fn sample_initial(&self, rng: &mut SimRng) -> Vec<f64> {
        self.initial
            .low
            .iter()
            .zip(&self.initial.high)
            .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..*hi) } else { *lo })
            .collect()
    }

    /// Uniform draw from the action box.
    pub fn random_action(&self, rng: &mut SimRng) -> Vec<f64> {
        self.action_bounds
            .iter()
            .map(|[lo, hi]| rng.random_range(*lo..*hi))
            .collect()
    }
}

pub(crate) fn clip(x: &[f64], bounds: &[[f64; 2]]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(v, [lo, hi])| v.clamp(*lo, *hi))
        .collect()
}

impl Environment for LinearGaussianEnv {
    type State = Vec<f64>;
    type Action = Vec<f64>;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state(&self, rng: &mut SimRng) -> Vec<f64> {
        self.sample_initial(rng)
    }

    fn step(&self, s: &Vec<f64>, a: &Vec<f64>, rng: &mut SimRng) -> (f64, Vec<f64>) {
        let a = self.clip_action(a);
        let cost = self.cost.eval(s, &a);
        let mean = &self.w_star * self.feature_map.features(s, &a);
        let next: Vec<f64> = mean
            .iter()
            .map(|m| m + self.noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (cost, self.clip_state(&next))
    }
}

/// Infinite-horizon discrete LQR gain `K` (so `a = -K s`) for the unclipped
/// linear part of the system with cost `s^T Q s + a^T R a`.
pub fn lqr_gain(env: &LinearGaussianEnv) -> Result<DMatrix<f64>> {
    let (ds, da) = (env.state_dim(), env.action_dim());
    let scale = env.feature_map.scale;
    let a_mat = env.w_star.columns(0, ds) / scale;
    let b_mat = env.w_star.columns(ds, da) / scale;
    let q = DMatrix::from_diagonal(&DVector::from_vec(env.cost.state_weights.clone()));
    let r = DMatrix::from_diagonal(&DVector::from_vec(env.cost.action_weights.clone()));
    let mut p = q.clone();
    let mut gain = DMatrix::zeros(da, ds);
    for _ in 0..10_000 {
        let btp = b_mat.transpose() * &p;
        let lhs = &r + &btp * &b_mat;
        let rhs = &btp * &a_mat;
        gain = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| crate::error::Error::LinearAlgebra("singular Riccati step".into()))?;
        let next = &q + a_mat.transpose() * &p * &a_mat - a_mat.transpose() * &p * &b_mat * &gain;
        let diff = (&next - &p).abs().max();
        p = next;
        if diff < 1e-12 {
            break;
        }
    }
    Ok(gain)
}
