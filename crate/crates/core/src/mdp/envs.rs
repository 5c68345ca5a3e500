//! Built-in environments.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, FiniteMdp, InitialBox, LinearGaussianEnv, QuadraticCost, SimRng, Transitions};
use crate::error::{invalid, Result};

/// Grid navigation: four moves, slip to a uniformly random move with probability
/// `slip`, unit cost everywhere except the absorbing goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    #[serde(default)]
    pub slip: f64,
    #[serde(default)]
    pub start: (usize, usize),
    /// Defaults to the corner opposite `(0, 0)`.
    #[serde(default)]
    pub goal: Option<(usize, usize)>,
}

impl GridworldSpec {
    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal.unwrap_or((self.width - 1, self.height - 1))
    }

    pub fn index(&self, (x, y): (usize, usize)) -> usize {
        y * self.width + x
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.horizon == 0 {
            return Err(invalid("gridworld dimensions and horizon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(invalid("slip must lie in [0, 1]"));
        }
        let (gx, gy) = self.goal_cell();
        if gx >= self.width || gy >= self.height || self.start.0 >= self.width || self.start.1 >= self.height {
            return Err(invalid("start and goal must lie inside the grid"));
        }
        Ok(())
    }

    fn moved(&self, s: usize, action: usize) -> usize {
        let (x, y) = (s % self.width, s / self.width);
        let (nx, ny) = match action {
            0 => (x, y.saturating_sub(1)),
            1 => (x, (y + 1).min(self.height - 1)),
            2 => (x.saturating_sub(1), y),
            _ => ((x + 1).min(self.width - 1), y),
        };
        ny * self.width + nx
    }
}

const MOVES: usize = 4;

/// Gridworld as a [`FiniteMdp`]. Actions: up, down, left, right.
pub fn gridworld(spec: &GridworldSpec) -> Result<FiniteMdp> {
    build_grid(spec, false)
}

/// Gridworld with a fifth "jump" action that moves to an absorbing pit state
/// (index `width * height`) whose cost is one forever.
pub fn trap_gridworld(spec: &GridworldSpec) -> Result<FiniteMdp> {
    build_grid(spec, true)
}

fn build_grid(spec: &GridworldSpec, with_trap: bool) -> Result<FiniteMdp> {
    spec.validate()?;
    let cells = spec.width * spec.height;
    let ns = if with_trap { cells + 1 } else { cells };
    let na = if with_trap { MOVES + 1 } else { MOVES };
    let goal = spec.index(spec.goal_cell());
    let pit = cells;
    let mut probs = vec![0.0; ns * na * ns];
    let mut cost = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let row = &mut probs[(s * na + a) * ns..(s * na + a + 1) * ns];
            if with_trap && s == pit {
                row[pit] = 1.0;
                cost[s * na + a] = 1.0;
                continue;
            }
            if s == goal {
                row[goal] = 1.0;
                continue;
            }
            cost[s * na + a] = 1.0;
            if a == MOVES {
                row[pit] = 1.0;
                continue;
            }
            row[spec.moved(s, a)] += 1.0 - spec.slip;
            for m in 0..MOVES {
                row[spec.moved(s, m)] += spec.slip / MOVES as f64;
            }
        }
    }
    let mut d0 = vec![0.0; ns];
    d0[spec.index(spec.start)] = 1.0;
    FiniteMdp::new(Transitions::new(ns, na, probs)?, cost, spec.horizon, d0)
}

/// Corridor of `n` states; action 0 moves left, action 1 moves right (each
/// slipping to the opposite move with probability `slip`). The right end is an
/// absorbing zero-cost goal; the walk starts at state 0.
pub fn chain(n: usize, horizon: usize, slip: f64) -> Result<FiniteMdp> {
    if n == 0 || horizon == 0 || !(0.0..=1.0).contains(&slip) {
        return Err(invalid("chain needs n >= 1, horizon >= 1 and slip in [0, 1]"));
    }
    let na = 2;
    let goal = n - 1;
    let mut probs = vec![0.0; n * na * n];
    let mut cost = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let row = &mut probs[(s * na + a) * n..(s * na + a + 1) * n];
            if s == goal {
                row[goal] = 1.0;
                continue;
            }
            cost[s * na + a] = 1.0;
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            let (intended, other) = if a == 0 { (left, right) } else { (right, left) };
            row[intended] += 1.0 - slip;
            row[other] += slip;
        }
    }
    let mut d0 = vec![0.0; n];
    d0[0] = 1.0;
    FiniteMdp::new(Transitions::new(n, na, probs)?, cost, horizon, d0)
}

/// Random MDP with exponential-normalized transition rows, uniform costs and a
/// random initial distribution.
pub fn random_mdp(n_states: usize, n_actions: usize, horizon: usize, rng: &mut SimRng) -> Result<FiniteMdp> {
    let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        probs.extend(random_simplex(n_states, rng));
    }
    let cost = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let d0 = random_simplex(n_states, rng);
    FiniteMdp::new(Transitions::new(n_states, n_actions, probs)?, cost, horizon, d0)
}

/// Uniform draw from the probability simplex (flat Dirichlet).
pub fn random_simplex(n: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    // Renormalize once more so the row sums to one to within an ulp or two.
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

/// Parameters of the built-in position/velocity system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleIntegratorSpec {
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

fn default_dt() -> f64 {
    0.2
}

fn default_noise() -> f64 {
    0.05
}

impl LinearGaussianEnv {
    /// Damped double integrator: state `[position, velocity]`, one force input.
    pub fn double_integrator(spec: &DoubleIntegratorSpec) -> Result<Self> {
        let state_bounds = vec![[-3.0, 3.0], [-3.0, 3.0]];
        let action_bounds = vec![[-2.0, 2.0]];
        // Largest possible ||[s; a]|| so that phi never needs projecting.
        let scale = (9.0f64 + 9.0 + 4.0).sqrt();
        let fm = FeatureMap::new(2, 1, scale)?;
        let dt = spec.dt;
        let a = [[1.0, dt], [0.0, 0.95]];
        let b = [0.5 * dt * dt, dt];
        let w = DMatrix::from_row_slice(
            2,
            3,
            &[a[0][0] * scale, a[0][1] * scale, b[0] * scale, a[1][0] * scale, a[1][1] * scale, b[1] * scale],
        );
        LinearGaussianEnv::new(
            w,
            fm,
            spec.noise_std,
            spec.horizon,
            InitialBox {
                low: vec![-2.0, -1.0],
                high: vec![2.0, 1.0],
            },
            QuadraticCost {
                state_weights: vec![1.0, 0.25],
                action_weights: vec![0.05],
                scale: 4.0,
            },
            state_bounds,
            action_bounds,
        )
    }
}
