//! Ground-truth environments, policies and exact dynamic programming.

mod envs;
mod finite;
mod linear;

pub use envs::{chain, gridworld, random_mdp, random_simplex, trap_gridworld, DoubleIntegratorSpec, GridworldSpec};
pub use finite::{
    occupancy, occupancy_by_step, simulation_gap, value, values_by_step, DecisionRule, FiniteMdp,
    NonstationaryPolicy, SimulationGap, TabularPolicy, Transitions,
};
pub(crate) use finite::{dot, sample_index};
pub use linear::{lqr_gain, FeatureMap, InitialBox, LinearGaussianEnv, QuadraticCost};

use rand::SeedableRng;

/// The RNG used for every stochastic simulation in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Episodic environment that can be simulated.
pub trait Environment {
    type State: Clone;
    type Action: Clone;

    fn horizon(&self) -> usize;
    fn initial_state(&self, rng: &mut SimRng) -> Self::State;
    /// Returns `(cost, next_state)`.
    fn step(&self, s: &Self::State, a: &Self::Action, rng: &mut SimRng) -> (f64, Self::State);
}

/// Anything that can pick an action.
pub trait Policy<S, A> {
    fn sample_action(&self, s: &S, rng: &mut SimRng) -> A;
}

impl<S, A, P: Policy<S, A> + ?Sized> Policy<S, A> for &P {
    fn sample_action(&self, s: &S, rng: &mut SimRng) -> A {
        (**self).sample_action(s, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step<S, A> {
    pub state: S,
    pub action: A,
    pub cost: f64,
    pub next_state: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S, A> {
    pub steps: Vec<Step<S, A>>,
}

impl<S, A> Trajectory<S, A> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

/// Roll out one full-horizon episode.
pub fn rollout_one<E, P>(env: &E, policy: &P, rng: &mut SimRng) -> Trajectory<E::State, E::Action>
where
    E: Environment,
    P: Policy<E::State, E::Action> + ?Sized,
{
    let mut s = env.initial_state(rng);
    let mut steps = Vec::with_capacity(env.horizon());
    for _ in 0..env.horizon() {
        let a = policy.sample_action(&s, rng);
        let (cost, next) = env.step(&s, &a, rng);
        steps.push(Step {
            state: s,
            action: a,
            cost,
            next_state: next.clone(),
        });
        s = next;
    }
    Trajectory { steps }
}

/// `n` episodes, deterministic given `seed`.
pub fn rollout<E, P>(env: &E, policy: &P, seed: u64, n: usize) -> Vec<Trajectory<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action> + ?Sized,
{
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rollout_one(env, policy, &mut rng)).collect()
}

/// Monte Carlo estimate of the expected cumulative cost and its standard error.
pub fn monte_carlo_value<E, P>(env: &E, policy: &P, seed: u64, n: usize) -> (f64, f64)
where
    E: Environment,
    P: Policy<E::State, E::Action> + ?Sized,
{
    let mut rng = rng_from_seed(seed);
    let returns: Vec<f64> = (0..n)
        .map(|_| rollout_one(env, policy, &mut rng).total_cost())
        .collect();
    mean_and_stderr(&returns)
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
