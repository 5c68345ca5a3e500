//! The min-player: exact planning and BC-regularized natural policy gradient.

mod gae;
mod npg;
mod policies;
mod vi;

pub use gae::{discounted_returns, estimate_advantages, gae, normalize, AdvantageConfig, LinearCritic};
pub use npg::{
    dense_fisher, exact_tabular_advantage, exact_tabular_npg_step, fisher_apply, natural_direction, npg_step,
    score_matrix, NpgConfig, NpgStepInfo,
};
pub use policies::{
    bc_gradient, bc_loss, GaussianLinearPolicy, ParametricPolicy, SoftmaxTabularPolicy, INIT_LOG_STD, MIN_LOG_STD,
};
pub use vi::{enumerate_deterministic, exact_value_iteration, q_values, PlanningResult};
