//! Coverage coefficients, information gains, effective dimensions and the
//! error-bound expressions built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::models::GpModel;

/// A nonnegative quantity that may be unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Extended::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Extended::Finite(x) => Some(*x),
            Extended::Infinite => None,
        }
    }

    /// Apply a map to the finite value; infinity stays infinite.
    pub fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            Extended::Finite(x) => Extended::Finite(f(x)),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

/// `max_{d_e > 0} d_e / rho`; infinite when `d_e` has mass where `rho` has none.
pub fn concentrability(d_expert: &[f64], rho: &[f64]) -> Result<Extended> {
    if d_expert.len() != rho.len() {
        return Err(dim("distributions differ in length"));
    }
    let mut best = 0.0f64;
    for (e, r) in d_expert.iter().zip(rho) {
        if *e <= 0.0 {
            continue;
        }
        if *r <= 0.0 {
            return Ok(Extended::Infinite);
        }
        best = best.max(e / r);
    }
    Ok(Extended::Finite(best))
}

const RANGE_TOL: f64 = 1e-8;

/// `sup_x x^T S_e x / x^T S_rho x` over `range(S_rho)`. Infinite when `S_e`
/// has a component of norm above `1e-8` outside that range.
pub fn relative_condition_number(sigma_e: &DMatrix<f64>, sigma_rho: &DMatrix<f64>) -> Result<Extended> {
    let d = sigma_rho.nrows();
    if !sigma_rho.is_square() || sigma_e.shape() != sigma_rho.shape() {
        return Err(dim("covariances must be square and of equal size"));
    }
    let eig = sigma_rho.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cut = 1e-12 * top.max(1.0);
    let keep: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] > cut).collect();
    let null: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] <= cut).collect();
    let u = &eig.eigenvectors;
    if !null.is_empty() {
        let q = u.select_columns(&null);
        if (sigma_e * &q).norm() > RANGE_TOL {
            return Ok(Extended::Infinite);
        }
    }
    if keep.is_empty() {
        return Ok(Extended::Finite(0.0));
    }
    // Whiten within the range: L^{-1/2} U_r^T S_e U_r L^{-1/2}.
    let ur = u.select_columns(&keep);
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        keep.len(),
        keep.iter().map(|&i| 1.0 / eig.eigenvalues[i].sqrt()),
    ));
    let m = &inv_sqrt * ur.transpose() * sigma_e * &ur * &inv_sqrt;
    let m = (&m + m.transpose()) * 0.5;
    let top = m.symmetric_eigenvalues().iter().cloned().fold(0.0f64, f64::max);
    Ok(Extended::Finite(top.max(0.0)))
}

fn check_nonincreasing(mu: &[f64]) -> Result<()> {
    let scale = mu.first().map(|x| x.abs()).unwrap_or(0.0).max(1.0);
    if mu.windows(2).any(|w| w[1] > w[0] + 1e-12 * scale) {
        return Err(invalid("eigenvalues must be nonincreasing"));
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(invalid("eigenvalues must be finite"));
    }
    Ok(())
}

// min{j >= 0 : j >= tail(j + 1) * scale}, with 1-based tails.
fn smallest_dimension(mu: &[f64], scale: f64) -> usize {
    let mut tails = vec![0.0; mu.len() + 1];
    for k in (0..mu.len()).rev() {
        tails[k] = tails[k + 1] + mu[k].max(0.0);
    }
    // tails[k] = B(k + 1) in 1-based terms.
    (0..=mu.len())
        .find(|&j| j as f64 >= tails[j] * scale)
        .unwrap_or(mu.len())
}

/// `d* = min{j : j >= B(j+1) n_o / zeta^2}`, `B(j) = sum_{k >= j} mu_k`.
pub fn effective_dimension(mu: &[f64], n_o: usize, zeta: f64) -> Result<usize> {
    check_nonincreasing(mu)?;
    if !(zeta > 0.0) {
        return Err(invalid("zeta must be positive"));
    }
    Ok(smallest_dimension(mu, n_o as f64 / (zeta * zeta)))
}

/// Empirical version over Gram eigenvalues: `min{j : j >= B_hat(j+1) / zeta^2}`.
pub fn empirical_effective_dimension(mu_hat: &[f64], zeta: f64) -> Result<usize> {
    check_nonincreasing(mu_hat)?;
    if !(zeta > 0.0) {
        return Err(invalid("zeta must be positive"));
    }
    Ok(smallest_dimension(mu_hat, 1.0 / (zeta * zeta)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrOForm {
    /// `8 H^2 E[min(sigma, 1)]`.
    #[default]
    Statement,
    /// `(6 H^2 + 2 H) E[min(sigma, 1)]`, the constant that falls out of the argument.
    Proof,
}

pub fn err_o_from_mean(mean_min_sigma: f64, horizon: usize, form: ErrOForm) -> f64 {
    let h = horizon as f64;
    match form {
        ErrOForm::Statement => 8.0 * h * h * mean_min_sigma,
        ErrOForm::Proof => (6.0 * h * h + 2.0 * h) * mean_min_sigma,
    }
}

/// `E_{d_e}[min(sigma, 1)]` by exact expectation.
pub fn expected_min_sigma(d_expert: &[f64], sigma: &[f64]) -> Result<f64> {
    if d_expert.len() != sigma.len() {
        return Err(dim("expert occupancy and sigma table differ in length"));
    }
    Ok(d_expert.iter().zip(sigma).map(|(d, s)| d * s.min(1.0)).sum())
}

/// Sample average of `min(sigma, 1)`.
pub fn sample_min_sigma(sigmas: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in sigmas {
        sum += s.min(1.0);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `2 H sqrt(ln(2 |F| / delta) / (2 n_e))`.
pub fn err_e(horizon: usize, class_size: usize, n_e: usize, delta: f64) -> Result<f64> {
    if n_e == 0 || class_size == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("need n_e > 0, |F| > 0 and delta in (0, 1)"));
    }
    let h = horizon as f64;
    Ok(2.0 * h * ((2.0 * class_size as f64 / delta).ln() / (2.0 * n_e as f64)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0 }
    }
}

/// Offline-error rate for finite MDPs (up to constants).
pub fn tabular_bound(
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    n_o: usize,
    concentrability: Extended,
    delta: f64,
    k: BoundConstants,
) -> Extended {
    let (h, s, a, n) = (horizon as f64, n_states as f64, n_actions as f64, n_o as f64);
    concentrability.map(|c| {
        k.c1 * h * h * (s * a * k.c2 / delta).ln() * ((c * s * s * a / n).sqrt() + c * s * a / n)
    })
}

/// Offline-error rate for linear models in terms of `rank(Sigma_rho)`.
pub fn knr_bound(
    horizon: usize,
    rank: usize,
    state_dim: usize,
    n_o: usize,
    condition: Extended,
    delta: f64,
    k: BoundConstants,
) -> Extended {
    let (h, r, ds, n) = (horizon as f64, rank as f64, state_dim as f64, n_o as f64);
    condition.map(|c| k.c1 * h * h * (r * r + r * (k.c2 / delta).ln()) * (ds * c / n).sqrt() * (1.0 + n).ln().sqrt())
}

/// Offline-error rate for GP models in terms of the effective dimension.
pub fn gp_bound(
    horizon: usize,
    d_star: usize,
    state_dim: usize,
    n_o: usize,
    condition: Extended,
    delta: f64,
    k: BoundConstants,
) -> Extended {
    let (h, d, ds, n) = (horizon as f64, d_star as f64, state_dim as f64, n_o as f64);
    condition.map(|c| {
        let log3 = (k.c2 * ds * n / delta).ln().max(0.0).powi(3);
        k.c1 * h * h * (d * d + d * (k.c2 / delta).ln()) * (ds * c / n).sqrt() * (log3 * (1.0 + n).ln()).sqrt()
    })
}

/// Mean posterior variance over query points.
pub fn learning_curve(gp: &GpModel, queries: &[Vec<f64>]) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    queries.iter().map(|x| gp.posterior_variance(x)).sum::<f64>() / queries.len() as f64
}

/// Both sides of `sum_i k_n(x_i, x_i) / zeta^2 = sum_i (mu_i / zeta^2) / (mu_i / zeta^2 + 1)`.
pub fn gp_trace_identity(gp: &GpModel) -> (f64, f64) {
    let z2 = gp.zeta() * gp.zeta();
    let lhs = gp.inputs().iter().map(|x| gp.posterior_kernel(x, x)).sum::<f64>() / z2;
    let rhs = gp
        .gram_eigenvalues()
        .iter()
        .map(|m| {
            let r = m.max(0.0) / z2;
            r / (r + 1.0)
        })
        .sum();
    (lhs, rhs)
}

/// Numerical rank with a relative eigenvalue cut.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let ev = crate::linalg::sym_eigenvalues(m);
    let top = ev.iter().cloned().fold(0.0f64, f64::max);
    ev.iter().filter(|&&x| x > 1e-10 * top.max(1e-300)).count()
}

/// Second moment `mean phi phi^T`.
pub fn second_moment<'a>(phis: impl IntoIterator<Item = &'a nalgebra::DVector<f64>>, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut n = 0usize;
    for p in phis {
        m.ger(1.0, p, p, 1.0);
        n += 1;
    }
    if n > 0 {
        m /= n as f64;
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Tabular only.
    pub concentrability: Option<Extended>,
    pub relative_condition_number: Option<Extended>,
    /// `ln det(Sigma / lambda)` of a ridge model.
    pub information_gain_bar: Option<f64>,
    /// `ln det(I + K / zeta^2)` of a GP.
    pub information_gain: Option<f64>,
    pub d_star: Option<usize>,
    pub d_hat: Option<usize>,
    pub err_o: f64,
    pub err_e: f64,
    pub err_o_proof_form: f64,
}

impl CoverageReport {
    /// Every finite entry must be nonnegative.
    pub fn is_consistent(&self) -> bool {
        let ext_ok = |e: &Extended| e.finite().is_none_or(|x| x >= 0.0);
        self.concentrability.as_ref().is_none_or(ext_ok)
            && self.relative_condition_number.as_ref().is_none_or(ext_ok)
            && self.information_gain_bar.is_none_or(|x| x >= 0.0)
            && self.information_gain.is_none_or(|x| x >= 0.0)
            && self.err_o >= 0.0
            && self.err_e >= 0.0
            && self.err_o_proof_form >= 0.0
    }
}
