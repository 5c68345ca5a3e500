use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::linalg::{cholesky_jitter, logdet_chol, sym_eigenvalues};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-||x - y||^2 / (2 bw^2))`, so `k(x, x) = 1`.
    Rbf { bandwidth: f64 },
    /// `x^T y`. Finite rank; inputs must have norm at most one.
    Linear,
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Rbf { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }

    /// RBF kernel with bandwidth set to the median pairwise distance of (at
    /// most the first 500) inputs.
    pub fn rbf_median(xs: &[Vec<f64>]) -> Self {
        Kernel::Rbf {
            bandwidth: median_distance(xs),
        }
    }
}

pub fn median_distance(xs: &[Vec<f64>]) -> f64 {
    let m = xs.len().min(500);
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let d2: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(d2.sqrt());
        }
    }
    d.retain(|x| *x > 0.0);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    d[d.len() / 2]
}

/// Which uncertainty width to report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpSigmaForm {
    /// `(beta / zeta) sqrt(k_n(x, x))`.
    #[default]
    Sqrt,
    /// `beta k_n(x, x) / zeta`.
    Linear,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GpDoc {
    kernel: Kernel,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    zeta: f64,
    state_dim: usize,
}

/// Gaussian-process dynamics model with one independent output per state dimension.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GpDoc", into = "GpDoc")]
pub struct GpModel {
    kernel: Kernel,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    zeta: f64,
    state_dim: usize,
    gram: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    /// `(K + zeta^2 I)^{-1} Y`, one column per output.
    alpha: DMatrix<f64>,
    jitter: f64,
}

impl TryFrom<GpDoc> for GpModel {
    type Error = crate::error::Error;

    fn try_from(doc: GpDoc) -> Result<Self> {
        GpModel::fit(doc.inputs, doc.targets, doc.kernel, doc.zeta, doc.state_dim)
    }
}

impl From<GpModel> for GpDoc {
    fn from(m: GpModel) -> Self {
        GpDoc {
            kernel: m.kernel,
            inputs: m.inputs,
            targets: m.targets,
            zeta: m.zeta,
            state_dim: m.state_dim,
        }
    }
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.inputs == other.inputs
            && self.targets == other.targets
            && self.zeta == other.zeta
            && self.state_dim == other.state_dim
    }
}

impl GpModel {
    pub fn fit(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, kernel: Kernel, zeta: f64, state_dim: usize) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(invalid("zeta must be positive"));
        }
        if let Kernel::Rbf { bandwidth } = kernel {
            if !(bandwidth > 0.0) {
                return Err(invalid("RBF bandwidth must be positive"));
            }
        }
        if inputs.len() != targets.len() {
            return Err(dim("input and target counts differ"));
        }
        if targets.iter().any(|t| t.len() != state_dim) {
            return Err(dim("target has the wrong dimension"));
        }
        if let Some(x0) = inputs.first() {
            if inputs.iter().any(|x| x.len() != x0.len()) {
                return Err(dim("inputs have inconsistent dimensions"));
            }
        }
        let n = inputs.len();
        let gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&inputs[i], &inputs[j]));
        let (chol, alpha, jitter) = if n == 0 {
            (None, DMatrix::zeros(0, state_dim), 0.0)
        } else {
            let mut kz = gram.clone();
            for i in 0..n {
                kz[(i, i)] += zeta * zeta;
            }
            let (chol, jitter) = cholesky_jitter(&kz)?;
            let y = DMatrix::from_fn(n, state_dim, |i, j| targets[i][j]);
            let alpha = chol.solve(&y);
            (Some(chol), alpha, jitter)
        };
        Ok(Self {
            kernel,
            inputs,
            targets,
            zeta,
            state_dim,
            gram,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn kbar(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.inputs.iter().map(|xi| self.kernel.eval(xi, x)))
    }

    pub fn posterior_mean(&self, x: &[f64]) -> DVector<f64> {
        if self.n() == 0 {
            return DVector::zeros(self.state_dim);
        }
        self.alpha.transpose() * self.kbar(x)
    }

    pub fn posterior_kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let prior = self.kernel.eval(x, y);
        match &self.chol {
            None => prior,
            Some(chol) => {
                let kx = self.kbar(x);
                let ky = self.kbar(y);
                prior - kx.dot(&chol.solve(&ky))
            }
        }
    }

    /// `k_n(x, x)`, clamped at zero against rounding.
    pub fn posterior_variance(&self, x: &[f64]) -> f64 {
        self.posterior_kernel(x, x).max(0.0)
    }

    /// `ln det(I + K / zeta^2)`.
    pub fn information_gain(&self) -> f64 {
        match &self.chol {
            None => 0.0,
            Some(chol) => logdet_chol(chol) - self.n() as f64 * (self.zeta * self.zeta).ln(),
        }
    }

    /// `sqrt(d_S (2 + 150 log^3(d_S n / delta) I_n))`, with the logarithm
    /// floored at zero for tiny `n`.
    pub fn beta(&self, delta: f64) -> f64 {
        let ds = self.state_dim as f64;
        let gain = self.information_gain();
        let log_term = if self.n() == 0 {
            0.0
        } else {
            (ds * self.n() as f64 / delta).ln().max(0.0)
        };
        (ds * (2.0 + 150.0 * log_term.powi(3) * gain)).sqrt()
    }

    pub fn sigma(&self, x: &[f64], delta: f64, form: GpSigmaForm) -> f64 {
        let k = self.posterior_variance(x);
        let scale = self.beta(delta) / self.zeta;
        match form {
            GpSigmaForm::Sqrt => scale * k.sqrt(),
            GpSigmaForm::Linear => scale * k,
        }
    }

    /// Eigenvalues of the Gram matrix, nonincreasing.
    pub fn gram_eigenvalues(&self) -> Vec<f64> {
        let mut ev = sym_eigenvalues(&self.gram);
        ev.reverse();
        ev
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rng_from_seed, FeatureMap};
    use crate::models::KnrModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ball(rng: &mut crate::mdp::SimRng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            v
        }
    }

    fn random_gp(seed: u64, n: usize, kernel: Kernel, zeta: f64) -> GpModel {
        let mut rng = rng_from_seed(seed);
        let xs: Vec<_> = (0..n).map(|_| ball(&mut rng, 3)).collect();
        let ys: Vec<_> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        GpModel::fit(xs, ys, kernel, zeta, 2).unwrap()
    }

    #[test]
    fn empty_gp_is_the_prior() {
        let gp = GpModel::fit(vec![], vec![], Kernel::Rbf { bandwidth: 0.7 }, 0.1, 2).unwrap();
        let x = [0.1, 0.2];
        assert_eq!(gp.posterior_mean(&x), DVector::zeros(2));
        assert_eq!(gp.posterior_kernel(&x, &[0.3, 0.0]), Kernel::Rbf { bandwidth: 0.7 }.eval(&x, &[0.3, 0.0]));
        assert_eq!(gp.information_gain(), 0.0);
    }

    #[test]
    fn rank_one_gain() {
        let x = vec![0.6, 0.8];
        let zeta = 0.5;
        let gp = GpModel::fit(vec![x.clone(), x.clone()], vec![vec![1.0], vec![1.0]], Kernel::Linear, zeta, 1).unwrap();
        let trace = gp.gram().trace();
        assert_relative_eq!(gp.information_gain(), (1.0 + trace / (zeta * zeta)).ln(), epsilon = 1e-12);
    }

    #[test]
    fn interpolates_noiseless_data() {
        let mut rng = rng_from_seed(8);
        let xs: Vec<_> = (0..20).map(|_| ball(&mut rng, 2)).collect();
        let ys: Vec<_> = xs.iter().map(|x| vec![(3.0 * x[0]).sin() + x[1]]).collect();
        let gp = GpModel::fit(xs.clone(), ys.clone(), Kernel::Rbf { bandwidth: 0.5 }, 1e-3, 1).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((gp.posterior_mean(x)[0] - y[0]).abs() < 1e-2);
        }
    }

    #[test]
    fn json_round_trip_refactors() {
        let gp = random_gp(1, 6, Kernel::Rbf { bandwidth: 0.9 }, 0.2);
        let s = serde_json::to_string(&gp).unwrap();
        let back: GpModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, gp);
        let q = [0.1, -0.2, 0.3];
        assert_relative_eq!(back.posterior_variance(&q), gp.posterior_variance(&q), epsilon = 1e-14);
    }

    #[test]
    fn sigma_forms() {
        let gp = random_gp(2, 5, Kernel::Rbf { bandwidth: 0.5 }, 0.3);
        let q = [0.9, 0.0, 0.0];
        let k = gp.posterior_variance(&q);
        let b = gp.beta(0.1) / 0.3;
        assert_relative_eq!(gp.sigma(&q, 0.1, GpSigmaForm::Sqrt), b * k.sqrt());
        assert_relative_eq!(gp.sigma(&q, 0.1, GpSigmaForm::Linear), b * k);
    }

    #[test]
    fn median_heuristic_on_a_line() {
        let xs = vec![vec![0.0], vec![1.0], vec![3.0]];
        // distances 1, 3, 2
        assert_eq!(median_distance(&xs), 2.0);
    }

    proptest! {
        #[test]
        fn linear_kernel_matches_feature_ridge(seed in any::<u64>(), n in 1usize..25, zeta in 0.05f64..2.0) {
            let gp = random_gp(seed, n, Kernel::Linear, zeta);
            let fm = FeatureMap::new(2, 1, 1.0).unwrap();
            let phis: Vec<_> = gp.inputs().iter().map(|x| DVector::from_column_slice(x)).collect();
            let ys: Vec<_> = gp.targets.iter().map(|y| DVector::from_column_slice(y)).collect();
            let knr = KnrModel::fit_features(&phis, &ys, &fm, zeta * zeta, zeta, 1.0).unwrap();
            let mut rng = rng_from_seed(seed ^ 0xabc);
            for _ in 0..5 {
                let q = ball(&mut rng, 3);
                let qv = DVector::from_column_slice(&q);
                prop_assert!((gp.posterior_mean(&q) - knr.predict_features(&qv)).amax() <= 1e-6);
                let k_feat = zeta * zeta * knr.leverage(&qv);
                prop_assert!((gp.posterior_kernel(&q, &q) - k_feat).abs() <= 1e-6);
            }
        }

        #[test]
        fn posterior_variance_bounds_and_monotone(seed in any::<u64>(), n in 1usize..20) {
            let big = random_gp(seed, n + 1, Kernel::Rbf { bandwidth: 0.6 }, 0.2);
            let small = GpModel::fit(big.inputs[..n].to_vec(), big.targets[..n].to_vec(), big.kernel.clone(), 0.2, 2).unwrap();
            let mut rng = rng_from_seed(seed.wrapping_add(1));
            for _ in 0..5 {
                let q = ball(&mut rng, 3);
                let (vs, vb) = (small.posterior_variance(&q), big.posterior_variance(&q));
                prop_assert!(vs <= 1.0 + 1e-12 && vb >= 0.0);
                prop_assert!(vb <= vs + 1e-10);
            }
            prop_assert!(big.information_gain() >= small.information_gain() - 1e-10);
            prop_assert!(small.information_gain() >= -1e-12);
        }

        #[test]
        fn trace_identity(seed in any::<u64>(), n in 1usize..30, zeta in 0.1f64..1.0) {
            let gp = random_gp(seed, n, Kernel::Rbf { bandwidth: 0.8 }, zeta);
            let z2 = zeta * zeta;
            let lhs: f64 = gp.inputs().iter().map(|x| gp.posterior_kernel(x, x) / z2).sum();
            let rhs: f64 = gp.gram_eigenvalues().iter().map(|m| (m / z2) / (m / z2 + 1.0)).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-8, "lhs {} rhs {}", lhs, rhs);
        }
    }
}
