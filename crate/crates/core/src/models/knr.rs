use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datasets::VectorOffline;
use crate::error::{dim, invalid, Error, Result};
use crate::linalg::{logdet_spd, serde_rows, sym_eigenvalues};
use crate::mdp::FeatureMap;

/// Condition number of `Sigma` above which a fit is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Ridge-regression model of `s' = W phi(s, a) + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnrModel {
    #[serde(with = "serde_rows")]
    w_hat: DMatrix<f64>,
    /// `sum_i phi_i phi_i^T + lambda I`.
    #[serde(with = "serde_rows")]
    sigma: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    sigma_inv: DMatrix<f64>,
    lambda: f64,
    zeta: f64,
    n: usize,
    /// Upper bound on the spectral norm of the true weights.
    w_norm_bound: f64,
    feature_map: FeatureMap,
    ill_conditioned: bool,
}

impl KnrModel {
    pub fn fit(
        data: &VectorOffline,
        feature_map: &FeatureMap,
        lambda: f64,
        zeta: f64,
        w_norm_bound: f64,
    ) -> Result<Self> {
        let mut phis = Vec::with_capacity(data.len());
        let mut targets = Vec::with_capacity(data.len());
        for (i, t) in data.triples.iter().enumerate() {
            if t.s.len() != feature_map.state_dim || t.a.len() != feature_map.action_dim || t.sp.len() != feature_map.state_dim {
                return Err(dim(format!("triple {i} does not match the feature map dimensions")));
            }
            phis.push(feature_map.features(&t.s, &t.a));
            targets.push(DVector::from_column_slice(&t.sp));
        }
        Self::fit_features(&phis, &targets, feature_map, lambda, zeta, w_norm_bound)
    }

    /// Fit directly from feature vectors and next-state targets.
    pub fn fit_features(
        phis: &[DVector<f64>],
        targets: &[DVector<f64>],
        feature_map: &FeatureMap,
        lambda: f64,
        zeta: f64,
        w_norm_bound: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !(zeta > 0.0) {
            return Err(invalid("lambda and zeta must be positive"));
        }
        if phis.len() != targets.len() {
            return Err(dim("feature and target counts differ"));
        }
        let d = feature_map.dim();
        let ds = feature_map.state_dim;
        let mut sigma = DMatrix::<f64>::identity(d, d) * lambda;
        let mut cross = DMatrix::<f64>::zeros(d, ds);
        for (phi, y) in phis.iter().zip(targets) {
            if phi.len() != d || y.len() != ds {
                return Err(dim("feature or target has the wrong length"));
            }
            sigma.ger(1.0, phi, phi, 1.0);
            cross.ger(1.0, phi, y, 1.0);
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::LinearAlgebra("ridge Gram matrix is not positive definite".into()))?;
        let w_hat = chol.solve(&cross).transpose();
        let sigma_inv = chol.inverse();
        let ev = sym_eigenvalues(&sigma);
        let cond = ev.last().copied().unwrap_or(1.0) / ev.first().copied().unwrap_or(1.0);
        let ill_conditioned = !(cond < ILL_CONDITIONED);
        if ill_conditioned {
            log::warn!("ridge Gram matrix has condition number {cond:e}");
        }
        Ok(Self {
            w_hat,
            sigma,
            sigma_inv,
            lambda,
            zeta,
            n: phis.len(),
            w_norm_bound,
            feature_map: feature_map.clone(),
            ill_conditioned,
        })
    }

    pub fn w_hat(&self) -> &DMatrix<f64> {
        &self.w_hat
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.ill_conditioned
    }

    pub fn predict_features(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.w_hat * phi
    }

    pub fn predict(&self, s: &[f64], a: &[f64]) -> DVector<f64> {
        self.predict_features(&self.feature_map.features(s, a))
    }

    /// `ln det(Sigma / lambda)`.
    pub fn information_gain_bar(&self) -> f64 {
        let d = self.sigma.nrows() as f64;
        logdet_spd(&self.sigma).map_or(f64::INFINITY, |ld| ld - d * self.lambda.ln())
    }

    pub fn beta(&self, delta: f64) -> f64 {
        let ds = self.feature_map.state_dim as f64;
        let w2 = self.w_norm_bound * self.w_norm_bound;
        let z2 = self.zeta * self.zeta;
        (2.0 * self.lambda * w2 + 8.0 * z2 * (ds * 5f64.ln() + (1.0 / delta).ln() + self.information_gain_bar()))
            .sqrt()
    }

    /// `phi^T Sigma^{-1} phi`.
    pub fn leverage(&self, phi: &DVector<f64>) -> f64 {
        (phi.transpose() * &self.sigma_inv * phi)[(0, 0)].max(0.0)
    }

    pub fn sigma_features(&self, phi: &DVector<f64>, delta: f64) -> f64 {
        self.beta(delta) / self.zeta * self.leverage(phi).sqrt()
    }

    pub fn sigma(&self, s: &[f64], a: &[f64], delta: f64) -> f64 {
        self.sigma_features(&self.feature_map.features(s, a), delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn fm(ds: usize, da: usize) -> FeatureMap {
        FeatureMap::new(ds, da, 1.0).unwrap()
    }

    fn unit(v: Vec<f64>) -> DVector<f64> {
        let v = DVector::from_vec(v);
        let n = v.norm();
        if n > 1.0 {
            v / n
        } else {
            v
        }
    }

    #[test]
    fn scalar_ridge_closed_form() {
        let m = KnrModel::fit_features(
            &[DVector::from_vec(vec![0.6])],
            &[DVector::from_vec(vec![2.0])],
            &fm(1, 0),
            0.5,
            1.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(m.w_hat()[(0, 0)], 2.0 * 0.6 / (0.36 + 0.5), epsilon = 1e-14);
    }

    #[test]
    fn zero_targets_give_zero_weights() {
        let phis = vec![unit(vec![0.3, 0.4]), unit(vec![-0.1, 0.9])];
        let ys = vec![DVector::zeros(1); 2];
        let m = KnrModel::fit_features(&phis, &ys, &fm(1, 1), 1.0, 1.0, 1.0).unwrap();
        assert_eq!(m.w_hat().norm(), 0.0);
    }

    #[test]
    fn noiseless_recovery() {
        let mut rng = rng_from_seed(4);
        let w = DMatrix::from_row_slice(2, 3, &[0.3, -0.5, 0.2, 0.7, 0.1, -0.4]);
        let phis: Vec<_> = (0..500)
            .map(|_| unit((0..3).map(|_| rng.random_range(-0.6..0.6)).collect()))
            .collect();
        let ys: Vec<_> = phis.iter().map(|p| &w * p).collect();
        let m = KnrModel::fit_features(&phis, &ys, &fm(2, 1), 1e-6, 0.1, 1.0).unwrap();
        assert!((m.w_hat() - &w).norm() <= 1e-4);
    }

    #[test]
    fn information_gain_small_cases() {
        let empty = KnrModel::fit_features(&[], &[], &fm(1, 1), 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(empty.information_gain_bar(), 0.0, epsilon = 1e-14);
        let phi = unit(vec![0.6, 0.8]);
        let one = KnrModel::fit_features(std::slice::from_ref(&phi), &[DVector::zeros(1)], &fm(1, 1), 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(one.information_gain_bar(), 2f64.ln(), epsilon = 1e-12);
        // With no data Sigma = I, so sigma = beta / zeta for a unit feature.
        assert_relative_eq!(empty.sigma_features(&phi, 0.1), empty.beta(0.1), epsilon = 1e-12);
    }

    #[test]
    fn sigma_small_along_seen_direction() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        let phis = vec![e1.clone(); 10_000];
        let ys = vec![DVector::zeros(1); 10_000];
        let m = KnrModel::fit_features(&phis, &ys, &fm(1, 1), 1.0, 0.1, 1.0).unwrap();
        assert!(m.sigma_features(&e1, 0.1) * 50.0 < m.sigma_features(&e2, 0.1));
    }

    #[test]
    fn flags_ill_conditioning() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let m = KnrModel::fit_features(&vec![e1; 1000], &vec![DVector::zeros(1); 1000], &fm(1, 1), 1e-10, 1.0, 1.0)
            .unwrap();
        assert!(m.is_ill_conditioned());
    }

    #[test]
    fn json_round_trip() {
        let m = KnrModel::fit_features(
            &[unit(vec![0.2, 0.3])],
            &[DVector::from_vec(vec![1.0])],
            &fm(1, 1),
            1.0,
            0.5,
            2.0,
        )
        .unwrap();
        let back: KnrModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    fn random_problem(seed: u64, n: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut rng = rng_from_seed(seed);
        let phis = (0..n).map(|_| unit((0..3).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let ys = (0..n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
        (phis, ys)
    }

    proptest! {
        #[test]
        fn matches_normal_equations(seed in any::<u64>(), n in 1usize..40, lambda in 0.01f64..10.0) {
            let (phis, ys) = random_problem(seed, n);
            let m = KnrModel::fit_features(&phis, &ys, &fm(2, 1), lambda, 1.0, 1.0).unwrap();
            // Oracle: W = S' Phi^T (Phi Phi^T + lambda I)^{-1} with explicit matrices and LU.
            let phi_mat = DMatrix::from_columns(&phis);
            let s_mat = DMatrix::from_columns(&ys);
            let g = &phi_mat * phi_mat.transpose() + DMatrix::identity(3, 3) * lambda;
            let w = &s_mat * phi_mat.transpose() * g.lu().try_inverse().unwrap();
            prop_assert!((m.w_hat() - w).amax() <= 1e-8);
        }

        #[test]
        fn gain_grows_and_sigma_shrinks(seed in any::<u64>(), n in 1usize..30) {
            let (phis, ys) = random_problem(seed, n + 1);
            let small = KnrModel::fit_features(&phis[..n], &ys[..n], &fm(2, 1), 1.0, 0.3, 1.0).unwrap();
            let big = KnrModel::fit_features(&phis, &ys, &fm(2, 1), 1.0, 0.3, 1.0).unwrap();
            prop_assert!(small.information_gain_bar() >= -1e-12);
            prop_assert!(big.information_gain_bar() >= small.information_gain_bar() - 1e-12);
            let q = &phis[n];
            prop_assert!(big.leverage(q) <= small.leverage(q) + 1e-12);
            prop_assert!(small.sigma_features(q, 0.1) >= 0.0);
        }
    }
}
