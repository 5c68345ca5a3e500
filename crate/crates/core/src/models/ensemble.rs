use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::KnrModel;
use crate::error::{invalid, Result};
use crate::mdp::{rng_from_seed, FeatureMap};

/// Bootstrap ensemble of ridge models; only their disagreement is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    members: Vec<KnrModel>,
}

impl EnsembleModel {
    pub fn from_members(members: Vec<KnrModel>) -> Result<Self> {
        if members.len() < 2 {
            return Err(invalid("an ensemble needs at least two members"));
        }
        let fm = members[0].feature_map();
        if members.iter().any(|m| m.feature_map() != fm || m.zeta() != members[0].zeta()) {
            return Err(invalid("ensemble members must share feature map and noise level"));
        }
        Ok(Self { members })
    }

    /// Member `i` is fit on a bootstrap resample drawn with seed `seed + i`.
    pub fn fit_bootstrap(
        phis: &[DVector<f64>],
        targets: &[DVector<f64>],
        feature_map: &FeatureMap,
        n_members: usize,
        lambda: f64,
        zeta: f64,
        seed: u64,
    ) -> Result<Self> {
        if phis.is_empty() {
            return Err(invalid("cannot bootstrap an empty dataset"));
        }
        let members = (0..n_members)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(seed.wrapping_add(i as u64));
                let idx: Vec<usize> = (0..phis.len()).map(|_| rng.random_range(0..phis.len())).collect();
                let p: Vec<_> = idx.iter().map(|&j| phis[j].clone()).collect();
                let t: Vec<_> = idx.iter().map(|&j| targets[j].clone()).collect();
                KnrModel::fit_features(&p, &t, feature_map, lambda, zeta, 0.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(members)
    }

    pub fn members(&self) -> &[KnrModel] {
        &self.members
    }

    /// `max_{i,j} ||g_i(phi) - g_j(phi)||_2`.
    pub fn disagreement_features(&self, phi: &DVector<f64>) -> f64 {
        let preds: Vec<_> = self.members.iter().map(|m| m.predict_features(phi)).collect();
        max_pairwise_distance(&preds)
    }

    pub fn disagreement(&self, s: &[f64], a: &[f64]) -> f64 {
        self.disagreement_features(&self.members[0].feature_map().features(s, a))
    }
}

pub fn max_pairwise_distance(preds: &[DVector<f64>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            best = best.max((&preds[i] - &preds[j]).norm());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_members_agree() {
        let fm = FeatureMap::new(1, 1, 1.0).unwrap();
        let phis = vec![DVector::from_vec(vec![0.5, 0.5]); 3];
        let ys = vec![DVector::from_vec(vec![1.0]); 3];
        let m = KnrModel::fit_features(&phis, &ys, &fm, 1.0, 0.1, 1.0).unwrap();
        let e = EnsembleModel::from_members(vec![m.clone(), m]).unwrap();
        assert_eq!(e.disagreement(&[0.3], &[0.2]), 0.0);
    }

    #[test]
    fn known_two_member_disagreement() {
        let preds = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![4.0, 6.0])];
        assert_eq!(max_pairwise_distance(&preds), 5.0);
        let three = vec![preds[0].clone(), preds[1].clone(), DVector::from_vec(vec![1.0, 14.0])];
        assert_eq!(max_pairwise_distance(&three), 12.0);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let fm = FeatureMap::new(1, 1, 1.0).unwrap();
        let phis: Vec<_> = (0..30).map(|i| DVector::from_vec(vec![(i as f64 / 30.0).sin() * 0.7, 0.3])).collect();
        let ys: Vec<_> = (0..30).map(|i| DVector::from_vec(vec![(i as f64).cos()])).collect();
        let a = EnsembleModel::fit_bootstrap(&phis, &ys, &fm, 4, 1.0, 0.1, 9).unwrap();
        let b = EnsembleModel::fit_bootstrap(&phis, &ys, &fm, 4, 1.0, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.disagreement(&[0.1], &[0.9]) > 0.0);
        assert!(EnsembleModel::fit_bootstrap(&phis, &ys, &fm, 1, 1.0, 0.1, 9).is_err());
    }
}
