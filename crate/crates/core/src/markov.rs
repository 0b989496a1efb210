//! Recovery Markov chain: state 1 means "inside X", state `i + 1` means
//! "outside X for the last `i` steps". From state `i <= tau` the chain returns
//! to 1 with probability `rho_i` and otherwise moves to `i + 1`; state
//! `tau + 1` always returns to 1. Starting in state 1, the occupancy of state
//! 1 never drops below `rho_1^tau`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryChain {
    rho: Vec<f64>,
    transition: DMatrix<f64>,
}

impl RecoveryChain {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::Domain("tau must be at least 1".into()));
        }
        if let Some(r) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Domain(format!(
                "return probability {r} outside [0, 1]"
            )));
        }
        let tau = rho.len();
        let mut transition = DMatrix::zeros(tau + 1, tau + 1);
        for (i, &r) in rho.iter().enumerate() {
            transition[(i, 0)] = r;
            transition[(i, i + 1)] = 1.0 - r;
        }
        transition[(tau, 0)] = 1.0;
        Ok(RecoveryChain { rho, transition })
    }

    pub fn tau(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Row-stochastic matrix; entry `(i, j)` is `Pr{X_(k+1) = j | X_k = i}`.
    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// `rho_1^tau`.
    pub fn lower_bound(&self) -> f64 {
        self.rho[0].powi(self.tau() as i32)
    }

    /// Distributions for `k = 0..=steps`, starting from state 1.
    pub fn forward_distributions(&self, steps: usize) -> Vec<DVector<f64>> {
        let mut p = DVector::zeros(self.tau() + 1);
        p[0] = 1.0;
        let mut out = Vec::with_capacity(steps + 1);
        out.push(p.clone());
        for _ in 0..steps {
            p = self.transition.tr_mul(&p);
            out.push(p.clone());
        }
        out
    }

    /// Distribution after `k` transitions from state 1.
    pub fn forward_distribution(&self, k: usize) -> DVector<f64> {
        self.forward_distributions(k)
            .pop()
            .expect("at least the initial distribution")
    }

    /// Checks `Pr{X_k = 1} >= rho_1^tau` for `k = 0..=horizon`; returns whether it
    /// held and the smallest occupancy seen.
    pub fn verify_bound(&self, horizon: usize) -> (bool, f64) {
        let bound = self.lower_bound();
        let min_p1 = self
            .forward_distributions(horizon)
            .iter()
            .map(|p| p[0])
            .fold(f64::INFINITY, f64::min);
        (min_p1 >= bound, min_p1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matrix_shape() {
        let c = RecoveryChain::new(vec![0.9, 0.6, 0.3]).unwrap();
        let t = c.transition_matrix();
        assert_eq!(t.nrows(), 4);
        for i in 0..4 {
            assert!((t.row(i).sum() - 1.0).abs() < 1e-15);
        }
        assert_eq!(t[(1, 0)], 0.6);
        assert_eq!(t[(1, 2)], 0.4);
        assert_eq!(t[(3, 0)], 1.0);
    }

    #[test]
    fn forward_examples() {
        let c = RecoveryChain::new(vec![0.9, 0.5]).unwrap();
        assert_eq!(c.forward_distribution(0).as_slice(), &[1.0, 0.0, 0.0]);

        let c = RecoveryChain::new(vec![0.9]).unwrap();
        assert!((c.forward_distribution(2)[0] - 0.91).abs() < 1e-15);
        assert!((c.forward_distribution(1)[0] - 0.9).abs() < 1e-15);

        let c = RecoveryChain::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(c.forward_distributions(50).iter().all(|p| p[0] == 1.0));
    }

    #[test]
    fn bound_examples() {
        let c = RecoveryChain::new(vec![0.95, 0.5]).unwrap();
        let (holds, min_p1) = c.verify_bound(100);
        assert!((c.lower_bound() - 0.9025).abs() < 1e-15);
        assert!(holds && min_p1 >= 0.9025);

        let c = RecoveryChain::new(vec![0.9]).unwrap();
        let (holds, min_p1) = c.verify_bound(10);
        assert!(holds);
        assert!((min_p1 - 0.9).abs() < 1e-15);

        let c = RecoveryChain::new(vec![1.0, 0.2]).unwrap();
        assert_eq!(c.verify_bound(30), (true, 1.0));
    }

    #[test]
    fn rejects_bad_rho() {
        assert!(RecoveryChain::new(vec![]).is_err());
        assert!(RecoveryChain::new(vec![1.2]).is_err());
        assert!(RecoveryChain::new(vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn distribution_stays_normalized(rho in prop::collection::vec(0.0f64..=1.0, 1..=6)) {
            let c = RecoveryChain::new(rho).unwrap();
            for p in c.forward_distributions(200) {
                prop_assert!((p.sum() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&q| q >= 0.0));
            }
        }
    }
}
