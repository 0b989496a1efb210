//! Plants: the true (unknown to the learner) dynamics and cost.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Discrete-time control-affine plant with an instantaneous cost.
pub trait Plant: fmt::Debug + Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Next state for input `u`.
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Cost of applying `u` at `x` and landing in `x_next`; must be nonnegative.
    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> f64;

    fn initial_state(&self) -> DVector<f64>;

    /// Steps per episode.
    fn horizon(&self) -> usize;

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        check_dim("plant state", self.state_dim(), x.len())?;
        check_dim("plant input", self.input_dim(), u.len())?;
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "plant step input (x = {:?}, u = {:?})",
                x.as_slice(),
                u.as_slice()
            )));
        }
        let next = self.dynamics(x, u);
        let cost = self.cost(x, u, &next);
        if next.iter().any(|v| !v.is_finite()) || !cost.is_finite() {
            return Err(Error::NonFinite(format!(
                "plant step output from x = {:?}, u = {:?}",
                x.as_slice(),
                u.as_slice()
            )));
        }
        Ok((next, cost))
    }
}

/// Two-state benchmark
///
/// ```text
/// x1+ = 0.3 x1 - 0.4 sin x2 + u
/// x2+ = -0.1 x2 + 0.2 cos x1 - 0.2 + u
/// ```
///
/// with cost `x+^T Q x+ + R u^2`, `Q = 1e5 I`, `R = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlant {
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub q: f64,
    pub r: f64,
}

impl Default for BenchmarkPlant {
    fn default() -> Self {
        BenchmarkPlant {
            x0: DVector::from_column_slice(&[5.0, 5.0]),
            horizon: 15,
            q: 1e5,
            r: 1.0,
        }
    }
}

impl BenchmarkPlant {
    /// Autonomous part `f(x)`.
    pub fn drift(x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[
            0.3 * x[0] - 0.4 * x[1].sin(),
            -0.1 * x[1] + 0.2 * x[0].cos() - 0.2,
        ])
    }

    /// Jacobian of `f`.
    pub fn drift_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.3, -0.4 * x[1].cos(), -0.2 * x[0].sin(), -0.1])
    }
}

impl Plant for BenchmarkPlant {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        Self::drift(x).add_scalar(u[0])
    }

    fn cost(&self, _x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> f64 {
        self.q * x_next.norm_squared() + self.r * u.norm_squared()
    }

    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Linear plant `x+ = Ax + Bu + e` with a constant injected error `e`,
/// typically one of the nominal model's error corners. Cost is
/// `q ||x+||^2 + r ||u||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWorstCornerPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    error: DVector<f64>,
    x0: DVector<f64>,
    horizon: usize,
    q: f64,
    r: f64,
}

impl LinearWorstCornerPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        error: DVector<f64>,
        x0: DVector<f64>,
        horizon: usize,
        q: f64,
        r: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Domain("plant A must be square and non-empty".into()));
        }
        check_dim("plant B rows", n, b.nrows())?;
        check_dim("plant error", n, error.len())?;
        check_dim("initial state", n, x0.len())?;
        if b.ncols() == 0 {
            return Err(Error::Domain("plant B needs at least one column".into()));
        }
        if !(q >= 0.0 && r >= 0.0) {
            return Err(Error::Domain("cost weights must be nonnegative".into()));
        }
        Ok(LinearWorstCornerPlant {
            a,
            b,
            error,
            x0,
            horizon,
            q,
            r,
        })
    }

    pub fn error(&self) -> &DVector<f64> {
        &self.error
    }
}

impl Plant for LinearWorstCornerPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.error
    }

    fn cost(&self, _x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> f64 {
        self.q * x_next.norm_squared() + self.r * u.norm_squared()
    }

    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSet;
    use crate::model::NominalModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn step_examples() {
        let p = BenchmarkPlant::default();
        let (x, c) = p.step(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
        assert_eq!(x, v(&[0.0, 0.0]));
        assert_eq!(c, 0.0);

        let (x, c) = p.step(&v(&[5.0, 5.0]), &v(&[0.0])).unwrap();
        // sin 5 = -0.958924274663138, cos 5 = 0.283662185463226
        let x1 = 1.5 - 0.4 * -0.958_924_274_663_138_5;
        let x2 = -0.5 + 0.2 * 0.283_662_185_463_226_3 - 0.2;
        assert!((x[0] - x1).abs() < 1e-14 && (x[1] - x2).abs() < 1e-14);
        assert!((x[0] - 1.88356).abs() < 1e-5 && (x[1] + 0.64327).abs() < 1e-5);
        let cost = 1e5 * (x1 * x1 + x2 * x2);
        assert!((c - cost).abs() < 1e-6);
        assert!((c / 3.962e5 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn step_rejects_non_finite() {
        let p = BenchmarkPlant::default();
        assert!(matches!(
            p.step(&v(&[f64::NAN, 0.0]), &v(&[0.0])),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            p.step(&v(&[0.0, 0.0]), &v(&[f64::INFINITY])),
            Err(Error::NonFinite(_))
        ));
        assert!(p.step(&v(&[0.0]), &v(&[0.0])).is_err());
    }

    #[test]
    fn benchmark_properties_on_samples() {
        let p = BenchmarkPlant::default();
        let model = NominalModel::benchmark();
        let c = ConstraintSet::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100_000 {
            let x = v(&[
                rng.random_range(-10.0..=10.0),
                rng.random_range(-30.0..30.0),
            ]);
            let u = v(&[rng.random_range(-50.0..50.0)]);
            let (next, cost) = p.step(&x, &u).unwrap();
            // model error within e_bar
            let err = &next - model.predict_nominal(&x, &u);
            assert!(err[0].abs() <= 0.4 && err[1].abs() <= 0.4);
            assert!((err[0] + 0.4 * x[1].sin()).abs() < 1e-12);
            assert!(cost >= 0.0);
            // invariance under zero input
            assert!(c.contains(&BenchmarkPlant::drift(&x)));
        }
        assert_eq!(BenchmarkPlant::drift(&v(&[0.0, 0.0])), v(&[0.0, 0.0]));
    }

    #[test]
    fn benchmark_is_a_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100_000 {
            let x = v(&[rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]);
            let y = v(&[rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]);
            let fx = BenchmarkPlant::drift(&x);
            let fy = BenchmarkPlant::drift(&y);
            assert!((fx - fy).norm() <= 0.95 * (&x - &y).norm());
            assert!(BenchmarkPlant::drift_jacobian(&x).norm() < 1.0);
        }
    }

    #[test]
    fn linear_plant_injects_error() {
        let m = NominalModel::benchmark();
        let eps = v(&[0.4, -0.4]);
        let p = LinearWorstCornerPlant::new(
            m.a().clone(),
            m.b().clone(),
            eps.clone(),
            v(&[1.0, 1.0]),
            3,
            1.0,
            1.0,
        )
        .unwrap();
        let x = v(&[2.0, -1.0]);
        let u = v(&[0.5]);
        let (next, cost) = p.step(&x, &u).unwrap();
        assert!((&next - (m.predict_nominal(&x, &u) + eps)).amax() < 1e-15);
        assert!((cost - (next.norm_squared() + 0.25)).abs() < 1e-12);
    }
}
