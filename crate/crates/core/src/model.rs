//! Linear nominal model `x+ ~ Ax + Bu` with per-coordinate error bounds.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::error::{check_dim, Error, Result};

/// Default cap on the state dimension for exhaustive corner enumeration.
pub const DEFAULT_CORNER_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct NominalModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    e_bar: DVector<f64>,
}

impl NominalModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e_bar: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Domain(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("rows of B", n, b.nrows())?;
        if b.ncols() == 0 {
            return Err(Error::Domain("B needs at least one column".into()));
        }
        check_dim("error bound vector", n, e_bar.len())?;
        if let Some(i) = e_bar.iter().position(|&e| !(e >= 0.0)) {
            return Err(Error::Domain(format!(
                "error bound e_bar[{i}] = {} must be nonnegative",
                e_bar[i]
            )));
        }
        if a.iter()
            .chain(b.iter())
            .chain(e_bar.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("nominal model".into()));
        }
        Ok(NominalModel { a, b, e_bar })
    }

    /// `A = diag(0.3, -0.1)`, `b = [1, 1]^T`, `e_bar = [0.4, 0.4]`.
    pub fn benchmark() -> Self {
        NominalModel {
            a: DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -0.1]),
            b: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            e_bar: DVector::from_column_slice(&[0.4, 0.4]),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn e_bar(&self) -> &DVector<f64> {
        &self.e_bar
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// All `2^n` sign patterns `eps_i = +/- e_bar_i`, using the default cap.
    pub fn corner_set(&self) -> Result<Vec<DVector<f64>>> {
        self.corner_set_capped(DEFAULT_CORNER_CAP)
    }

    /// Corner `c` has `eps_i = -e_bar_i` exactly when bit `n-1-i` of `c` is set,
    /// i.e. binary counting with the first coordinate as the most significant
    /// bit. For `n = 2` the order is `(+,+), (+,-), (-,+), (-,-)`.
    pub fn corner_set_capped(&self, cap: usize) -> Result<Vec<DVector<f64>>> {
        let n = self.state_dim();
        if n > cap {
            return Err(Error::CornerExplosion { n, cap });
        }
        Ok((0..1usize << n)
            .map(|c| {
                DVector::from_fn(n, |i, _| {
                    if (c >> (n - 1 - i)) & 1 == 0 {
                        self.e_bar[i]
                    } else {
                        -self.e_bar[i]
                    }
                })
            })
            .collect())
    }

    /// `Ax + B u_mean`; the caller adds an error corner when needed.
    pub fn predict_nominal(&self, x: &DVector<f64>, u_mean: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.state_dim(), "state dimension mismatch");
        assert_eq!(u_mean.len(), self.input_dim(), "input dimension mismatch");
        &self.a * x + &self.b * u_mean
    }

    /// `h_j^T B` as a row vector of length `m`.
    pub fn input_coupling(&self, constraints: &ConstraintSet, j: usize) -> DVector<f64> {
        (constraints.h().row(j) * &self.b).transpose()
    }

    /// True iff `||h_j^T B||_2 > 0` for every constraint row.
    pub fn validate_input_coupling(&self, constraints: &ConstraintSet) -> bool {
        assert_eq!(
            constraints.state_dim(),
            self.state_dim(),
            "constraint/model dimension mismatch"
        );
        (0..constraints.num_constraints()).all(|j| self.input_coupling(constraints, j).norm() > 0.0)
    }
}
