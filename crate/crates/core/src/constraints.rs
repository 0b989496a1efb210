//! Linear constraint polytope `X = {x | Hx <= d}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Polytope described by `n_c` half-spaces `h_j^T x <= d_j`.
///
/// Immutable after construction. The query methods panic on a state of the
/// wrong dimension: that is a caller bug, not a runtime condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    h: DMatrix<f64>,
    d: DVector<f64>,
}

impl ConstraintSet {
    pub fn new(h: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Domain(
                "constraint matrix needs at least one row and one column".into(),
            ));
        }
        if h.nrows() != d.len() {
            return Err(Error::Dimension {
                context: "constraint bound vector",
                expected: h.nrows(),
                actual: d.len(),
            });
        }
        for (j, row) in h.row_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Domain(format!(
                    "constraint row {j} is the zero vector"
                )));
            }
        }
        if h.iter().chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraint set".into()));
        }
        Ok(ConstraintSet { h, d })
    }

    /// Builds from row-major rows, the layout used by config files.
    pub fn from_rows(rows: &[Vec<f64>], d: &[f64]) -> Result<Self> {
        let h = crate::linalg::matrix_from_rows(rows, "constraints.H")?;
        Self::new(h, DVector::from_column_slice(d))
    }

    /// `|x_1| <= 10` on a two-dimensional state.
    pub fn benchmark() -> Self {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let d = DVector::from_column_slice(&[10.0, 10.0]);
        ConstraintSet { h, d }
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn num_constraints(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    /// `d_j - h_j^T x` for every constraint. Negative entries are violations.
    pub fn margins(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.state_dim(), "state dimension mismatch");
        &self.d - &self.h * x
    }

    /// Single margin `d_j - h_j^T x`.
    pub fn margin(&self, j: usize, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.state_dim(), "state dimension mismatch");
        self.d[j] - self.h.row(j).transpose().dot(x)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.margins(x).iter().all(|&m| m >= 0.0)
    }

    /// Strict interior: every margin is positive. No tolerance is applied.
    pub fn contains_interior(&self, x: &DVector<f64>) -> bool {
        self.margins(x).iter().all(|&m| m > 0.0)
    }
}
