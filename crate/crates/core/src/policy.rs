//! Gaussian radial basis features, linear critic and linear Gaussian policy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Gaussian RBF features `phi_i(x) = exp(-||x - c_i||^2 / (2 s_i^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    centers: Vec<DVector<f64>>,
    widths: Vec<f64>,
}

impl FeatureBasis {
    pub fn new(centers: Vec<DVector<f64>>, widths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Domain(
                "feature basis needs at least one center".into(),
            ));
        }
        check_dim("RBF widths", centers.len(), widths.len())?;
        let n = centers[0].len();
        if n == 0 {
            return Err(Error::Domain(
                "RBF centers must have positive dimension".into(),
            ));
        }
        for c in &centers {
            check_dim("RBF center", n, c.len())?;
        }
        if let Some(w) = widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Domain(format!(
                "RBF width must be positive, got {w}"
            )));
        }
        for i in 0..centers.len() {
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(Error::Domain(format!("RBF centers {j} and {i} coincide")));
                }
            }
        }
        Ok(FeatureBasis { centers, widths })
    }

    /// Uniform tensor grid with `points` centers per axis on
    /// `[grid_min, grid_max]^dim`, all sharing one width. The last axis
    /// varies fastest.
    pub fn grid(
        dim: usize,
        grid_min: f64,
        grid_max: f64,
        points: usize,
        width: f64,
    ) -> Result<Self> {
        if dim == 0 || points == 0 {
            return Err(Error::Domain(
                "grid needs a positive dimension and point count".into(),
            ));
        }
        if points == 1 && grid_min != grid_max {
            return Err(Error::Domain(
                "a single grid point needs grid_min == grid_max".into(),
            ));
        }
        if points > 1 && !(grid_max > grid_min) {
            return Err(Error::Domain(format!(
                "grid_max ({grid_max}) must exceed grid_min ({grid_min})"
            )));
        }
        let total = points
            .checked_pow(dim as u32)
            .filter(|&t| t <= 1 << 20)
            .ok_or_else(|| Error::Domain(format!("{points}^{dim} grid centers is too many")))?;
        let axis: Vec<f64> = (0..points)
            .map(|k| {
                if points == 1 {
                    grid_min
                } else {
                    grid_min + (grid_max - grid_min) * k as f64 / (points - 1) as f64
                }
            })
            .collect();
        let centers = (0..total)
            .map(|mut idx| {
                let mut c = DVector::zeros(dim);
                for d in (0..dim).rev() {
                    c[d] = axis[idx % points];
                    idx /= points;
                }
                c
            })
            .collect();
        Self::new(centers, vec![width; total])
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.state_dim(), "state dimension mismatch");
        DVector::from_iterator(
            self.len(),
            self.centers.iter().zip(&self.widths).map(|(c, s)| {
                let d2 = (x - c).norm_squared();
                (-d2 / (2.0 * s * s)).exp()
            }),
        )
    }
}

/// Actor and critic weights over one shared basis.
///
/// `theta` has one entry per feature. `w` is `N x m`; the flattened layout
/// used for gradients is row-major (`i * m + c`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    basis: FeatureBasis,
    theta: DVector<f64>,
    w: DMatrix<f64>,
}

impl PolicyState {
    pub fn zeros(basis: FeatureBasis, input_dim: usize) -> Self {
        let n = basis.len();
        PolicyState {
            basis,
            theta: DVector::zeros(n),
            w: DMatrix::zeros(n, input_dim),
        }
    }

    pub fn with_weights(basis: FeatureBasis, theta: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        check_dim("critic weights", basis.len(), theta.len())?;
        check_dim("actor weight rows", basis.len(), w.nrows())?;
        if w.ncols() == 0 {
            return Err(Error::Domain(
                "actor weights need at least one input column".into(),
            ));
        }
        if theta.iter().chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy weights".into()));
        }
        Ok(PolicyState { basis, theta, w })
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.features(x)
    }

    /// Critic estimate `phi(x) . theta`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.features(x).dot(&self.theta)
    }

    /// Policy mean `w^T phi(x)`.
    pub fn mean_input(&self, x: &DVector<f64>) -> DVector<f64> {
        self.w.tr_mul(&self.features(x))
    }

    pub fn sample_input<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        sigma: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        gaussian_input(&self.mean_input(x), sigma, rng)
    }

    /// `log N(u; mu(x; w), sigma^2 I)`.
    pub fn log_density(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        check_dim("input", self.input_dim(), u.len())?;
        let m = self.input_dim() as f64;
        let r2 = (u - self.mean_input(x)).norm_squared();
        Ok(-0.5 * m * (2.0 * std::f64::consts::PI).ln()
            - m * sigma.ln()
            - r2 / (2.0 * sigma * sigma))
    }

    /// `d log Pi / d w = phi(x) (u - mu)^T / sigma^2`, flattened row-major.
    pub fn log_policy_gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        sigma: f64,
    ) -> Result<DVector<f64>> {
        check_sigma(sigma)?;
        check_dim("input", self.input_dim(), u.len())?;
        let phi = self.features(x);
        let resid = (u - self.w.tr_mul(&phi)) / (sigma * sigma);
        let m = self.input_dim();
        Ok(DVector::from_fn(phi.len() * m, |k, _| {
            phi[k / m] * resid[k % m]
        }))
    }

    pub(crate) fn add_to_theta(&mut self, delta: &DVector<f64>) {
        self.theta += delta;
    }

    /// Adds a flattened (row-major) increment to `w`.
    pub(crate) fn add_to_w(&mut self, flat: &DVector<f64>) {
        let m = self.input_dim();
        for (k, d) in flat.iter().enumerate() {
            self.w[(k / m, k % m)] += d;
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "standard deviation must be positive, got {sigma}"
        )))
    }
}

/// `mean + sigma * z` with `z` standard normal, drawn from `rng`.
pub fn gaussian_input<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    sigma: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_sigma(sigma)?;
    Ok(DVector::from_fn(mean.len(), |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        mean[i] + sigma * z
    }))
}
