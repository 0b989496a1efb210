//! Gaussian chance-constraint arithmetic.
//!
//! A Gaussian input `u ~ N(mu, sigma^2 I)` pushed through the nominal model
//! moves `h_j^T x+` by a scalar Gaussian with standard deviation
//! `sigma * ||h_j^T B||_2`. Requiring `Pr{h_j^T x+ <= d_j} >= q` under every
//! error corner turns into a deterministic bound on `sigma`, and taking the
//! tightest `(j, corner)` pair gives the largest admissible exploration level.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::model::NominalModel;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Relative slack for the sufficiency check. Covers the rounding in
/// `sigma * ||h^T B||` versus `margin / z` at the exact boundary.
const SUFFICIENCY_RTOL: f64 = 1e-12;

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, `0.5 * erfc(-z / sqrt 2)`.
///
/// Panics on a non-finite argument.
pub fn std_normal_cdf(z: f64) -> f64 {
    assert!(
        z.is_finite(),
        "std_normal_cdf requires a finite argument, got {z}"
    );
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Phi(z)` without cancellation.
fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

// Acklam's rational approximation, relative error about 1.15e-9.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const ACKLAM_P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    let (a, b, c, d) = (ACKLAM_A, ACKLAM_B, ACKLAM_C, ACKLAM_D);
    let tail = |q: f64| {
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    };
    if p < ACKLAM_P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - ACKLAM_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Inverse standard normal CDF: rational approximation followed by one
/// Newton step on `Phi`. Upper-half arguments are refined through the
/// survival function so the residual keeps its relative precision.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0, 1), got {p}"
        )));
    }
    let z = acklam(p);
    let density = std_normal_pdf(z);
    if density == 0.0 {
        return Ok(z);
    }
    let step = if p <= 0.5 {
        (std_normal_cdf(z) - p) / density
    } else {
        ((1.0 - p) - std_normal_sf(z)) / density
    };
    Ok(z - step)
}

/// Per-constraint level `1 - (1 - lambda) / n_c` whose joint satisfaction
/// over `n_c` constraints implies the joint level `lambda`.
pub fn bonferroni_level(lambda: f64, n_c: usize) -> Result<f64> {
    if !(lambda > 0.5 && lambda < 1.0) {
        return Err(Error::Domain(format!(
            "level must lie in (0.5, 1), got {lambda}"
        )));
    }
    if n_c == 0 {
        return Err(Error::Domain("n_c must be positive".into()));
    }
    Ok(1.0 - (1.0 - lambda) / n_c as f64)
}

/// Target joint satisfaction level, backup horizon and constraint count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChanceSpec {
    eta: f64,
    tau: usize,
    n_c: usize,
}

impl ChanceSpec {
    pub fn new(eta: f64, tau: usize, n_c: usize) -> Result<Self> {
        if !(eta > 0.5 && eta < 1.0) {
            return Err(Error::Domain(format!(
                "eta must lie in (0.5, 1), got {eta}"
            )));
        }
        if tau == 0 {
            return Err(Error::Domain("tau must be at least 1".into()));
        }
        if n_c == 0 {
            return Err(Error::Domain("n_c must be at least 1".into()));
        }
        Ok(ChanceSpec { eta, tau, n_c })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn num_constraints(&self) -> usize {
        self.n_c
    }

    /// `1 - (1 - eta^(1/tau)) / n_c`.
    pub fn eta_prime(&self) -> f64 {
        1.0 - (1.0 - self.eta.powf(1.0 / self.tau as f64)) / self.n_c as f64
    }
}

/// Table of predicted margins `d_j - h_j^T(Ax + B mu + eps)`, one row per
/// constraint and one column per error corner.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTable {
    values: DMatrix<f64>,
}

impl MarginTable {
    pub fn compute(
        model: &NominalModel,
        constraints: &ConstraintSet,
        corners: &[DVector<f64>],
        x: &DVector<f64>,
        u_mean: &DVector<f64>,
    ) -> Self {
        let nominal = model.predict_nominal(x, u_mean);
        let base = constraints.margins(&nominal);
        let values = DMatrix::from_fn(constraints.num_constraints(), corners.len(), |j, c| {
            base[j] - constraints.h().row(j).transpose().dot(&corners[c])
        });
        MarginTable { values }
    }

    pub fn get(&self, constraint: usize, corner: usize) -> f64 {
        self.values[(constraint, corner)]
    }

    pub fn num_constraints(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_corners(&self) -> usize {
        self.values.ncols()
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    /// Every predicted corner state lies strictly inside the polytope.
    pub fn all_positive(&self) -> bool {
        self.values.iter().all(|&m| m > 0.0)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Result of the adaptive standard deviation computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaBound {
    pub sigma: f64,
    /// Minimizing `(constraint, corner)` pair; ties go to the smallest pair.
    pub argmin: (usize, usize),
    pub margins: MarginTable,
}

/// Largest `sigma` such that `u ~ N(u_mean, sigma^2 I)` keeps every constraint
/// at level `eta'` under every error corner:
///
/// `min_{j, eps} (d_j - h_j^T(Ax + B u_mean + eps)) / (||h_j^T B||_2 Phi^-1(eta'))`.
pub fn sigma_lower(
    model: &NominalModel,
    constraints: &ConstraintSet,
    spec: &ChanceSpec,
    x: &DVector<f64>,
    u_mean: &DVector<f64>,
) -> Result<SigmaBound> {
    let corners = model.corner_set()?;
    let margins = MarginTable::compute(model, constraints, &corners, x, u_mean);
    sigma_from_margins(model, constraints, spec, margins)
}

/// Same as [`sigma_lower`] for a margin table that is already computed.
pub fn sigma_from_margins(
    model: &NominalModel,
    constraints: &ConstraintSet,
    spec: &ChanceSpec,
    margins: MarginTable,
) -> Result<SigmaBound> {
    let z = std_normal_quantile(spec.eta_prime())?;
    let mut best: Option<(f64, (usize, usize))> = None;
    for j in 0..margins.num_constraints() {
        let coupling = model.input_coupling(constraints, j).norm();
        if !(coupling > 0.0) {
            return Err(Error::Domain(format!(
                "constraint {j} has no input coupling (h_j^T B = 0)"
            )));
        }
        for c in 0..margins.num_corners() {
            let margin = margins.get(j, c);
            if !(margin > 0.0) {
                return Err(Error::InfeasibleExploration {
                    constraint: j,
                    corner: c,
                    margin,
                });
            }
            let candidate = margin / (coupling * z);
            // strict comparison keeps the first (smallest) pair on ties
            if best.is_none_or(|(s, _)| candidate < s) {
                best = Some((candidate, (j, c)));
            }
        }
    }
    let (sigma, argmin) = best.expect("margin table is non-empty");
    Ok(SigmaBound {
        sigma,
        argmin,
        margins,
    })
}

/// Sufficient condition for per-constraint level `q` under a general input
/// covariance `sigma_cov`:
///
/// * coupled rows (`h_j^T B != 0`): `||h_j^T B Sigma^(1/2)||_2 <= margin_{j,eps} / Phi^-1(q)`
/// * uncoupled rows: `h_j^T(Ax + eps) <= d_j`
///
/// for every error corner. `||v^T Sigma^(1/2)||_2^2 = v^T Sigma v`, so no matrix
/// square root is formed.
pub fn check_sigma_sufficient(
    model: &NominalModel,
    constraints: &ConstraintSet,
    x: &DVector<f64>,
    u_mean: &DVector<f64>,
    sigma_cov: &DMatrix<f64>,
    q: f64,
) -> Result<bool> {
    let m = model.input_dim();
    if sigma_cov.nrows() != m || sigma_cov.ncols() != m {
        return Err(Error::Dimension {
            context: "input covariance",
            expected: m,
            actual: sigma_cov.nrows(),
        });
    }
    if !(q > 0.5 && q < 1.0) {
        return Err(Error::Domain(format!(
            "level q must lie in (0.5, 1), got {q}"
        )));
    }
    check_psd(sigma_cov)?;

    let z = std_normal_quantile(q)?;
    let corners = model.corner_set()?;
    let coupled = MarginTable::compute(model, constraints, &corners, x, u_mean);
    let free = {
        let zero = DVector::zeros(m);
        MarginTable::compute(model, constraints, &corners, x, &zero)
    };

    for j in 0..constraints.num_constraints() {
        let v = model.input_coupling(constraints, j);
        if v.iter().any(|&c| c != 0.0) {
            let spread = (v.transpose() * sigma_cov * &v)[(0, 0)].max(0.0).sqrt();
            for c in 0..corners.len() {
                let allowed = coupled.get(j, c) / z;
                if spread > allowed + SUFFICIENCY_RTOL * allowed.abs() {
                    return Ok(false);
                }
            }
        } else if (0..corners.len()).any(|c| free.get(j, c) < 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_psd(s: &DMatrix<f64>) -> Result<()> {
    let scale = s.amax().max(1.0);
    let asym = (s - s.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Domain(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let min_eig = SymmetricEigen::new(s.clone()).eigenvalues.min();
    if min_eig < -1e-12 * scale {
        return Err(Error::Domain(format!(
            "covariance is not positive semidefinite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}
