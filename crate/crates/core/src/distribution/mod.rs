//! The Diff-Gaussian family.
//!
//! For two `n`-dimensional normal densities `f0 = N(m0, S0)` (positive
//! component) and `f1 = N(m1, S1)` (negative component), the function
//!
//! ```text
//! f_c(x) = (f0(x) - c * f1(x)) / (1 - c),    0 <= c < 1
//! ```
//!
//! integrates to one for every `c` and is a density exactly when
//! `c <= inf_x f0(x) / f1(x)`. When `S0 - S1` is positive semi-definite the
//! infimum is attained on the affine solution set of
//! `S1^-1 (w - m1) = S0^-1 (w - m0)`, and those points are roots of the
//! density at the optimal coefficient. See [`max_admissible_c`] and
//! [`witness_points`].

mod admissible;
mod quadrature;
mod sampling;

pub use admissible::{max_admissible_c, validate, witness_points, AffineRootSet, ValidationReport};
pub use quadrature::integrate_grid;
pub use sampling::{acceptance_count, sample, RejectionSampler};

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance for the covariance symmetry check.
const SYMMETRY_RTOL: f64 = 1e-12;

/// Mean and SPD covariance of one normal component, with its Cholesky factor
/// cached for density evaluation.
#[derive(Clone, Debug)]
pub struct GaussianParams {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::invalid("gaussian dimension must be positive"));
        }
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: covariance.nrows().max(covariance.ncols()),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite mean or covariance".into()));
        }
        let scale = covariance.amax();
        for i in 0..dim {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::Numeric(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let cholesky = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        let log_det: f64 = 2.0 * cholesky.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_norm = -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det);
        Ok(Self {
            mean,
            covariance,
            cholesky,
            log_norm,
        })
    }

    /// Convenience constructor from row slices.
    pub fn from_slices(mean: &[f64], covariance_rows: &[&[f64]]) -> Result<Self> {
        let n = mean.len();
        if covariance_rows.len() != n || covariance_rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariance_rows.len(),
            });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| covariance_rows[i][j]);
        Self::new(DVector::from_column_slice(mean), cov)
    }

    /// One-dimensional `N(mean, variance)`.
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    /// `N(mean, variance * I)`.
    pub fn isotropic(mean: &[f64], variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal_element(n, n, variance),
        )
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.cholesky.l()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.cholesky.inverse()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.log_pdf_unchecked(x, &mut Vec::with_capacity(x.len())))
    }

    /// Multivariate normal density; always strictly positive for finite `x`
    /// unless it underflows.
    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    #[inline]
    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Forward substitution `L z = x - m`, returning `log_norm - |z|^2 / 2`.
    pub(crate) fn log_pdf_unchecked(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let l = self.cholesky.l_dirty();
        let n = self.dim();
        scratch.clear();
        let mut q = 0.0;
        for i in 0..n {
            let mut s = x[i] - self.mean[i];
            for (j, zj) in scratch.iter().enumerate() {
                s -= l[(i, j)] * zj;
            }
            let z = s / l[(i, i)];
            q += z * z;
            scratch.push(z);
        }
        self.log_norm - 0.5 * q
    }
}

/// Standalone form of [`GaussianParams::pdf`].
pub fn gaussian_pdf(g: &GaussianParams, x: &[f64]) -> Result<f64> {
    g.pdf(x)
}

/// Positive component, negative component and balance coefficient `c`.
///
/// Construction only checks `c` in `[0, 1)` and matching dimensions; use
/// [`validate`] to check that the density is nonnegative.
#[derive(Clone, Debug)]
pub struct DiffGaussian {
    pub g0: GaussianParams,
    pub g1: GaussianParams,
    c: f64,
}

impl DiffGaussian {
    pub fn new(g0: GaussianParams, g1: GaussianParams, c: f64) -> Result<Self> {
        if g0.dim() != g1.dim() {
            return Err(Error::DimensionMismatch {
                expected: g0.dim(),
                got: g1.dim(),
            });
        }
        if !(0.0..1.0).contains(&c) {
            return Err(Error::invalid(format!("balance coefficient {c} outside [0, 1)")));
        }
        Ok(Self { g0, g1, c })
    }

    /// Builds the density at the largest admissible coefficient. Fails when
    /// that coefficient is 1 (identical components), which is outside the family.
    pub fn with_max_c(g0: GaussianParams, g1: GaussianParams) -> Result<Self> {
        let c = max_admissible_c(&g0, &g1)?;
        Self::new(g0, g1, c)
    }

    #[inline]
    pub fn c(&self) -> f64 {
        self.c
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.g0.dim()
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.g0.check_dim(x.len())?;
        Ok(self.pdf_unchecked(x, &mut Vec::with_capacity(x.len())))
    }

    pub(crate) fn pdf_unchecked(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let f0 = self.g0.log_pdf_unchecked(x, scratch).exp();
        if self.c == 0.0 {
            return f0;
        }
        let f1 = self.g1.log_pdf_unchecked(x, scratch).exp();
        (f0 - self.c * f1) / (1.0 - self.c)
    }
}

/// Standalone form of [`DiffGaussian::pdf`].
pub fn diff_pdf(d: &DiffGaussian, x: &[f64]) -> Result<f64> {
    d.pdf(x)
}
