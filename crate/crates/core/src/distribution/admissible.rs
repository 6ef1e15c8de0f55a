use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{DiffGaussian, GaussianParams};
use crate::error::{Error, Result};

/// Eigenvalues of `S0 - S1` at or above this count as nonnegative.
const PSD_TOLERANCE: f64 = -1e-10;
/// Eigenvalues of the witness system below this fraction of the largest are null.
const NULL_SPACE_RTOL: f64 = 1e-10;
/// Residual bound, relative to the scale of the system, for calling it consistent.
const CONSISTENCY_RTOL: f64 = 1e-10;
/// Slack on `c <= c_max` in [`validate`].
const VALIDATION_SLACK: f64 = 1e-12;

/// Affine set `{ base_point + sum_i t_i directions[i] }` of minimizers of
/// `f0 / f1`. `directions` is orthonormal; empty means a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineRootSet {
    pub base_point: DVector<f64>,
    pub directions: Vec<DVector<f64>>,
    pub exists: bool,
}

impl AffineRootSet {
    fn empty(dim: usize) -> Self {
        Self {
            base_point: DVector::zeros(dim),
            directions: Vec::new(),
            exists: false,
        }
    }

    /// `base_point + sum_i coords[i] * directions[i]`.
    pub fn point(&self, coords: &[f64]) -> DVector<f64> {
        let mut w = self.base_point.clone();
        for (d, t) in self.directions.iter().zip(coords) {
            w.axpy(*t, d, 1.0);
        }
        w
    }

    /// Dimension of the affine set, or `None` when it is empty.
    pub fn affine_dim(&self) -> Option<usize> {
        self.exists.then_some(self.directions.len())
    }
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub valid: bool,
    pub c_max: f64,
    pub roots: AffineRootSet,
}

struct Analysis {
    c_max: f64,
    roots: AffineRootSet,
}

fn analyze(g0: &GaussianParams, g1: &GaussianParams) -> Result<Analysis> {
    if g0.dim() != g1.dim() {
        return Err(Error::DimensionMismatch {
            expected: g0.dim(),
            got: g1.dim(),
        });
    }
    let dim = g0.dim();

    // Outside the semi-definite case the ratio f0/f1 is unbounded below along
    // some direction, so only c = 0 is admissible.
    let gap = g0.covariance() - g1.covariance();
    let gap = (&gap + gap.transpose()) * 0.5;
    let min_gap_eig = gap.symmetric_eigenvalues().min();
    if min_gap_eig < PSD_TOLERANCE {
        return Ok(Analysis {
            c_max: 0.0,
            roots: AffineRootSet::empty(dim),
        });
    }

    // Witness system (P1 - P0) w = P1 m1 - P0 m0 with P = S^-1.
    let p0 = g0.precision();
    let p1 = g1.precision();
    let p0m0 = &p0 * g0.mean();
    let p1m1 = &p1 * g1.mean();
    let system = symmetrize(&p1 - &p0);
    let rhs = &p1m1 - &p0m0;

    let eig = SymmetricEigen::new(system.clone());
    let largest = eig.eigenvalues.amax();
    let cutoff = NULL_SPACE_RTOL * largest;

    let mut base = DVector::zeros(dim);
    let mut directions = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k).into_owned();
        if largest > 0.0 && lambda.abs() > cutoff {
            let coef = v.dot(&rhs) / lambda;
            base.axpy(coef, &v, 1.0);
        } else {
            directions.push(canonical_sign(v));
        }
    }

    let residual = (&system * &base - &rhs).norm();
    let scale = p0m0.norm() + p1m1.norm() + largest * base.norm();
    let consistent = residual <= CONSISTENCY_RTOL * scale;
    if !consistent {
        return Ok(Analysis {
            c_max: 0.0,
            roots: AffineRootSet::empty(dim),
        });
    }

    // Identical components: the ratio is identically one.
    let c_max = if largest == 0.0 && scale == 0.0 {
        1.0
    } else {
        let w = base.as_slice();
        let log_ratio = g0.log_pdf(w)? - g1.log_pdf(w)?;
        log_ratio.exp().clamp(0.0, 1.0)
    };

    directions.sort_by(|a, b| {
        let ka = a.iter().position(|v| v.abs() > 1e-12);
        let kb = b.iter().position(|v| v.abs() > 1e-12);
        ka.cmp(&kb)
    });

    Ok(Analysis {
        c_max,
        roots: AffineRootSet {
            base_point: base,
            directions,
            exists: true,
        },
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Flip so the first non-negligible entry is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

/// Largest `c` for which `(f0 - c f1) / (1 - c)` stays nonnegative.
///
/// Returns `f0(w) / f1(w)` at a witness point when `S0 - S1` is positive
/// semi-definite, 1 for identical components, and 0 when `S0 - S1` has a
/// negative eigenvalue or the witness system has no solution (equal
/// covariances with different means, for instance).
pub fn max_admissible_c(g0: &GaussianParams, g1: &GaussianParams) -> Result<f64> {
    analyze(g0, g1).map(|a| a.c_max)
}

/// Solution set of `(S1^-1 - S0^-1) w = S1^-1 m1 - S0^-1 m0`.
///
/// Singular systems yield the minimum-norm base point plus an orthonormal
/// null-space basis. `exists` is false when the system is inconsistent or
/// when `S0 - S1` is not positive semi-definite (no minimizer exists).
pub fn witness_points(g0: &GaussianParams, g1: &GaussianParams) -> Result<AffineRootSet> {
    analyze(g0, g1).map(|a| a.roots)
}

pub fn validate(d: &DiffGaussian) -> ValidationReport {
    // dimensions already agree by construction
    let a = analyze(&d.g0, &d.g1).expect("DiffGaussian components share a dimension");
    ValidationReport {
        valid: d.c() <= a.c_max + VALIDATION_SLACK,
        c_max: a.c_max,
        roots: a.roots,
    }
}
