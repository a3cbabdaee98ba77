//! Dense vectors, SPD metrics and halfspace projections.
//!
//! Every metric used by the solvers is a dense symmetric positive definite
//! matrix `W` inducing `<x, y>_W = <x, W y>` and `||x||_W`. The Cholesky
//! factor is computed once at construction and reused for every `W^{-1}`
//! application.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

/// An element of the (finite-dimensional) Hilbert space.
pub type Point = DVector<f64>;

/// Relative tolerance used when checking that an input matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e})")]
    NotPositiveDefinite { lambda_min: f64, lambda_max: f64 },
    #[error("matrix or vector has non-finite entries")]
    NonFinite,
    #[error("halfspace with zero normal and negative offset is empty")]
    EmptyHalfspace,
    #[error("dimension must be at least 1")]
    EmptyDimension,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest entry of `|W - W^T|`, relative to `max(1, max|W|)`.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m).max(1.0);
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

fn check_square_finite(m: &DMatrix<f64>) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(LinalgError::EmptyDimension);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(())
}

/// Extremal eigenvalues `(lambda_min, lambda_max)` of a symmetric matrix.
///
/// Uses a full symmetric eigendecomposition, which is exact to working
/// precision at the dimensions this crate targets (n <= 500); `tol` is the
/// relative symmetry tolerance the input must satisfy.
pub fn extremal_eig_bounds(w: &DMatrix<f64>, tol: f64) -> Result<(f64, f64), LinalgError> {
    check_square_finite(w)?;
    let asym = relative_asymmetry(w);
    if asym > tol.max(SYMMETRY_TOL) {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    let sym = (w + w.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    Ok((lo, hi))
}

/// Spectral norm `||A||_2` (largest singular value) of an arbitrary matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.transpose() * a;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.max().max(0.0).sqrt()
}

/// A symmetric positive definite metric with cached factorization.
#[derive(Debug, Clone)]
pub struct SpdMetric {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    lambda_min: f64,
    lambda_max: f64,
}

impl PartialEq for SpdMetric {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl SpdMetric {
    /// Symmetrizes `matrix` and verifies `lambda_min > 1e-12 * lambda_max`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, LinalgError> {
        check_square_finite(&matrix)?;
        let asym = relative_asymmetry(&matrix);
        if asym > SYMMETRY_TOL {
            return Err(LinalgError::NotSymmetric { asymmetry: asym });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let (lambda_min, lambda_max) = extremal_eig_bounds(&sym, SYMMETRY_TOL)?;
        if !(lambda_max > 0.0) || lambda_min <= 1e-12 * lambda_max {
            return Err(LinalgError::NotPositiveDefinite {
                lambda_min,
                lambda_max,
            });
        }
        let chol = Cholesky::new(sym.clone()).ok_or(LinalgError::NotPositiveDefinite {
            lambda_min,
            lambda_max,
        })?;
        Ok(SpdMetric {
            matrix: sym,
            chol,
            lambda_min,
            lambda_max,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0).expect("identity is SPD")
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Result<Self, LinalgError> {
        Self::new(DMatrix::identity(n, n) * scale)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self, LinalgError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `lambda_max(W^{-1}) = 1 / lambda_min(W)`.
    pub fn lambda_max_inv(&self) -> f64 {
        1.0 / self.lambda_min
    }

    /// True when the off-diagonal part is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }

    fn check_dim(&self, x: &Point) {
        assert_eq!(
            x.len(),
            self.dim(),
            "dimension mismatch: metric is {}-dimensional, vector has {} entries",
            self.dim(),
            x.len()
        );
    }

    pub fn apply(&self, x: &Point) -> Point {
        self.check_dim(x);
        &self.matrix * x
    }

    /// `W^{-1} v` via the cached Cholesky factor.
    pub fn solve(&self, v: &Point) -> Point {
        self.check_dim(v);
        self.chol.solve(v)
    }

    pub fn inner(&self, x: &Point, y: &Point) -> f64 {
        self.check_dim(x);
        self.check_dim(y);
        x.dot(&(&self.matrix * y))
    }

    pub fn norm_squared(&self, x: &Point) -> f64 {
        self.inner(x, x).max(0.0)
    }

    pub fn norm(&self, x: &Point) -> f64 {
        self.norm_squared(x).sqrt()
    }

    /// `||v||^2_{W^{-1}}`.
    pub fn inv_norm_squared(&self, v: &Point) -> f64 {
        v.dot(&self.solve(v)).max(0.0)
    }

    pub fn inv_norm(&self, v: &Point) -> f64 {
        self.inv_norm_squared(v).sqrt()
    }
}

/// `<x, W y>`. Panics on dimension mismatch.
pub fn weighted_inner(w: &SpdMetric, x: &Point, y: &Point) -> f64 {
    w.inner(x, y)
}

/// `||x||_W`. Panics on dimension mismatch.
pub fn weighted_norm(w: &SpdMetric, x: &Point) -> f64 {
    w.norm(x)
}

/// `||v||_{W^{-1}}`, computed with one solve against the cached factor.
pub fn inv_weighted_norm(w: &SpdMetric, v: &Point) -> f64 {
    w.inv_norm(v)
}

/// The halfspace `{ z : <normal, z - anchor> <= rhs }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Point,
    pub anchor: Point,
    pub rhs: f64,
}

impl Halfspace {
    pub fn new(normal: Point, anchor: Point, rhs: f64) -> Self {
        Halfspace {
            normal,
            anchor,
            rhs,
        }
    }

    /// `<normal, z - anchor> - rhs`; nonpositive exactly on the halfspace.
    pub fn level(&self, z: &Point) -> f64 {
        self.normal.dot(&(z - &self.anchor)) - self.rhs
    }

    pub fn contains(&self, z: &Point, tol: f64) -> bool {
        self.level(z) <= tol
    }
}

/// Projection of `x` onto `h` in the `||.||_S` norm.
///
/// A zero normal describes the whole space when `rhs >= 0` (identity) and
/// the empty set otherwise.
pub fn project_halfspace(s: &SpdMetric, h: &Halfspace, x: &Point) -> Result<Point, LinalgError> {
    if h.normal.len() != x.len() || h.anchor.len() != x.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: x.len(),
            found: h.normal.len().min(h.anchor.len()),
        });
    }
    if h.normal.iter().chain(x.iter()).any(|v| !v.is_finite()) || !h.rhs.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let excess = h.level(x);
    if h.normal.iter().all(|v| *v == 0.0) {
        return if h.rhs >= 0.0 {
            Ok(x.clone())
        } else {
            Err(LinalgError::EmptyHalfspace)
        };
    }
    if excess <= 0.0 {
        return Ok(x.clone());
    }
    let direction = s.solve(&h.normal);
    let denom = h.normal.dot(&direction);
    Ok(x - direction * (excess / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(d: &[f64]) -> SpdMetric {
        SpdMetric::diagonal(d).unwrap()
    }

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    #[test]
    fn inner_and_norm_examples() {
        let id = SpdMetric::identity(2);
        assert_eq!(weighted_inner(&id, &p(&[3.0, 4.0]), &p(&[3.0, 4.0])), 25.0);
        assert_eq!(weighted_norm(&id, &p(&[3.0, 4.0])), 5.0);
        let w = diag(&[4.0, 1.0]);
        assert_eq!(weighted_inner(&w, &p(&[1.0, 1.0]), &p(&[1.0, 1.0])), 5.0);
        assert_relative_eq!(weighted_norm(&w, &p(&[1.0, 1.0])), 5.0_f64.sqrt());
        assert_eq!(weighted_inner(&w, &p(&[0.0, 0.0]), &p(&[7.0, -2.0])), 0.0);
        assert_eq!(weighted_norm(&w, &p(&[0.0, 0.0])), 0.0);
    }

    #[test]
    fn inverse_norm_examples() {
        assert_eq!(inv_weighted_norm(&SpdMetric::identity(2), &p(&[0.0, 2.0])), 2.0);
        assert_relative_eq!(inv_weighted_norm(&diag(&[4.0, 1.0]), &p(&[2.0, 0.0])), 1.0);
        assert_eq!(inv_weighted_norm(&diag(&[4.0, 1.0]), &p(&[0.0, 0.0])), 0.0);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn inner_rejects_mismatched_dimensions() {
        weighted_inner(&SpdMetric::identity(2), &p(&[1.0]), &p(&[1.0, 2.0]));
    }

    #[test]
    fn eig_bounds_examples() {
        let (lo, hi) = extremal_eig_bounds(&DMatrix::from_diagonal(&p(&[4.0, 1.0])), 1e-12).unwrap();
        assert_eq!((lo, hi), (1.0, 4.0));
        let (lo, hi) = extremal_eig_bounds(&DMatrix::identity(5, 5), 1e-12).unwrap();
        assert_relative_eq!(lo, 1.0);
        assert_relative_eq!(hi, 1.0);
        // characteristic polynomial (2 - l)^2 - 1 = 0
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (lo, hi) = extremal_eig_bounds(&m, 1e-12).unwrap();
        assert_relative_eq!(lo, 1.0, epsilon = 1e-14);
        assert_relative_eq!(hi, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_bounds_rejects_nonsymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(
            extremal_eig_bounds(&m, 1e-12),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn metric_construction_rejects_bad_input() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SpdMetric::new(indefinite),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
        let nearly_singular = DMatrix::from_diagonal(&p(&[1.0, 1e-13]));
        assert!(SpdMetric::new(nearly_singular).is_err());
        assert!(matches!(
            SpdMetric::new(DMatrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
        let nan = DMatrix::from_diagonal(&p(&[1.0, f64::NAN]));
        assert_eq!(SpdMetric::new(nan).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn projection_examples() {
        let id = SpdMetric::identity(2);
        let h = Halfspace::new(p(&[1.0, 0.0]), p(&[0.0, 0.0]), 0.0);
        assert_eq!(project_halfspace(&id, &h, &p(&[2.0, 3.0])).unwrap(), p(&[0.0, 3.0]));
        assert_eq!(project_halfspace(&id, &h, &p(&[-1.0, 5.0])).unwrap(), p(&[-1.0, 5.0]));
    }

    #[test]
    fn weighted_projection_matches_kkt_solve() {
        // minimize (z-x)^T S (z-x) s.t. z1 + z2 = 0 (constraint active),
        // solved through the bordered KKT system [2S m; m^T 0][z; l] = [2Sx; 0].
        let s = diag(&[1.0, 4.0]);
        let x = p(&[2.0, 2.0]);
        let h = Halfspace::new(p(&[1.0, 1.0]), p(&[0.0, 0.0]), 0.0);
        let kkt = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 8.0, 1.0, 1.0, 1.0, 0.0]);
        let rhs = DVector::from_column_slice(&[4.0, 16.0, 0.0]);
        let sol = kkt.lu().solve(&rhs).unwrap();
        let proj = project_halfspace(&s, &h, &x).unwrap();
        assert!((proj[0] - sol[0]).abs() <= 1e-10);
        assert!((proj[1] - sol[1]).abs() <= 1e-10);
        assert_relative_eq!(proj[0], -1.2, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_halfspace() {
        let id = SpdMetric::identity(2);
        let whole = Halfspace::new(p(&[0.0, 0.0]), p(&[1.0, 1.0]), 0.0);
        assert_eq!(project_halfspace(&id, &whole, &p(&[3.0, 1.0])).unwrap(), p(&[3.0, 1.0]));
        let empty = Halfspace::new(p(&[0.0, 0.0]), p(&[1.0, 1.0]), -1.0);
        assert_eq!(
            project_halfspace(&id, &empty, &p(&[3.0, 1.0])).unwrap_err(),
            LinalgError::EmptyHalfspace
        );
    }
}
