//! Single-valued operators with declared constants.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::{extremal_eig_bounds, relative_asymmetry, spectral_norm, Point};
use crate::rng::SeededRng;

/// `x -> matrix * x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: Point,
}

impl AffineMap {
    pub fn zero(n: usize) -> Self {
        AffineMap {
            matrix: DMatrix::zeros(n, n),
            offset: Point::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &Point) -> Point {
        &self.matrix * x + &self.offset
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0) && self.offset.iter().all(|v| *v == 0.0)
    }
}

/// An `L_D`-Lipschitz map `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzMap {
    map: AffineMap,
    lipschitz: f64,
}

impl LipschitzMap {
    pub fn zero(n: usize) -> Self {
        LipschitzMap {
            map: AffineMap::zero(n),
            lipschitz: 0.0,
        }
    }

    /// Linear map with `L_D = ||matrix||_2`.
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let n = matrix.nrows();
        Self::affine(matrix, Point::zeros(n))
    }

    pub fn affine(matrix: DMatrix<f64>, offset: Point) -> Self {
        let lipschitz = spectral_norm(&matrix);
        LipschitzMap {
            map: AffineMap { matrix, offset },
            lipschitz,
        }
    }

    pub fn apply(&self, x: &Point) -> Point {
        self.map.apply(x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn map(&self) -> &AffineMap {
        &self.map
    }

    pub fn is_zero(&self) -> bool {
        self.map.is_zero()
    }
}

/// A `1/beta_E`-cocoercive map `E` (w.r.t. the Euclidean norm).
#[derive(Debug, Clone, PartialEq)]
pub struct CocoerciveMap {
    map: AffineMap,
    inverse_cocoercivity: f64,
}

impl CocoerciveMap {
    pub fn zero(n: usize) -> Self {
        CocoerciveMap {
            map: AffineMap::zero(n),
            inverse_cocoercivity: 0.0,
        }
    }

    /// `x -> H x - linear` for symmetric positive semidefinite `H`;
    /// `beta_E = lambda_max(H)`.
    pub fn quadratic_gradient(hessian: DMatrix<f64>, linear: Point) -> Result<Self> {
        if relative_asymmetry(&hessian) > 1e-12 {
            return invalid("cocoercive gradient needs a symmetric Hessian");
        }
        let (lo, hi) = extremal_eig_bounds(&hessian, 1e-12)?;
        if lo < -1e-12 * hi.abs().max(1.0) {
            return invalid(format!("Hessian is not positive semidefinite (lambda_min = {lo:e})"));
        }
        let inverse_cocoercivity = hi.max(0.0);
        if inverse_cocoercivity == 0.0 && hessian.iter().any(|v| *v != 0.0) {
            return invalid("nonzero Hessian with zero spectrum");
        }
        Ok(CocoerciveMap {
            map: AffineMap {
                matrix: hessian,
                offset: -linear,
            },
            inverse_cocoercivity,
        })
    }

    pub fn apply(&self, x: &Point) -> Point {
        self.map.apply(x)
    }

    pub fn inverse_cocoercivity(&self) -> f64 {
        self.inverse_cocoercivity
    }

    pub fn map(&self) -> &AffineMap {
        &self.map
    }

    pub fn is_zero(&self) -> bool {
        self.map.is_zero()
    }
}

/// A linear skew-adjoint map `K` (`K^T = -K`).
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMap {
    matrix: DMatrix<f64>,
    norm: f64,
}

impl SkewMap {
    pub fn zero(n: usize) -> Self {
        SkewMap {
            matrix: DMatrix::zeros(n, n),
            norm: 0.0,
        }
    }

    /// Rejects matrices with `|K + K^T| > 1e-12` (relative).
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return invalid("skew map must be square");
        }
        let scale = matrix.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let sym = &matrix + matrix.transpose();
        let worst = sym.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if worst > 1e-12 * scale {
            return invalid(format!("matrix is not skew (|K + K^T| = {worst:e})"));
        }
        let norm = spectral_norm(&matrix);
        Ok(SkewMap { matrix, norm })
    }

    /// Skew part `(A - A^T) / 2` of an arbitrary square matrix.
    pub fn skew_part(a: &DMatrix<f64>) -> Self {
        let matrix = (a - a.transpose()) * 0.5;
        let norm = spectral_norm(&matrix);
        SkewMap { matrix, norm }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn operator_norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0)
    }
}

/// `K x`.
pub fn apply_skew(k: &SkewMap, x: &Point) -> Point {
    assert_eq!(k.dim(), x.len(), "dimension mismatch in apply_skew");
    k.matrix() * x
}

/// `max |<K x, x>| / max(1, ||x||^2)` over the canonical basis followed by
/// `samples` seeded points with entries in `[-1, 1]`.
pub fn check_skew(k: &DMatrix<f64>, samples: usize, seed: u64) -> f64 {
    let n = k.nrows();
    let mut rng = SeededRng::new(seed);
    let ratio = |x: &Point| (k * x).dot(x).abs() / x.norm_squared().max(1.0);
    let basis = (0..n).map(|i| ratio(&Point::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })));
    let random: Vec<f64> = (0..samples).map(|_| ratio(&rng.vector(n))).collect();
    basis.chain(random).fold(0.0, f64::max)
}

/// `max ||F x - F y|| / ||x - y||` over seeded pairs with entries in `[-scale, scale]`.
pub fn sampled_lipschitz_ratio<F>(f: F, n: usize, samples: usize, seed: u64, scale: f64) -> f64
where
    F: Fn(&Point) -> Point,
{
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let x = rng.vector(n) * scale;
        let y = rng.vector(n) * scale;
        let dx = (&x - &y).norm();
        if dx == 0.0 {
            continue;
        }
        worst = worst.max((f(&x) - f(&y)).norm() / dx);
    }
    worst
}

/// `max ||E x - E y||^2 / <E x - E y, x - y>` over seeded pairs; bounded by `beta_E`
/// for a `1/beta_E`-cocoercive map.
pub fn sampled_cocoercivity_ratio<F>(f: F, n: usize, samples: usize, seed: u64, scale: f64) -> f64
where
    F: Fn(&Point) -> Point,
{
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let x = rng.vector(n) * scale;
        let y = rng.vector(n) * scale;
        let de = f(&x) - f(&y);
        let num = de.norm_squared();
        if num == 0.0 {
            continue;
        }
        let den = de.dot(&(&x - &y));
        worst = worst.max(if den > 0.0 { num / den } else { f64::INFINITY });
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    #[test]
    fn apply_skew_examples() {
        let rot = SkewMap::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        assert_eq!(apply_skew(&rot, &p(&[1.0, 0.0])), p(&[0.0, 1.0]));
        assert_eq!(apply_skew(&rot, &p(&[0.0, 0.0])), p(&[0.0, 0.0]));
        let k2 = SkewMap::new(DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0])).unwrap();
        assert_eq!(apply_skew(&k2, &p(&[1.0, 1.0])), p(&[-2.0, 2.0]));
        assert!((k2.operator_norm() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn check_skew_examples() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(check_skew(&rot, 100, 1) <= 1e-15);
        assert_eq!(check_skew(&DMatrix::zeros(3, 3), 100, 1), 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[0.1, -1.0, 1.0, 0.0]);
        // e_1 gives <K e1, e1> = 0.1, and x1^2 / max(1, |x|^2) <= 1 elsewhere
        assert_eq!(check_skew(&bad, 100, 1), 0.1);
        assert!(SkewMap::new(bad).is_err());
    }

    #[test]
    fn declared_constants_are_honest() {
        let mut rng = SeededRng::new(3);
        let n = 5;
        let a = rng.matrix(n, n);
        let d = LipschitzMap::linear(a.clone());
        let ratio = sampled_lipschitz_ratio(|x| d.apply(x), n, 10_000, 9, 1.0);
        assert!(ratio <= d.lipschitz() * (1.0 + 1e-8));
        let h = a.transpose() * &a;
        let e = CocoerciveMap::quadratic_gradient(h, rng.vector(n)).unwrap();
        let ratio = sampled_cocoercivity_ratio(|x| e.apply(x), n, 10_000, 10, 1.0);
        assert!(ratio <= e.inverse_cocoercivity() * (1.0 + 1e-8));
        let k = SkewMap::skew_part(&a);
        let ratio = sampled_lipschitz_ratio(|x| apply_skew(&k, x), n, 10_000, 12, 1.0);
        assert!(ratio <= k.operator_norm() * (1.0 + 1e-8));
        assert!(check_skew(k.matrix(), 1000, 4) <= 1e-12);
    }

    #[test]
    fn cocoercive_rejects_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(CocoerciveMap::quadratic_gradient(h, p(&[0.0, 0.0])).is_err());
    }
}
