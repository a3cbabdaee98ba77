//! Resolvent oracles for the set-valued parts of a monotone inclusion.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::Point;

/// Coordinate `i` of a separable maximally monotone operator:
/// `a(t) = w * d|t| + slope * t - offset + N_[lower, upper](t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMonotone {
    pub l1_weight: f64,
    pub slope: f64,
    pub offset: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for ScalarMonotone {
    fn default() -> Self {
        ScalarMonotone {
            l1_weight: 0.0,
            slope: 0.0,
            offset: 0.0,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }
}

impl ScalarMonotone {
    /// Distance from `v` to the set `a(t)`.
    pub fn distance_to_image(&self, t: f64, v: f64) -> f64 {
        let smooth = self.slope * t - self.offset;
        let (mut lo, mut hi) = if t > 0.0 {
            (smooth + self.l1_weight, smooth + self.l1_weight)
        } else if t < 0.0 {
            (smooth - self.l1_weight, smooth - self.l1_weight)
        } else {
            (smooth - self.l1_weight, smooth + self.l1_weight)
        };
        if t <= self.lower {
            lo = f64::NEG_INFINITY;
        }
        if t >= self.upper {
            hi = f64::INFINITY;
        }
        if v < lo {
            lo - v
        } else if v > hi {
            v - hi
        } else {
            0.0
        }
    }
}

/// One block of a block-diagonal operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxBlock {
    pub dim: usize,
    pub op: ProxOperator,
}

/// A maximally monotone operator `B` given through its resolvent
/// `J_{gamma B} = (I + gamma B)^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxOperator {
    /// `B = 0`.
    Zero,
    /// `B = weight * d||.||_1`; resolvent is soft-thresholding.
    L1 { weight: f64 },
    /// Normal cone of the box `[lower, upper]`; resolvent is clamping.
    BoxCone { lower: Point, upper: Point },
    /// `B x = A x + offset` with `A + A^T` positive semidefinite.
    Affine { matrix: DMatrix<f64>, offset: Point },
    /// `B x = H x - linear`, the gradient of `0.5 x^T H x - linear^T x`.
    Quadratic { hessian: DMatrix<f64>, linear: Point },
    /// `B x = weight * d||x||_1 + diag .* x - offset`, coordinatewise.
    L1Affine {
        weight: f64,
        diag: Point,
        offset: Point,
    },
    /// `B^{-1}` of the wrapped operator, evaluated through Moreau's identity.
    Inverse(Box<ProxOperator>),
    /// Block-diagonal operator acting on consecutive coordinate ranges.
    Blocks(Vec<ProxBlock>),
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Linalg(crate::linalg::LinalgError::DimensionMismatch {
            expected,
            found,
        }));
    }
    Ok(())
}

impl ProxOperator {
    pub fn blocks(parts: Vec<(usize, ProxOperator)>) -> Self {
        ProxOperator::Blocks(
            parts
                .into_iter()
                .map(|(dim, op)| ProxBlock { dim, op })
                .collect(),
        )
    }

    /// `B^{-1}`. Inverting twice returns the original operator.
    pub fn inverse(self) -> Self {
        match self {
            ProxOperator::Inverse(inner) => *inner,
            other => ProxOperator::Inverse(Box::new(other)),
        }
    }

    /// Short tag naming the closed-form resolvent.
    pub fn descriptor(&self) -> &'static str {
        match self {
            ProxOperator::Zero => "zero",
            ProxOperator::L1 { .. } => "soft-threshold",
            ProxOperator::BoxCone { .. } => "box-normal-cone",
            ProxOperator::Affine { .. } => "affine",
            ProxOperator::Quadratic { .. } => "quadratic",
            ProxOperator::L1Affine { .. } => "soft-threshold-affine",
            ProxOperator::Inverse(_) => "moreau-inverse",
            ProxOperator::Blocks(_) => "block-diagonal",
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ProxOperator::Zero => true,
            ProxOperator::Blocks(bs) => bs.iter().all(|b| b.op.is_zero()),
            _ => false,
        }
    }

    /// Block dimensions, or `None` for an unstructured operator.
    pub fn block_dims(&self) -> Option<Vec<usize>> {
        match self {
            ProxOperator::Blocks(bs) => Some(bs.iter().map(|b| b.dim).collect()),
            _ => None,
        }
    }

    /// `J_{gamma B}(y)`.
    pub fn resolvent(&self, gamma: f64, y: &Point) -> Result<Point> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return invalid(format!("resolvent step must be positive, got {gamma}"));
        }
        let n = y.len();
        match self {
            ProxOperator::Zero => Ok(y.clone()),
            ProxOperator::L1 { weight } => Ok(y.map(|v| soft_threshold(v, gamma * weight))),
            ProxOperator::BoxCone { lower, upper } => {
                check_len(n, lower.len())?;
                check_len(n, upper.len())?;
                Ok(DVector::from_fn(n, |i, _| y[i].max(lower[i]).min(upper[i])))
            }
            ProxOperator::Affine { matrix, offset } => {
                check_len(n, offset.len())?;
                let lhs = DMatrix::identity(n, n) + matrix * gamma;
                let rhs = y - offset * gamma;
                lhs.lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Contract("singular affine resolvent".into()))
            }
            ProxOperator::Quadratic { hessian, linear } => {
                check_len(n, linear.len())?;
                let lhs = DMatrix::identity(n, n) + hessian * gamma;
                let rhs = y + linear * gamma;
                lhs.lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Contract("singular quadratic resolvent".into()))
            }
            ProxOperator::L1Affine {
                weight,
                diag,
                offset,
            } => {
                check_len(n, diag.len())?;
                check_len(n, offset.len())?;
                Ok(DVector::from_fn(n, |i, _| {
                    soft_threshold(y[i] + gamma * offset[i], gamma * weight) / (1.0 + gamma * diag[i])
                }))
            }
            ProxOperator::Inverse(inner) => {
                // J_{g B^{-1}}(y) = y - g J_{B / g}(y / g)
                let scaled = inner.resolvent(1.0 / gamma, &(y / gamma))?;
                Ok(y - scaled * gamma)
            }
            ProxOperator::Blocks(blocks) => {
                let steps = vec![gamma; blocks.len()];
                self.resolvent_blockwise(&steps, y)
            }
        }
    }

    /// Resolvent with one step per block; a single step for unstructured operators.
    pub fn resolvent_blockwise(&self, steps: &[f64], y: &Point) -> Result<Point> {
        match self {
            ProxOperator::Blocks(blocks) => {
                if steps.len() != blocks.len() {
                    return invalid(format!(
                        "{} block steps supplied for {} blocks",
                        steps.len(),
                        blocks.len()
                    ));
                }
                let total: usize = blocks.iter().map(|b| b.dim).sum();
                check_len(total, y.len())?;
                let mut out = DVector::zeros(total);
                let mut start = 0;
                for (block, &step) in blocks.iter().zip(steps) {
                    let seg = y.rows(start, block.dim).into_owned();
                    let res = block.op.resolvent(step, &seg)?;
                    out.rows_mut(start, block.dim).copy_from(&res);
                    start += block.dim;
                }
                Ok(out)
            }
            _ => {
                if steps.len() != 1 {
                    return invalid("unstructured operator takes exactly one step");
                }
                self.resolvent(steps[0], y)
            }
        }
    }

    /// Coordinatewise description, when the operator is separable.
    pub fn scalar_parts(&self, n: usize) -> Option<Vec<ScalarMonotone>> {
        let diag_of = |m: &DMatrix<f64>| -> Option<Vec<f64>> {
            if m.nrows() != n || m.ncols() != n {
                return None;
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && m[(i, j)] != 0.0 {
                        return None;
                    }
                }
            }
            Some((0..n).map(|i| m[(i, i)]).collect())
        };
        match self {
            ProxOperator::Zero => Some(vec![ScalarMonotone::default(); n]),
            ProxOperator::L1 { weight } => Some(vec![
                ScalarMonotone {
                    l1_weight: *weight,
                    ..Default::default()
                };
                n
            ]),
            ProxOperator::BoxCone { lower, upper } if lower.len() == n && upper.len() == n => Some(
                (0..n)
                    .map(|i| ScalarMonotone {
                        lower: lower[i],
                        upper: upper[i],
                        ..Default::default()
                    })
                    .collect(),
            ),
            ProxOperator::Affine { matrix, offset } if offset.len() == n => {
                let d = diag_of(matrix)?;
                Some(
                    (0..n)
                        .map(|i| ScalarMonotone {
                            slope: d[i],
                            offset: -offset[i],
                            ..Default::default()
                        })
                        .collect(),
                )
            }
            ProxOperator::Quadratic { hessian, linear } if linear.len() == n => {
                let d = diag_of(hessian)?;
                Some(
                    (0..n)
                        .map(|i| ScalarMonotone {
                            slope: d[i],
                            offset: linear[i],
                            ..Default::default()
                        })
                        .collect(),
                )
            }
            ProxOperator::L1Affine {
                weight,
                diag,
                offset,
            } if diag.len() == n && offset.len() == n => Some(
                (0..n)
                    .map(|i| ScalarMonotone {
                        l1_weight: *weight,
                        slope: diag[i],
                        offset: offset[i],
                        ..Default::default()
                    })
                    .collect(),
            ),
            ProxOperator::Blocks(blocks) => {
                if blocks.iter().map(|b| b.dim).sum::<usize>() != n {
                    return None;
                }
                let mut out = Vec::with_capacity(n);
                for b in blocks {
                    out.extend(b.op.scalar_parts(b.dim)?);
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// `dist(v, B x)`, available for the separable and affine members of the catalog.
    pub fn distance_to_image(&self, x: &Point, v: &Point) -> Option<f64> {
        match self {
            ProxOperator::Affine { matrix, offset } => Some((v - (matrix * x + offset)).norm()),
            ProxOperator::Quadratic { hessian, linear } => Some((v - (hessian * x - linear)).norm()),
            ProxOperator::Inverse(inner) => {
                // v in B^{-1} x  <=>  x in B v
                inner.distance_to_image(v, x)
            }
            ProxOperator::Blocks(blocks) => {
                let mut start = 0;
                let mut acc = 0.0;
                for b in blocks {
                    let xs = x.rows(start, b.dim).into_owned();
                    let vs = v.rows(start, b.dim).into_owned();
                    let d = b.op.distance_to_image(&xs, &vs)?;
                    acc += d * d;
                    start += b.dim;
                }
                Some(acc.sqrt())
            }
            other => {
                let parts = other.scalar_parts(x.len())?;
                Some(
                    parts
                        .iter()
                        .enumerate()
                        .map(|(i, p)| p.distance_to_image(x[i], v[i]).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                )
            }
        }
    }
}
