//! Coordinate-separable strongly monotone kernels and the nonlinear resolvent
//! `x = (M + A)^{-1} y` for separable `A`.

use crate::error::{invalid, Error, Result};
use crate::linalg::Point;
use crate::operators::prox::ScalarMonotone;

/// Default absolute tolerance on the scalar residual of the nonlinear resolvent.
pub const RESOLVENT_TOL: f64 = 1e-12;

const MAX_DOUBLINGS: usize = 1000;

/// A continuous, strongly increasing scalar function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarKernel {
    /// `phi(t) = slope * t`.
    Linear { slope: f64 },
    /// `phi(t) = slope * t + atan(t)`.
    Arctan { slope: f64 },
}

impl ScalarKernel {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ScalarKernel::Linear { slope } => slope * t,
            ScalarKernel::Arctan { slope } => slope * t + t.atan(),
        }
    }

    /// Strong monotonicity modulus `sigma`.
    pub fn modulus(&self) -> f64 {
        match *self {
            ScalarKernel::Linear { slope } | ScalarKernel::Arctan { slope } => slope,
        }
    }

    /// Lipschitz constant `ell`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            ScalarKernel::Linear { slope } => slope,
            ScalarKernel::Arctan { slope } => slope + 1.0,
        }
    }
}

/// `M x = (phi_1(x_1), ..., phi_n(x_n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearKernel {
    coords: Vec<ScalarKernel>,
}

impl NonlinearKernel {
    pub fn new(coords: Vec<ScalarKernel>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("kernel needs at least one coordinate");
        }
        if let Some(bad) = coords.iter().find(|c| !(c.modulus() > 0.0)) {
            return invalid(format!("kernel coordinate {bad:?} is not strongly monotone"));
        }
        Ok(NonlinearKernel { coords })
    }

    pub fn uniform(n: usize, kind: ScalarKernel) -> Result<Self> {
        Self::new(vec![kind; n])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[ScalarKernel] {
        &self.coords
    }

    pub fn apply(&self, x: &Point) -> Point {
        assert_eq!(x.len(), self.dim(), "dimension mismatch in kernel");
        Point::from_fn(x.len(), |i, _| self.coords[i].eval(x[i]))
    }

    /// `min_i sigma_i`: the kernel is this strongly monotone w.r.t. `||.||`.
    pub fn modulus(&self) -> f64 {
        self.coords.iter().map(|c| c.modulus()).fold(f64::INFINITY, f64::min)
    }

    /// `max_i ell_i`.
    pub fn lipschitz(&self) -> f64 {
        self.coords.iter().map(|c| c.lipschitz()).fold(0.0, f64::max)
    }
}

/// Root of a strictly increasing `f` with modulus `sigma`, starting at `start`.
///
/// The first bracket has width `|f(start)| / sigma`, which already contains
/// the root for an honest modulus; it is doubled at most `MAX_DOUBLINGS` times.
fn increasing_root<F: Fn(f64) -> f64>(f: F, start: f64, sigma: f64, tol: f64) -> Result<f64> {
    let f0 = f(start);
    if !f0.is_finite() {
        return Err(Error::NonConvergence(format!("non-finite residual at {start}")));
    }
    if f0.abs() <= tol {
        return Ok(start);
    }
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let mut width = (f0.abs() / sigma).max(f64::MIN_POSITIVE);
    let mut near = start;
    let mut far = start + dir * width;
    let mut doublings = 0;
    while f(far) * dir < 0.0 {
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !far.is_finite() {
            return Err(Error::NonConvergence(format!(
                "bracket growth exceeded {MAX_DOUBLINGS} doublings; modulus {sigma} is likely mis-declared"
            )));
        }
        near = far;
        width *= 2.0;
        far = start + dir * width;
    }
    let (mut lo, mut hi) = if dir > 0.0 { (near, far) } else { (far, near) };
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm.abs() <= tol {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // interval is at machine resolution
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Solves `phi(t) + a(t) ∋ y` for one coordinate.
pub fn scalar_nonlinear_resolvent(phi: ScalarKernel, part: &ScalarMonotone, y: f64, tol: f64) -> Result<f64> {
    let sigma = phi.modulus() + part.slope.max(0.0);
    let smooth = |t: f64| phi.eval(t) + part.slope * t - part.offset;
    let w = part.l1_weight;
    let unconstrained = if w > 0.0 {
        let at_zero = smooth(0.0);
        if y > at_zero + w {
            increasing_root(|t| smooth(t) + w - y, 0.0, sigma, tol)?
        } else if y < at_zero - w {
            increasing_root(|t| smooth(t) - w - y, 0.0, sigma, tol)?
        } else {
            0.0
        }
    } else {
        increasing_root(|t| smooth(t) - y, 0.0, sigma, tol)?
    };
    Ok(unconstrained.max(part.lower).min(part.upper))
}

/// `(M + A)^{-1} y` for a separable kernel and separable `A`, coordinatewise.
pub fn separable_nonlinear_resolvent(
    kernel: &NonlinearKernel,
    parts: &[ScalarMonotone],
    y: &Point,
    tol: f64,
) -> Result<Point> {
    if parts.len() != kernel.dim() || y.len() != kernel.dim() {
        return invalid(format!(
            "separable resolvent dimensions disagree: kernel {}, operator {}, input {}",
            kernel.dim(),
            parts.len(),
            y.len()
        ));
    }
    if parts.iter().any(|p| p.slope < 0.0 || p.l1_weight < 0.0 || p.lower > p.upper) {
        return invalid("separable operator part is not monotone");
    }
    let mut out = Point::zeros(y.len());
    for (i, (phi, part)) in kernel.coords().iter().zip(parts).enumerate() {
        out[i] = scalar_nonlinear_resolvent(*phi, part, y[i], tol)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::prox::ProxOperator;
    use crate::rng::SeededRng;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn linear(n: usize, slope: f64) -> NonlinearKernel {
        NonlinearKernel::uniform(n, ScalarKernel::Linear { slope }).unwrap()
    }

    #[test]
    fn identity_kernel_zero_operator() {
        let y = p(&[1.5, -2.0, 0.0]);
        let x = separable_nonlinear_resolvent(&linear(3, 1.0), &[ScalarMonotone::default(); 3], &y, RESOLVENT_TOL)
            .unwrap();
        assert!((x - y).amax() <= 1e-12);
    }

    #[test]
    fn identity_kernel_nonnegative_cone_projects() {
        let part = ScalarMonotone {
            lower: 0.0,
            ..Default::default()
        };
        let x = separable_nonlinear_resolvent(&linear(1, 1.0), &[part], &p(&[-1.0]), RESOLVENT_TOL).unwrap();
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn scaled_kernel_with_abs_subdifferential() {
        // 2x + 1 = 3 on the positive branch
        let part = ScalarMonotone {
            l1_weight: 1.0,
            ..Default::default()
        };
        let x = separable_nonlinear_resolvent(&linear(1, 2.0), &[part], &p(&[3.0]), RESOLVENT_TOL).unwrap();
        assert!((x[0] - 1.0).abs() <= 1e-12);
        // 2x + sign(x) = 3 with x = 1 > 0 is consistent with d|x| = {1}
        assert!(part.distance_to_image(x[0], 3.0 - 2.0 * x[0]) <= 1e-12);
    }

    #[test]
    fn arctan_kernel_odd_at_zero() {
        let k = NonlinearKernel::uniform(1, ScalarKernel::Arctan { slope: 1.0 }).unwrap();
        let x = separable_nonlinear_resolvent(&k, &[ScalarMonotone::default()], &p(&[0.0]), RESOLVENT_TOL).unwrap();
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn residual_meets_tolerance() {
        let k = NonlinearKernel::uniform(1, ScalarKernel::Arctan { slope: 0.5 }).unwrap();
        let part = ScalarMonotone {
            l1_weight: 0.3,
            slope: 0.2,
            offset: 0.1,
            ..Default::default()
        };
        let mut rng = SeededRng::new(2);
        for _ in 0..200 {
            let y = rng.symmetric() * 20.0;
            let x = scalar_nonlinear_resolvent(k.coords()[0], &part, y, RESOLVENT_TOL).unwrap();
            let resid = part.distance_to_image(x, y - k.coords()[0].eval(x));
            assert!(resid <= RESOLVENT_TOL, "y = {y}, residual {resid:e}");
        }
    }

    #[test]
    fn misdeclared_modulus_is_detected() {
        // atan(t) = 10 has no solution; a claimed modulus of 1 cannot bracket it
        let err = increasing_root(|t| t.atan() - 10.0, 0.0, 1.0, RESOLVENT_TOL);
        assert!(matches!(err, Err(Error::NonConvergence(_))));
    }

    #[test]
    fn identity_kernel_agrees_with_prox_catalog() {
        let mut rng = SeededRng::new(21);
        let n = 4;
        let ops = vec![
            ProxOperator::Zero,
            ProxOperator::L1 { weight: 0.6 },
            ProxOperator::BoxCone {
                lower: p(&[-1.0, -0.5, 0.0, -2.0]),
                upper: p(&[1.0, 0.5, 3.0, -1.0]),
            },
            ProxOperator::L1Affine {
                weight: 0.3,
                diag: p(&[0.5, 1.0, 0.0, 2.0]),
                offset: rng.vector(n),
            },
        ];
        let kernel = linear(n, 1.0);
        for op in ops {
            let parts = op.scalar_parts(n).unwrap();
            for _ in 0..50 {
                let y = rng.vector(n) * 5.0;
                let a = separable_nonlinear_resolvent(&kernel, &parts, &y, RESOLVENT_TOL).unwrap();
                let b = op.resolvent(1.0, &y).unwrap();
                assert!((a - b).amax() <= 2.0 * RESOLVENT_TOL, "{}", op.descriptor());
            }
        }
    }

    #[test]
    fn kernel_constants_are_honest() {
        let mut rng = SeededRng::new(4);
        let phi = ScalarKernel::Arctan { slope: 0.7 };
        for _ in 0..10_000 {
            let s = rng.symmetric() * 10.0;
            let t = rng.symmetric() * 10.0;
            if s == t {
                continue;
            }
            let df = phi.eval(s) - phi.eval(t);
            assert!(df * (s - t) >= phi.modulus() * (s - t).powi(2) * (1.0 - 1e-8));
            assert!(df.abs() <= phi.lipschitz() * (s - t).abs() * (1.0 + 1e-8));
        }
    }
}
