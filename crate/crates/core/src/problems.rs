//! Seeded test problems with oracle solutions and declared constants.
//!
//! Every instance checks at construction that its oracle is a fixed point of
//! the forward-backward map, `||T_FB z* - z*|| <= 1e-9`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::four_op::{conservative_iterate, gamma_bound_conservative, FourOpProblem, FourOpSolver, KernelSpec};
use crate::linalg::{extremal_eig_bounds, Point};
use crate::nofob::{NofobProblem, Schedule};
use crate::operators::{
    CocoerciveMap, LipschitzMap, NonlinearKernel, ProxOperator, ScalarKernel, SkewMap,
};
use crate::projective::PsProblem;
use crate::rng::SeededRng;

/// Fixed-point certificate tolerance.
pub const CERTIFICATE_TOL: f64 = 1e-9;
/// Residual accepted from a reference run.
const ORACLE_ACCEPT: f64 = 1e-10;
const ORACLE_TARGET: f64 = 1e-14;
const ORACLE_MAX_ITER: usize = 200_000;

/// Registered problem names.
pub const REGISTRY: [&str; 7] = [
    "rotation",
    "regquad-fbs",
    "regquad-fbhf",
    "regquad-fbf",
    "regquad-full",
    "saddle",
    "nonlinear-kernel",
];

/// Declared operator constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub l_d: f64,
    pub beta_e: f64,
    pub k_norm: f64,
    /// Strong monotonicity modulus of `B + D + E + K` (0 when unknown or absent).
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub seed: u64,
    pub problem: FourOpProblem,
    /// Projective-splitting view; the stacked `(w, x)` space is `problem`'s space.
    pub ps: Option<PsProblem>,
    pub oracle: Point,
    pub constants: Constants,
    /// Nonlinear kernel the instance is meant to be solved with, if any.
    pub kernel: Option<NonlinearKernel>,
}

impl ProblemInstance {
    fn new(
        name: &str,
        seed: u64,
        problem: FourOpProblem,
        ps: Option<PsProblem>,
        oracle: Point,
        sigma: f64,
        kernel: Option<NonlinearKernel>,
    ) -> Result<Self> {
        let constants = Constants {
            l_d: problem.l_d(),
            beta_e: problem.beta_e(),
            k_norm: problem.k_norm(),
            sigma,
        };
        let inst = ProblemInstance {
            name: name.to_string(),
            seed,
            problem,
            ps,
            oracle,
            constants,
            kernel,
        };
        let cert = inst.fixed_point_residual(&inst.certificate_spec())?;
        if cert > CERTIFICATE_TOL {
            return Err(Error::Contract(format!("{name}: oracle fails the fixed-point certificate ({cert:e})")));
        }
        if let Some(k) = &inst.kernel {
            let cert = inst.fixed_point_residual(&KernelSpec::SeparableNonlinear(k.clone()))?;
            if cert > CERTIFICATE_TOL {
                return Err(Error::Contract(format!("{name}: oracle fails the nonlinear certificate ({cert:e})")));
            }
        }
        Ok(inst)
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// A scalar step that is admissible for every instance.
    pub fn certificate_spec(&self) -> KernelSpec {
        let c = &self.constants;
        KernelSpec::ScalarStep(Schedule::Constant(0.5 / (1.0 + c.l_d + c.k_norm + c.beta_e)))
    }

    /// `||T_FB z* - z*||` for the forward-backward map of `spec`.
    pub fn fixed_point_residual(&self, spec: &KernelSpec) -> Result<f64> {
        let solver = FourOpSolver::new(self.problem.clone(), spec.clone())?;
        Ok((solver.forward_backward(0, &self.oracle)? - &self.oracle).norm())
    }

    /// Default starting point: all ones.
    pub fn default_x0(&self) -> Point {
        Point::from_element(self.dim(), 1.0)
    }
}

/// High-accuracy solution by the conservative iteration at half its step bound.
/// Returns the resolvent output `x_hat` with the smallest residual, which lies
/// exactly in the domain structure of `B` (e.g. exact zeros under an l1 term).
pub fn reference_solution(prob: &FourOpProblem, x0: &Point) -> Result<Point> {
    let gamma = (0.5 * gamma_bound_conservative(prob.beta_e(), prob.l_d(), prob.k_norm(), 0.05)?).min(1.0);
    let mut x = x0.clone();
    let mut best = (f64::INFINITY, x.clone());
    for k in 0..ORACLE_MAX_ITER {
        let rec = conservative_iterate(prob, gamma, k, &x)?;
        if rec.residual_s < best.0 {
            best = (rec.residual_s, rec.x_hat.clone());
        }
        if rec.residual_s <= ORACLE_TARGET * (1.0 + rec.x.norm()) {
            break;
        }
        x = rec.x_next;
    }
    if best.0 > ORACLE_ACCEPT {
        return Err(Error::NonConvergence(format!("reference run stalled at residual {:e}", best.0)));
    }
    Ok(best.1)
}

/// `F = scale R(angle)` on each coordinate pair, split as `E = scale cos(angle) I`
/// and `K = scale sin(angle) J`; the unique zero is the origin.
pub fn make_rotation_vi(angle_deg: f64, scale: f64, n_even: usize) -> Result<ProblemInstance> {
    if n_even == 0 || n_even % 2 != 0 {
        return invalid(format!("rotation problem needs a positive even dimension, got {n_even}"));
    }
    if !(angle_deg > 0.0 && angle_deg <= 90.0) {
        return invalid(format!(
            "angle {angle_deg} leaves (0, 90]; larger angles give a non-monotone operator"
        ));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return invalid("rotation scale must be positive");
    }
    let rad = angle_deg.to_radians();
    let cos = if rad.cos().abs() < 1e-15 { 0.0 } else { rad.cos() };
    let sin = rad.sin();
    let mut k = DMatrix::zeros(n_even, n_even);
    for b in (0..n_even).step_by(2) {
        k[(b, b + 1)] = -scale * sin;
        k[(b + 1, b)] = scale * sin;
    }
    let e = if cos == 0.0 {
        CocoerciveMap::zero(n_even)
    } else {
        CocoerciveMap::quadratic_gradient(DMatrix::identity(n_even, n_even) * (scale * cos), Point::zeros(n_even))?
    };
    let problem = FourOpProblem::new(ProxOperator::Zero, LipschitzMap::zero(n_even), e, SkewMap::new(k)?)?;
    ProblemInstance::new("rotation", 0, problem, None, Point::zeros(n_even), scale * cos, None)
}

/// Which pieces of the regularized quadratic are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// `E` only.
    Fbs,
    /// `E` plus a Lipschitz `D` that absorbs the skew part.
    Fbhf,
    /// Everything in `D` and `K`; `E = 0`.
    Fbf,
    /// All four operators nonzero.
    Full,
}

impl Split {
    fn suffix(self) -> &'static str {
        match self {
            Split::Fbs => "fbs",
            Split::Fbhf => "fbhf",
            Split::Fbf => "fbf",
            Split::Full => "full",
        }
    }
}

/// `0 ∈ lambda ∂||x||_1 + (H x - b) + D_0 x + K x` with `H` SPD, `D_0` monotone
/// (skew plus small PSD) and `K` skew, each piece drawn from `seed`.
pub fn make_regularized_quadratic(n: usize, lambda: f64, seed: u64, split: Split) -> Result<ProblemInstance> {
    if n < 2 {
        return invalid(format!("regularized quadratic needs n >= 2, got {n}"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid(format!("lambda must be finite and nonnegative, got {lambda}"));
    }
    let mut rng = SeededRng::new(seed);
    let nf = n as f64;
    let r = rng.matrix(n, n);
    let h = r.transpose() * &r / nf + DMatrix::identity(n, n) * 0.5;
    let r2 = rng.matrix(n, n);
    let c = rng.matrix(n, n);
    let d0 = (&r2 - r2.transpose()) * 0.25 + &c * c.transpose() * (0.1 / nf);
    let k = SkewMap::skew_part(&(rng.matrix(n, n) * 0.5));
    let b = rng.vector(n) * 2.0;
    let zero_k = SkewMap::zero(n);
    let (d, e, k) = match split {
        Split::Fbs => (LipschitzMap::zero(n), CocoerciveMap::quadratic_gradient(h.clone(), b)?, zero_k),
        Split::Fbhf => (
            LipschitzMap::linear(&d0 + k.matrix()),
            CocoerciveMap::quadratic_gradient(h.clone(), b)?,
            zero_k,
        ),
        Split::Fbf => (LipschitzMap::affine(&h + &d0, -b), CocoerciveMap::zero(n), k),
        Split::Full => (LipschitzMap::linear(d0.clone()), CocoerciveMap::quadratic_gradient(h.clone(), b)?, k),
    };
    let problem = FourOpProblem::new(ProxOperator::L1 { weight: lambda }, d, e, k)?;
    let sym = match split {
        Split::Fbs => h.clone(),
        _ => &h + (&d0 + d0.transpose()) * 0.5,
    };
    let sigma = extremal_eig_bounds(&sym, 1e-12)?.0;
    let oracle = reference_solution(&problem, &Point::zeros(n))?;
    match problem.inclusion_residual(&oracle) {
        Some(res) if res <= 1e-9 => {}
        other => return Err(Error::Contract(format!("regquad oracle fails the subgradient test: {other:?}"))),
    }
    let name = format!("regquad-{}", split.suffix());
    ProblemInstance::new(&name, seed, problem, None, oracle, sigma, None)
}

/// `min_x f(x) + g(L x)` with `f(x) = x'Fx/2 - c'x` and `g(y) = y'Gy/2 - d'y`
/// as `0 ∈ L^T ∂g(L x) + ∂f(x)`; the stacked point is `(w, x)` with `w = ∇g(L x)`.
pub fn make_saddle_pd(n: usize, m: usize, seed: u64) -> Result<ProblemInstance> {
    if n == 0 || m == 0 {
        return invalid("saddle problem needs positive dimensions");
    }
    let mut rng = SeededRng::new(seed);
    let rf = rng.matrix(n, n);
    let f = rf.transpose() * &rf / n as f64 + DMatrix::identity(n, n) * 0.5;
    let c = rng.vector(n);
    let rg = rng.matrix(m, m);
    let g = rg.transpose() * &rg / m as f64 + DMatrix::identity(m, m) * 0.5;
    let d = rng.vector(m);
    let l = rng.matrix(m, n);
    saddle_from_parts(f, c, g, d, l, seed)
}

/// Saddle instance from explicit data; the oracle solves the KKT system densely.
pub fn saddle_from_parts(
    f: DMatrix<f64>,
    c: Point,
    g: DMatrix<f64>,
    d: Point,
    l: DMatrix<f64>,
    seed: u64,
) -> Result<ProblemInstance> {
    let lhs = &f + l.transpose() * &g * &l;
    let rhs = &c + l.tr_mul(&d);
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Contract("singular KKT system".into()))?;
    let w = &g * (&l * &x) - &d;
    let sigma = extremal_eig_bounds(&f, 1e-12)?.0.min(1.0 / extremal_eig_bounds(&g, 1e-12)?.1);
    let a1 = ProxOperator::Quadratic { hessian: g, linear: d };
    let a2 = ProxOperator::Quadratic { hessian: f, linear: c };
    let ps = PsProblem::new(vec![a1, a2], vec![l], vec![Schedule::Constant(1.0); 2])?;
    let problem = ps.four_op_problem()?;
    let oracle = Point::from_iterator(w.len() + x.len(), w.iter().chain(x.iter()).copied());
    ProblemInstance::new("saddle", seed, problem, Some(ps), oracle, sigma, None)
}

/// `0 ∈ lambda ∂||x||_1 + diag(a) x - b + K x` solved with the kernel
/// `phi(t) = t + atan(t)` per coordinate; `coupling` scales the skew `K`.
pub fn make_nonlinear_kernel_demo(n: usize, lambda: f64, seed: u64, coupling: f64) -> Result<(ProblemInstance, KernelSpec)> {
    if n == 0 {
        return invalid("nonlinear demo needs n >= 1");
    }
    if !coupling.is_finite() {
        return invalid(format!("coupling must be finite, got {coupling}"));
    }
    let mut rng = SeededRng::new(seed);
    let diag = Point::from_fn(n, |_, _| rng.range(0.5, 1.5));
    let offset = rng.vector(n) * 2.0;
    let k = SkewMap::skew_part(&(rng.matrix(n, n) * coupling));
    nonlinear_from_parts(lambda, diag, offset, k, seed)
}

/// Nonlinear-kernel instance from explicit data.
pub fn nonlinear_from_parts(
    lambda: f64,
    diag: Point,
    offset: Point,
    k: SkewMap,
    seed: u64,
) -> Result<(ProblemInstance, KernelSpec)> {
    let n = diag.len();
    if !(lambda >= 0.0) || diag.iter().any(|v| *v < 0.0) || offset.len() != n || k.dim() != n {
        return invalid("nonlinear demo needs lambda >= 0, a nonnegative diagonal and matching dimensions");
    }
    let sigma = diag.min();
    let b = ProxOperator::L1Affine { weight: lambda, diag, offset };
    let problem = FourOpProblem::new(b, LipschitzMap::zero(n), CocoerciveMap::zero(n), k)?;
    let oracle = reference_solution(&problem, &Point::zeros(n))?;
    let kernel = NonlinearKernel::uniform(n, ScalarKernel::Arctan { slope: 1.0 })?;
    let spec = KernelSpec::SeparableNonlinear(kernel.clone());
    let inst = ProblemInstance::new("nonlinear-kernel", seed, problem, None, oracle, sigma, Some(kernel))?;
    Ok((inst, spec))
}

/// Generator parameters; unset fields take per-problem defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemParams {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub angle: Option<f64>,
    pub scale: Option<f64>,
    pub coupling: Option<f64>,
}

/// Builds a registered problem by name.
pub fn make_problem(name: &str, params: &ProblemParams) -> Result<ProblemInstance> {
    let lambda = params.lambda.unwrap_or(0.1);
    let regquad = |split| make_regularized_quadratic(params.n.unwrap_or(20), lambda, params.seed, split);
    match name {
        "rotation" => make_rotation_vi(
            params.angle.unwrap_or(90.0),
            params.scale.unwrap_or(1.0),
            params.n.unwrap_or(2),
        ),
        "regquad-fbs" => regquad(Split::Fbs),
        "regquad-fbhf" => regquad(Split::Fbhf),
        "regquad-fbf" => regquad(Split::Fbf),
        "regquad-full" => regquad(Split::Full),
        "saddle" => make_saddle_pd(params.n.unwrap_or(10), params.m.unwrap_or(8), params.seed),
        "nonlinear-kernel" => make_nonlinear_kernel_demo(
            params.n.unwrap_or(20),
            lambda,
            params.seed,
            params.coupling.unwrap_or(0.5),
        )
        .map(|(inst, _)| inst),
        other => Err(Error::InvalidParameter(format!(
            "unknown problem '{other}'; known: {}",
            REGISTRY.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use crate::operators::{apply_skew, check_skew, sampled_cocoercivity_ratio, sampled_lipschitz_ratio};

    #[test]
    fn rotation_examples() {
        let inst = make_rotation_vi(90.0, 1.0, 2).unwrap();
        assert_eq!(inst.problem.k.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        assert!(inst.problem.e.is_zero());
        assert_eq!(inst.oracle, Point::zeros(2));
        for g in [0.1, 0.7, 2.0] {
            let fb = DMatrix::identity(2, 2) - inst.problem.k.matrix() * g;
            assert!((spectral_norm(&fb) - (1.0 + g * g).sqrt()).abs() < 1e-12);
            if g < 1.0 {
                let cons = DMatrix::identity(2, 2) * (1.0 - g * g) - inst.problem.k.matrix() * g;
                let want = ((1.0 - g * g).powi(2) + g * g).sqrt();
                assert!((spectral_norm(&cons) - want).abs() < 1e-12 && want < 1.0);
            }
        }
        assert!(make_rotation_vi(90.0, 1.0, 3).is_err());
        assert!(make_rotation_vi(120.0, 1.0, 2).is_err());
        let tilted = make_rotation_vi(60.0, 2.0, 4).unwrap();
        assert!((tilted.constants.beta_e - 1.0).abs() < 1e-12);
        assert!((tilted.constants.k_norm - 3.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn regquad_closed_forms() {
        let big = make_regularized_quadratic(6, 10.0, 3, Split::Fbs).unwrap();
        assert!(big.oracle.amax() <= 1e-12);
        let smooth = make_regularized_quadratic(6, 0.0, 3, Split::Fbs).unwrap();
        let e = smooth.problem.e.map();
        let want = e.matrix.clone().lu().solve(&(-&e.offset)).unwrap();
        assert!((&smooth.oracle - want).amax() <= 1e-10);
    }

    #[test]
    fn regquad_splits_share_the_full_solution() {
        let full = make_regularized_quadratic(8, 0.1, 5, Split::Full).unwrap();
        for split in [Split::Fbhf, Split::Fbf] {
            let other = make_regularized_quadratic(8, 0.1, 5, split).unwrap();
            assert!((&other.oracle - &full.oracle).amax() <= 1e-9);
        }
        assert!(full.constants.sigma > 0.0);
    }

    #[test]
    fn regquad_constants_are_honest() {
        let inst = make_regularized_quadratic(10, 0.1, 9, Split::Full).unwrap();
        let p = &inst.problem;
        assert!(sampled_lipschitz_ratio(|x| p.d.apply(x) - p.d.apply(&Point::zeros(10)), 10, 5000, 1, 1.0) <= p.l_d() * (1.0 + 1e-8));
        assert!(sampled_cocoercivity_ratio(|x| p.e.apply(x), 10, 5000, 2, 1.0) <= p.beta_e() * (1.0 + 1e-8));
        assert!(sampled_lipschitz_ratio(|x| apply_skew(&p.k, x), 10, 5000, 3, 1.0) <= p.k_norm() * (1.0 + 1e-8));
        assert!(check_skew(p.k.matrix(), 1000, 4) <= 1e-12);
    }

    #[test]
    fn saddle_examples() {
        let inst = make_saddle_pd(10, 8, 1).unwrap();
        assert_eq!(inst.dim(), 18);
        assert!(check_skew(inst.problem.k.matrix(), 1000, 1) <= 1e-12);
        // f = (x - 1)^2, g = (y - 2)^2 / 2, L = 1: x* = 4/3, w* = -2/3
        let scalar = saddle_from_parts(
            DMatrix::from_element(1, 1, 2.0),
            Point::from_element(1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            Point::from_element(1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            0,
        )
        .unwrap();
        assert!((scalar.oracle[0] + 2.0 / 3.0).abs() < 1e-15);
        assert!((scalar.oracle[1] - 4.0 / 3.0).abs() < 1e-15);
        let decoupled = saddle_from_parts(
            DMatrix::identity(2, 2) * 2.0,
            Point::from_element(2, 1.0),
            DMatrix::identity(1, 1),
            Point::from_element(1, 3.0),
            DMatrix::zeros(1, 2),
            0,
        )
        .unwrap();
        assert_eq!(decoupled.oracle.as_slice(), &[-3.0, 0.5, 0.5]);
    }

    #[test]
    fn nonlinear_demo_examples() {
        let n = 4;
        let offset = Point::from_column_slice(&[1.0, -2.0, 0.5, 3.0]);
        let (inst, _) = nonlinear_from_parts(0.0, Point::from_element(n, 1.0), offset.clone(), SkewMap::zero(n), 0).unwrap();
        assert!((&inst.oracle - &offset).amax() <= 1e-12);
        let (inst, spec) = make_nonlinear_kernel_demo(20, 0.1, 7, 0.5).unwrap();
        assert!(inst.fixed_point_residual(&spec).unwrap() <= CERTIFICATE_TOL);
    }

    #[test]
    fn registry_is_deterministic() {
        for name in REGISTRY {
            let params = ProblemParams {
                seed: 42,
                n: if name == "rotation" { None } else { Some(6) },
                m: Some(4),
                ..Default::default()
            };
            let a = make_problem(name, &params).unwrap();
            let b = make_problem(name, &params).unwrap();
            assert_eq!(a.oracle, b.oracle, "{name}");
            assert_eq!(a.problem, b.problem, "{name}");
        }
        assert!(make_problem("nope", &ProblemParams::default()).is_err());
    }
}
