//! Four-operator splitting for `0 ∈ B x + D x + E x + K x` and its special
//! cases.
//!
//! With `M_k = Q_k - D - K` the forward-backward step is
//! `x_hat = (Q_k + B)^{-1}(Q_k - D - K - E) x`, so `D`, `E` and `K` are only
//! evaluated forward. The kernel `Q_k` is chosen by a [`KernelSpec`].

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{spectral_norm, Point, SpdMetric};
use crate::nofob::{assemble_record, nofob_iterate, IterRecord, NofobProblem, Schedule, COINCIDENCE_TOL};
use crate::operators::{
    apply_skew, separable_nonlinear_resolvent, CocoerciveMap, LipschitzMap, NonlinearKernel, ProxOperator,
    ScalarMonotone, SkewMap, RESOLVENT_TOL,
};

/// `B` maximally monotone, `D` Lipschitz, `E` cocoercive, `K` skew.
#[derive(Debug, Clone, PartialEq)]
pub struct FourOpProblem {
    pub b: ProxOperator,
    pub d: LipschitzMap,
    pub e: CocoerciveMap,
    pub k: SkewMap,
}

impl FourOpProblem {
    pub fn new(b: ProxOperator, d: LipschitzMap, e: CocoerciveMap, k: SkewMap) -> Result<Self> {
        let n = d.map().dim();
        if n == 0 || e.map().dim() != n || k.dim() != n {
            return invalid(format!(
                "operator dimensions disagree: D {n}, E {}, K {}",
                e.map().dim(),
                k.dim()
            ));
        }
        if let Some(dims) = b.block_dims() {
            if dims.iter().sum::<usize>() != n {
                return invalid("block structure of B does not cover the space");
            }
        }
        Ok(FourOpProblem { b, d, e, k })
    }

    pub fn dim(&self) -> usize {
        self.d.map().dim()
    }

    pub fn l_d(&self) -> f64 {
        self.d.lipschitz()
    }

    pub fn beta_e(&self) -> f64 {
        self.e.inverse_cocoercivity()
    }

    pub fn k_norm(&self) -> f64 {
        self.k.operator_norm()
    }

    /// `(D + K) x`.
    pub fn lipschitz_part(&self, x: &Point) -> Point {
        self.d.apply(x) + apply_skew(&self.k, x)
    }

    /// `(D + K)(x - y)` evaluated on the difference.
    pub fn lipschitz_increment(&self, x: &Point, y: &Point) -> Point {
        let d = x - y;
        &self.d.map().matrix * &d + apply_skew(&self.k, &d)
    }

    /// `(D + K + E) x`.
    pub fn single_valued(&self, x: &Point) -> Point {
        self.lipschitz_part(x) + self.e.apply(x)
    }

    /// `J_{gamma B}(x - gamma (D + K + E) x)`.
    pub fn forward_backward_step(&self, gamma: f64, x: &Point) -> Result<Point> {
        self.b.resolvent(gamma, &(x - self.single_valued(x) * gamma))
    }

    /// `dist(-(D + K + E) x, B x)` when `B` admits a graph-distance oracle.
    pub fn inclusion_residual(&self, x: &Point) -> Option<f64> {
        self.b.distance_to_image(x, &(-self.single_valued(x)))
    }
}

/// Choice of `Q_k` in `M_k = Q_k - D - K`.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `Q_k = gamma_k^{-1} I`.
    ScalarStep(Schedule),
    /// `Q_k = blockdiag(q_{i,k} I)`; `B` must share the block structure.
    BlockDiag { dims: Vec<usize>, weights: Vec<Schedule> },
    /// `Q = P + G` with `P` symmetric positive definite and `G` skew.
    /// `Q + B` must be block lower triangular with scalar diagonal blocks.
    AffinePlusSkew { p: SpdMetric, g: SkewMap },
    /// `Q x = (phi_1(x_1), ..., phi_n(x_n))`; `B` must be separable.
    SeparableNonlinear(NonlinearKernel),
    /// `Q_k = gamma_k^{-1} M`; requires `D = K = 0`.
    ScaledMetric { gamma: Schedule, metric: SpdMetric },
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::ScalarStep(_) => "scalar-step",
            KernelSpec::BlockDiag { .. } => "block-diagonal",
            KernelSpec::AffinePlusSkew { .. } => "affine-plus-skew",
            KernelSpec::SeparableNonlinear(_) => "separable-nonlinear",
            KernelSpec::ScaledMetric { .. } => "scaled-metric",
        }
    }
}

/// Block lower-triangular `Q` with scalar diagonal blocks.
#[derive(Debug, Clone)]
struct Triangular {
    q: DMatrix<f64>,
    dims: Vec<usize>,
    diag: Vec<f64>,
}

impl Triangular {
    fn new(q: DMatrix<f64>, dims: Vec<usize>) -> Result<Self> {
        let scale = q.amax().max(1.0);
        let tol = 1e-12 * scale;
        let mut starts = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &d in &dims {
            starts.push(acc);
            acc += d;
        }
        let mut diag = Vec::with_capacity(dims.len());
        for (bi, (&si, &di)) in starts.iter().zip(&dims).enumerate() {
            let c = q[(si, si)];
            if !(c > 0.0) {
                return Err(Error::Incompatible(format!("diagonal block {bi} of Q is not positive")));
            }
            for r in si..si + di {
                for col in 0..q.ncols() {
                    let v = q[(r, col)];
                    let above = col >= si + di;
                    let in_block = col >= si && col < si + di;
                    let bad = if above {
                        v.abs() > tol
                    } else if in_block {
                        let want = if r == col { c } else { 0.0 };
                        (v - want).abs() > tol
                    } else {
                        false
                    };
                    if bad {
                        return Err(Error::Incompatible(
                            "Q + B is not block lower triangular with scalar diagonal blocks".into(),
                        ));
                    }
                }
            }
            diag.push(c);
        }
        Ok(Triangular { q, dims, diag })
    }

    /// Gauss-Seidel sweep for `(Q + B) x = r`.
    fn solve(&self, b: &ProxOperator, r: &Point) -> Result<Point> {
        let mut x = Point::zeros(r.len());
        let mut start = 0;
        for (i, &dim) in self.dims.iter().enumerate() {
            let coupling = self.q.view((start, 0), (dim, start)) * x.rows(0, start);
            let rhs = (r.rows(start, dim) - coupling) / self.diag[i];
            let op = match b {
                ProxOperator::Blocks(blocks) => &blocks[i].op,
                other => other,
            };
            let xi = op.resolvent(1.0 / self.diag[i], &rhs)?;
            x.rows_mut(start, dim).copy_from(&xi);
            start += dim;
        }
        Ok(x)
    }
}

/// `(M + gamma B)^{-1} y` for a symmetric positive definite `M`.
pub fn metric_resolvent(b: &ProxOperator, m: &SpdMetric, gamma: f64, y: &Point) -> Result<Point> {
    let n = m.dim();
    if m.matrix() == &DMatrix::<f64>::identity(n, n) {
        return b.resolvent(gamma, y);
    }
    match b {
        ProxOperator::Zero => Ok(m.solve(y)),
        ProxOperator::Affine { matrix, offset } => (m.matrix() + matrix * gamma)
            .lu()
            .solve(&(y - offset * gamma))
            .ok_or_else(|| Error::Contract("singular metric resolvent".into())),
        ProxOperator::Quadratic { hessian, linear } => (m.matrix() + hessian * gamma)
            .lu()
            .solve(&(y + linear * gamma))
            .ok_or_else(|| Error::Contract("singular metric resolvent".into())),
        other => {
            let parts = match (m.is_diagonal(), other.scalar_parts(n)) {
                (true, Some(parts)) => parts,
                _ => {
                    return Err(Error::Incompatible(format!(
                        "no resolvent for {} in a non-diagonal metric",
                        other.descriptor()
                    )))
                }
            };
            Ok(Point::from_fn(n, |i, _| {
                let p = &parts[i];
                let v = y[i] + gamma * p.offset;
                let t = gamma * p.l1_weight;
                let shrunk = if v > t {
                    v - t
                } else if v < -t {
                    v + t
                } else {
                    0.0
                };
                (shrunk / (m.matrix()[(i, i)] + gamma * p.slope)).max(p.lower).min(p.upper)
            }))
        }
    }
}

fn metric_resolvent_supported(b: &ProxOperator, m: &SpdMetric) -> bool {
    let n = m.dim();
    m.matrix() == &DMatrix::<f64>::identity(n, n)
        || matches!(
            b,
            ProxOperator::Zero | ProxOperator::Affine { .. } | ProxOperator::Quadratic { .. }
        )
        || (m.is_diagonal() && b.scalar_parts(n).is_some())
}

/// A configured four-operator method: problem, kernel, metrics and constants.
#[derive(Debug, Clone)]
pub struct FourOpSolver {
    problem: FourOpProblem,
    spec: KernelSpec,
    p: SpdMetric,
    s: SpdMetric,
    beta: f64,
    lipschitz: f64,
    parts: Option<Vec<ScalarMonotone>>,
    triangular: Option<Triangular>,
}

impl FourOpSolver {
    /// Derives `P`, `beta` and `L_M` for the kernel and picks the default `S`
    /// (`I`, or `P` for affine-plus-skew kernels, or `M` for scaled metrics).
    pub fn new(problem: FourOpProblem, spec: KernelSpec) -> Result<Self> {
        let n = problem.dim();
        let l_d = problem.l_d();
        let beta_e = problem.beta_e();
        let k_norm = problem.k_norm();
        let mut parts = None;
        let mut triangular = None;
        let (p, s, beta, lipschitz) = match &spec {
            KernelSpec::ScalarStep(g) => {
                g.check_positive()?;
                let beta = beta_effective(beta_e, g.max(), l_d)?;
                let p = SpdMetric::scaled_identity(n, 1.0 / g.max() - l_d)?;
                (p, SpdMetric::identity(n), beta, kernel_lipschitz(g.min(), l_d, k_norm))
            }
            KernelSpec::BlockDiag { dims, weights } => {
                if dims.len() != weights.len() || dims.iter().sum::<usize>() != n || dims.contains(&0) {
                    return invalid("block kernel dimensions do not match the problem");
                }
                for w in weights {
                    w.check_positive()?;
                }
                let compatible = problem.b.is_zero()
                    || problem.b.block_dims().as_deref() == Some(dims.as_slice())
                    || (dims.len() == 1 && problem.b.block_dims().is_none());
                if !compatible {
                    return Err(Error::Incompatible("B must share the block structure of Q".into()));
                }
                let q_min = weights.iter().map(|w| w.min()).fold(f64::INFINITY, f64::min);
                let q_max = weights.iter().map(|w| w.max()).fold(0.0, f64::max);
                let eps = weights
                    .iter()
                    .map(|w| w.min().min(1.0 / w.max()))
                    .fold(q_min - l_d, f64::min);
                if !(eps > 0.0) {
                    return invalid(format!("block weights leave no strong monotonicity (eps = {eps})"));
                }
                let p = SpdMetric::scaled_identity(n, eps)?;
                (p, SpdMetric::identity(n), beta_e / eps, q_max + l_d + k_norm)
            }
            KernelSpec::AffinePlusSkew { p, g } => {
                if p.dim() != n || g.dim() != n {
                    return invalid("affine-plus-skew kernel dimensions do not match the problem");
                }
                let dims = problem.b.block_dims().unwrap_or_else(|| vec![n]);
                let q = p.matrix() + g.matrix();
                let tri = Triangular::new(q, dims)?;
                let p_eff = SpdMetric::new(p.matrix() - DMatrix::identity(n, n) * l_d)?;
                let beta = beta_e / p_eff.lambda_min();
                let lipschitz = spectral_norm(&(&tri.q - problem.k.matrix())) + l_d;
                triangular = Some(tri);
                (p_eff, p.clone(), beta, lipschitz)
            }
            KernelSpec::SeparableNonlinear(kernel) => {
                if kernel.dim() != n {
                    return invalid("kernel dimension does not match the problem");
                }
                parts = Some(
                    problem
                        .b
                        .scalar_parts(n)
                        .ok_or_else(|| Error::Incompatible("nonlinear kernel needs a separable B".into()))?,
                );
                let sigma = kernel.modulus() - l_d;
                if !(sigma > 0.0) {
                    return invalid(format!(
                        "kernel modulus {} does not dominate L_D = {l_d}",
                        kernel.modulus()
                    ));
                }
                let p = SpdMetric::scaled_identity(n, sigma)?;
                (p, SpdMetric::identity(n), beta_e / sigma, kernel.lipschitz() + l_d + k_norm)
            }
            KernelSpec::ScaledMetric { gamma, metric } => {
                gamma.check_positive()?;
                if metric.dim() != n {
                    return invalid("metric dimension does not match the problem");
                }
                if !problem.d.is_zero() || !problem.k.is_zero() {
                    return Err(Error::Incompatible("scaled-metric kernels require D = K = 0".into()));
                }
                if !metric_resolvent_supported(&problem.b, metric) {
                    return Err(Error::Incompatible(format!(
                        "no resolvent for {} in this metric",
                        problem.b.descriptor()
                    )));
                }
                let p = SpdMetric::new(metric.matrix() / gamma.max())?;
                let beta = metric_cocoercivity(beta_e, metric) * gamma.max();
                (p, metric.clone(), beta, metric.lambda_max() / gamma.min())
            }
        };
        if beta >= 4.0 {
            log::warn!("beta = {beta} is outside [0, 4); convergence is not guaranteed");
        }
        Ok(FourOpSolver {
            problem,
            spec,
            p,
            s,
            beta,
            lipschitz,
            parts,
            triangular,
        })
    }

    /// Replaces the projection metric.
    pub fn with_metric_s(mut self, s: SpdMetric) -> Result<Self> {
        if s.dim() != self.problem.dim() {
            return invalid("projection metric dimension does not match the problem");
        }
        self.s = s;
        Ok(self)
    }

    pub fn problem(&self) -> &FourOpProblem {
        &self.problem
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// `Q_k x`.
    pub fn apply_q(&self, k: usize, x: &Point) -> Point {
        match &self.spec {
            KernelSpec::ScalarStep(g) => x / g.value(k),
            KernelSpec::BlockDiag { dims, weights } => {
                let mut out = x.clone();
                let mut start = 0;
                for (&d, w) in dims.iter().zip(weights) {
                    out.rows_mut(start, d).scale_mut(w.value(k));
                    start += d;
                }
                out
            }
            KernelSpec::AffinePlusSkew { .. } => &self.triangular.as_ref().expect("configured").q * x,
            KernelSpec::SeparableNonlinear(kernel) => kernel.apply(x),
            KernelSpec::ScaledMetric { gamma, metric } => metric.apply(x) / gamma.value(k),
        }
    }

    /// `Q` as a dense matrix (constant kernels only; evaluated at `k = 0`).
    pub fn apply_q_matrix(&self) -> DMatrix<f64> {
        let n = self.problem().dim();
        let mut q = DMatrix::zeros(n, n);
        for j in 0..n {
            let e = Point::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            q.set_column(j, &self.apply_q(0, &e));
        }
        q
    }
}

/// `beta_E` re-expressed w.r.t. `||.||_M`: `||v||_{M^{-1}}^2 <= ||v||^2 / lambda_min(M)`.
pub fn metric_cocoercivity(beta_e: f64, metric: &SpdMetric) -> f64 {
    beta_e / metric.lambda_min()
}

impl NofobProblem for FourOpSolver {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn forward_backward(&self, k: usize, x: &Point) -> Result<Point> {
        let prob = &self.problem;
        match &self.spec {
            KernelSpec::ScalarStep(g) => prob.forward_backward_step(g.value(k), x),
            KernelSpec::ScaledMetric { gamma, metric } => {
                let g = gamma.value(k);
                metric_resolvent(&prob.b, metric, g, &(metric.apply(x) - prob.e.apply(x) * g))
            }
            KernelSpec::BlockDiag { dims, weights } => {
                let rhs = self.apply_q(k, x) - prob.single_valued(x);
                let q: Vec<f64> = weights.iter().map(|w| w.value(k)).collect();
                let mut y = rhs;
                let mut start = 0;
                for (&d, &qi) in dims.iter().zip(&q) {
                    y.rows_mut(start, d).unscale_mut(qi);
                    start += d;
                }
                if prob.b.is_zero() {
                    return Ok(y);
                }
                let steps: Vec<f64> = q.iter().map(|qi| 1.0 / qi).collect();
                prob.b.resolvent_blockwise(&steps, &y)
            }
            KernelSpec::AffinePlusSkew { .. } => {
                let rhs = self.apply_q(k, x) - prob.single_valued(x);
                self.triangular.as_ref().expect("configured").solve(&prob.b, &rhs)
            }
            KernelSpec::SeparableNonlinear(kernel) => {
                let rhs = kernel.apply(x) - prob.single_valued(x);
                separable_nonlinear_resolvent(kernel, self.parts.as_ref().expect("configured"), &rhs, RESOLVENT_TOL)
            }
        }
    }

    fn kernel(&self, k: usize, x: &Point) -> Point {
        self.apply_q(k, x) - self.problem.lipschitz_part(x)
    }

    fn kernel_difference(&self, k: usize, x: &Point, y: &Point) -> Point {
        let q = match &self.spec {
            KernelSpec::SeparableNonlinear(kernel) => kernel.apply(x) - kernel.apply(y),
            _ => self.apply_q(k, &(x - y)),
        };
        q - self.problem.lipschitz_increment(x, y)
    }

    fn metric_p(&self) -> &SpdMetric {
        &self.p
    }

    fn metric_s(&self) -> &SpdMetric {
        &self.s
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn kernel_lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// `x_hat = (Q_k + B)^{-1}(Q_k - D - K - E) x`.
pub fn four_op_fb(prob: &FourOpProblem, spec: &KernelSpec, k: usize, x: &Point) -> Result<Point> {
    FourOpSolver::new(prob.clone(), spec.clone())?.forward_backward(k, x)
}

/// One explicit-projection iteration of the configured four-operator method.
pub fn four_op_iterate(solver: &FourOpSolver, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
    nofob_iterate(solver, k, x, theta)
}

/// Long-step iteration with `Q_k = gamma^{-1} I`, written out directly.
pub fn gamma_iterate(
    prob: &FourOpProblem,
    gamma: f64,
    k: usize,
    x: &Point,
    theta: f64,
    s: &SpdMetric,
) -> Result<IterRecord> {
    if !(theta > 0.0 && theta < 2.0) {
        return invalid(format!("theta must lie in (0, 2), got {theta}"));
    }
    if !(gamma > 0.0) {
        return invalid(format!("step must be positive, got {gamma}"));
    }
    let x_hat = prob.forward_backward_step(gamma, x)?;
    let d = x - &x_hat;
    let v = &d / gamma - prob.lipschitz_increment(x, &x_hat);
    let psi_at_x = v.dot(&d) - 0.25 * prob.beta_e() * d.norm_squared();
    let normal_inv_norm = s.inv_norm(&v);
    let residual_s = s.norm(&d);
    let (mu, x_next) = if residual_s <= COINCIDENCE_TOL * (1.0 + s.norm(x)) {
        (0.0, x.clone())
    } else {
        let mu = psi_at_x / (normal_inv_norm * normal_inv_norm);
        (mu, x - s.solve(&v) * (theta * mu))
    };
    Ok(IterRecord {
        k,
        x: x.clone(),
        x_hat,
        x_next,
        mu,
        mu_hat: None,
        theta,
        residual_s,
        psi_at_x,
        normal_inv_norm,
    })
}

/// Conservative iteration `x+ = x_hat - gamma ((D + K) x_hat - (D + K) x)`.
///
/// Recorded as the short step `mu_hat = gamma / (2 - delta)` with relaxation
/// `2 - delta` and `S = I`; `mu` holds the explicit step for comparison.
pub fn conservative_iterate(prob: &FourOpProblem, gamma: f64, k: usize, x: &Point) -> Result<IterRecord> {
    let (_, delta) = conservative_delta(prob, gamma)?;
    let x_hat = prob.forward_backward_step(gamma, x)?;
    let x_next = &x_hat - prob.lipschitz_increment(&x_hat, x) * gamma;
    let d = x - &x_hat;
    let v = &d / gamma - prob.lipschitz_increment(x, &x_hat);
    let psi_at_x = v.dot(&d) - 0.25 * prob.beta_e() * d.norm_squared();
    let residual_s = d.norm();
    let normal_inv_norm = v.norm();
    let mu = if residual_s <= COINCIDENCE_TOL * (1.0 + x.norm()) {
        0.0
    } else {
        psi_at_x / (normal_inv_norm * normal_inv_norm)
    };
    Ok(IterRecord {
        k,
        x: x.clone(),
        x_hat,
        x_next,
        mu,
        mu_hat: Some(gamma / (2.0 - delta)),
        theta: 2.0 - delta,
        residual_s,
        psi_at_x,
        normal_inv_norm,
    })
}

/// `(eps, delta)` used by the conservative step: `eps` is the slack of `gamma`
/// against the conservative bound, clamped to `[1e-3, 0.99]` and shrunk until
/// the `delta` hypothesis holds. Without `D`, `E` and `K` the step is exact and
/// `delta = 1`.
pub fn conservative_delta(prob: &FourOpProblem, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return invalid(format!("step must be positive, got {gamma}"));
    }
    let (beta_e, l_d, k_norm) = (prob.beta_e(), prob.l_d(), prob.k_norm());
    if beta_e + l_d + k_norm == 0.0 {
        // M = I / gamma gives mu = gamma exactly: delta = 1 means theta = 1, mu_hat = gamma
        return Ok((gamma.min(1.0 / gamma).clamp(1e-3, 0.99), 1.0));
    }
    let root = (beta_e * beta_e + 16.0 * (l_d + k_norm).powi(2)).sqrt();
    let slack = (4.0 - gamma * (beta_e + root)).min(1.0 / gamma).min(gamma);
    let mut eps = slack.clamp(1e-3, 0.99);
    while 1.0 / eps < beta_e * l_d * eps / (2.0 * (1.0 - eps)) {
        eps *= 0.5;
    }
    epsbar_delta(eps, beta_e, l_d, k_norm).map(|(_, delta)| (eps, delta))
}

/// `mu^{x,y}` of the `gamma^{-1} I - D - K` kernel with `S = I`.
pub fn mu_pair(prob: &FourOpProblem, gamma: f64, x: &Point, y: &Point) -> f64 {
    let d = x - y;
    let v = &d / gamma - prob.lipschitz_increment(x, y);
    (v.dot(&d) - 0.25 * prob.beta_e() * d.norm_squared()) / v.norm_squared()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return invalid(format!("eps must lie in (0, 1), got {eps}"));
    }
    Ok(())
}

/// `a / b` with `a / 0 = inf`.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

/// Long-step bound `min{(4 - eps) / (beta_E + 4 L_D), 1 / eps}`.
pub fn gamma_bound_long(beta_e: f64, l_d: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(ratio(4.0 - eps, beta_e + 4.0 * l_d).min(1.0 / eps))
}

/// Conservative bound `min{(4 - eps) / (beta_E + sqrt(beta_E^2 + 16 (L_D + ||K||)^2)), 1 / eps}`.
pub fn gamma_bound_conservative(beta_e: f64, l_d: f64, k_norm: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let root = (beta_e * beta_e + 16.0 * (l_d + k_norm).powi(2)).sqrt();
    Ok(ratio(4.0 - eps, beta_e + root).min(1.0 / eps))
}

/// `(eps_bar, delta)` such that `gamma / (2 - delta)` is a valid conservative step.
pub fn epsbar_delta(eps: f64, beta_e: f64, l_d: f64, k_norm: f64) -> Result<(f64, f64)> {
    check_eps(eps)?;
    if 1.0 / eps < beta_e * l_d * eps / (2.0 * (1.0 - eps)) {
        return invalid(format!("eps = {eps} violates 1/eps >= beta_E L_D eps / (2 (1 - eps))"));
    }
    let root = (beta_e * beta_e + 16.0 * (l_d + k_norm).powi(2)).sqrt();
    let eps_bar = eps * ((8.0 - eps) * root + eps * beta_e) / (4.0 * (8.0 - eps));
    let delta = eps_bar / (2.0 * (1.0 / eps + l_d + k_norm - beta_e * l_d * eps / (4.0 * (1.0 - eps))));
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Contract(format!("delta = {delta} outside (0, 1)")));
    }
    Ok((eps_bar, delta))
}

/// `beta_E / (gamma_max^{-1} - L_D)`, where `gamma_max^{-1} = inf_k gamma_k^{-1}`.
pub fn beta_effective(beta_e: f64, gamma_max: f64, l_d: f64) -> Result<f64> {
    let p = 1.0 / gamma_max - l_d;
    if !(p > 0.0) {
        return invalid(format!(
            "1/gamma = {} does not exceed L_D = {l_d}; P is not positive definite",
            1.0 / gamma_max
        ));
    }
    Ok(beta_e / p)
}

/// `gamma^{-1} + L_D + ||K||`.
pub fn kernel_lipschitz(gamma: f64, l_d: f64, k_norm: f64) -> f64 {
    debug_assert!(gamma > 0.0);
    1.0 / gamma + l_d + k_norm
}

/// Whether `theta_k mu_k = 1` is admissible:
/// `(1 - beta/4) P - (Q - K)^T S^{-1} (Q - K) / (2 - eps_theta)` is positive semidefinite.
pub fn afba_fixed_step_check(
    p: &SpdMetric,
    q: &DMatrix<f64>,
    k: &SkewMap,
    s: &SpdMetric,
    beta: f64,
    eps_theta: f64,
) -> bool {
    let n = p.dim();
    if q.nrows() != n || q.ncols() != n || k.dim() != n || s.dim() != n {
        return false;
    }
    let qk = q - k.matrix();
    let mut sinv_qk = qk.clone();
    for j in 0..n {
        let col = s.solve(&qk.column(j).into_owned());
        sinv_qk.set_column(j, &col);
    }
    let x = p.matrix() * (1.0 - beta / 4.0) - qk.transpose() * sinv_qk / (2.0 - eps_theta);
    let sym = (&x + x.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min() >= -1e-10
}

/// Chambolle-Pock metric `[[sigma^{-1} I, L], [L^T, tau^{-1} I]]` on `(w, x)`;
/// positive definite iff `sigma tau ||L||^2 < 1`.
pub fn chambolle_pock_metric(l: &DMatrix<f64>, sigma: f64, tau: f64) -> Result<SpdMetric> {
    if !(sigma > 0.0 && tau > 0.0) {
        return invalid("Chambolle-Pock steps must be positive");
    }
    let (m, n) = l.shape();
    let mut p = DMatrix::zeros(m + n, m + n);
    p.view_mut((0, 0), (m, m)).fill_diagonal(1.0 / sigma);
    p.view_mut((m, m), (n, n)).fill_diagonal(1.0 / tau);
    p.view_mut((0, m), (m, n)).copy_from(l);
    p.view_mut((m, 0), (n, m)).copy_from(&l.transpose());
    Ok(SpdMetric::new(p)?)
}

/// Relaxed forward-backward step in the metric `M`:
/// `x+ = (1 - a) x + a (M + gamma B)^{-1}(M - gamma E) x` with
/// `a = theta (1 - beta_M gamma / 4)` and `beta_M` the cocoercivity constant of `E` w.r.t. `M`.
pub fn fbs_relaxed_iterate(
    b: &ProxOperator,
    e: &CocoerciveMap,
    m: &SpdMetric,
    gamma: f64,
    theta: f64,
    x: &Point,
) -> Result<Point> {
    if !(gamma > 0.0) {
        return invalid(format!("step must be positive, got {gamma}"));
    }
    let beta_m = metric_cocoercivity(e.inverse_cocoercivity(), m);
    let a = theta * (1.0 - beta_m * gamma / 4.0);
    let y = metric_resolvent(b, m, gamma, &(m.apply(x) - e.apply(x) * gamma))?;
    Ok(x * (1.0 - a) + y * a)
}

/// Relaxation for the metric FBS step: the unrelaxed `4 / (4 - beta_M gamma)` when it
/// lies in `[eps_theta, 2 - eps_theta]`, otherwise the nearest admissible value.
pub fn fbs_theta(beta_m: f64, gamma: f64, eps_theta: f64) -> f64 {
    let plain = 4.0 / (4.0 - beta_m * gamma);
    if plain.is_finite() && plain > 0.0 {
        plain.clamp(eps_theta, 2.0 - eps_theta)
    } else {
        2.0 - eps_theta
    }
}

/// Shared record builder for callers that compute `x_hat` themselves.
pub fn four_op_record(
    solver: &FourOpSolver,
    k: usize,
    x: &Point,
    x_hat: Point,
    theta: f64,
    mu_hat: Option<f64>,
) -> Result<IterRecord> {
    assemble_record(solver, k, x, x_hat, theta, mu_hat)
}
