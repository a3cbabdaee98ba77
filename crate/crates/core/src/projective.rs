//! Synchronous projective splitting for `0 ∈ Σ_i L_i^* A_i(L_i x) + A_n x`.
//!
//! The primal-dual point `p = (w_1, ..., w_{n-1}, x)` solves
//! `0 ∈ B p + K p` with `B = (A_1^{-1}, ..., A_{n-1}^{-1}, A_n)` and `K` the
//! skew coupling built from the `L_i`. The resolvent formulation runs the
//! four-operator step with `Q = blockdiag(tau_1 I, ..., tau_{n-1} I, tau_n^{-1} I)`;
//! the explicit formulation evaluates the same step through primal resolvents only.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::four_op::{FourOpProblem, FourOpSolver, KernelSpec};
use crate::linalg::Point;
use crate::nofob::{IterRecord, Iteration, Schedule, COINCIDENCE_TOL};
use crate::operators::{CocoerciveMap, LipschitzMap, ProxOperator, SkewMap};

const MAX_BLOCKS: usize = 8;
const MAX_BLOCK_DIM: usize = 100;
const GRAPH_TOL: f64 = 1e-10;

/// `p = (w_1, ..., w_{n-1}, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdPoint {
    pub duals: Vec<Point>,
    pub primal: Point,
}

impl PdPoint {
    pub fn zeros(ps: &PsProblem) -> Self {
        PdPoint {
            duals: ps.dual_dims().iter().map(|&m| Point::zeros(m)).collect(),
            primal: Point::zeros(ps.primal_dim()),
        }
    }

    pub fn stack(&self) -> Point {
        let parts: Vec<f64> = self
            .duals
            .iter()
            .chain(std::iter::once(&self.primal))
            .flat_map(|v| v.iter().copied())
            .collect();
        Point::from_vec(parts)
    }

    pub fn unstack(ps: &PsProblem, p: &Point) -> Result<Self> {
        if p.len() != ps.total_dim() {
            return invalid(format!("stacked point has length {}, expected {}", p.len(), ps.total_dim()));
        }
        let mut start = 0;
        let mut duals = Vec::with_capacity(ps.l_maps.len());
        for &m in &ps.dual_dims() {
            duals.push(p.rows(start, m).into_owned());
            start += m;
        }
        Ok(PdPoint {
            duals,
            primal: p.rows(start, ps.primal_dim()).into_owned(),
        })
    }
}

/// Operators `A_1..A_n`, couplings `L_1..L_{n-1}` and step schedules `tau_1..tau_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsProblem {
    a_ops: Vec<ProxOperator>,
    l_maps: Vec<DMatrix<f64>>,
    taus: Vec<Schedule>,
}

impl PsProblem {
    pub fn new(a_ops: Vec<ProxOperator>, l_maps: Vec<DMatrix<f64>>, taus: Vec<Schedule>) -> Result<Self> {
        let n = a_ops.len();
        if !(2..=MAX_BLOCKS).contains(&n) {
            return invalid(format!("projective splitting needs 2 to {MAX_BLOCKS} operators, got {n}"));
        }
        if l_maps.len() != n - 1 || taus.len() != n {
            return invalid(format!(
                "{n} operators need {} coupling maps and {n} step schedules, got {} and {}",
                n - 1,
                l_maps.len(),
                taus.len()
            ));
        }
        let primal = l_maps[0].ncols();
        for (i, l) in l_maps.iter().enumerate() {
            if l.ncols() != primal || l.nrows() == 0 || primal == 0 {
                return invalid(format!("coupling map {i} is {}x{}, primal dimension is {primal}", l.nrows(), l.ncols()));
            }
            if l.nrows() > MAX_BLOCK_DIM || primal > MAX_BLOCK_DIM {
                return invalid(format!("block dimensions are limited to {MAX_BLOCK_DIM}"));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return invalid(format!("coupling map {i} is not finite"));
            }
        }
        for t in &taus {
            t.check_positive()?;
        }
        Ok(PsProblem { a_ops, l_maps, taus })
    }

    pub fn with_taus(mut self, taus: Vec<Schedule>) -> Result<Self> {
        if taus.len() != self.a_ops.len() {
            return invalid("one step schedule per operator is required");
        }
        for t in &taus {
            t.check_positive()?;
        }
        self.taus = taus;
        Ok(self)
    }

    pub fn n_ops(&self) -> usize {
        self.a_ops.len()
    }

    pub fn a_ops(&self) -> &[ProxOperator] {
        &self.a_ops
    }

    pub fn l_maps(&self) -> &[DMatrix<f64>] {
        &self.l_maps
    }

    pub fn taus(&self) -> &[Schedule] {
        &self.taus
    }

    pub fn primal_dim(&self) -> usize {
        self.l_maps[0].ncols()
    }

    pub fn dual_dims(&self) -> Vec<usize> {
        self.l_maps.iter().map(|l| l.nrows()).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.dual_dims().iter().sum::<usize>() + self.primal_dim()
    }

    /// `Q_k` as block-diagonal weights: `tau_i` on duals, `1 / tau_n` on the primal.
    pub fn kernel_spec(&self) -> KernelSpec {
        let n = self.n_ops();
        let mut weights: Vec<Schedule> = self.taus[..n - 1].to_vec();
        weights.push(match self.taus[n - 1] {
            Schedule::Constant(t) => Schedule::Constant(1.0 / t),
            Schedule::Alternating(a, b) => Schedule::Alternating(1.0 / a, 1.0 / b),
        });
        let mut dims = self.dual_dims();
        dims.push(self.primal_dim());
        KernelSpec::BlockDiag { dims, weights }
    }

    /// `0 ∈ B p + K p` as a four-operator problem with `D = E = 0`.
    pub fn four_op_problem(&self) -> Result<FourOpProblem> {
        let (b, k) = stack_primal_dual(self)?;
        let n = self.total_dim();
        FourOpProblem::new(b, LipschitzMap::zero(n), CocoerciveMap::zero(n), k)
    }

    /// The resolvent formulation as a configured four-operator solver (`S = I`).
    pub fn solver(&self) -> Result<FourOpSolver> {
        FourOpSolver::new(self.four_op_problem()?, self.kernel_spec())
    }
}

/// `B = (A_1^{-1}, ..., A_{n-1}^{-1}, A_n)` and `K` with `-L_i` in the last block
/// column and `L_i^T` in the last block row.
pub fn stack_primal_dual(ps: &PsProblem) -> Result<(ProxOperator, SkewMap)> {
    let n = ps.n_ops();
    let dims = ps.dual_dims();
    let primal = ps.primal_dim();
    let total = ps.total_dim();
    let mut blocks: Vec<(usize, ProxOperator)> = dims
        .iter()
        .zip(&ps.a_ops[..n - 1])
        .map(|(&m, a)| (m, a.clone().inverse()))
        .collect();
    blocks.push((primal, ps.a_ops[n - 1].clone()));
    let mut k = DMatrix::zeros(total, total);
    let mut start = 0;
    for (l, &m) in ps.l_maps.iter().zip(&dims) {
        k.view_mut((start, total - primal), (m, primal)).copy_from(&(-l));
        k.view_mut((total - primal, start), (primal, m)).copy_from(&l.transpose());
        start += m;
    }
    Ok((ProxOperator::blocks(blocks), SkewMap::new(k)?))
}

/// `J_{tau^{-1} A^{-1}}(tau^{-1} z)`, computed as `(z - J_{tau A}(z)) / tau`.
pub fn moreau_dual_resolvent(prox: &ProxOperator, tau: f64, z: &Point) -> Result<Point> {
    if !(tau > 0.0) {
        return invalid(format!("step must be positive, got {tau}"));
    }
    Ok((z - prox.resolvent(tau, z)?) / tau)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 2.0) {
        return invalid(format!("theta must lie in (0, 2), got {theta}"));
    }
    Ok(())
}

fn check_point(ps: &PsProblem, p: &PdPoint) -> Result<()> {
    if p.duals.len() != ps.l_maps.len()
        || p.duals.iter().zip(ps.dual_dims()).any(|(w, m)| w.len() != m)
        || p.primal.len() != ps.primal_dim()
    {
        return invalid("primal-dual point does not match the problem's block dimensions");
    }
    Ok(())
}

/// `Σ_i L_i^T w_i`.
fn adjoint_sum(ps: &PsProblem, w: &[Point]) -> Point {
    ps.l_maps
        .iter()
        .zip(w)
        .fold(Point::zeros(ps.primal_dim()), |acc, (l, wi)| acc + l.tr_mul(wi))
}

/// Record on the stacked vector with `S = I`: `mu = psi / ||v||^2`, `p+ = p - theta mu v`.
fn ps_record(k: usize, p: Point, p_hat: Point, v: Point, psi: f64, theta: f64) -> Result<IterRecord> {
    let residual_s = (&p - &p_hat).norm();
    let normal_inv_norm = v.norm();
    let (mu, x_next) = if residual_s <= COINCIDENCE_TOL * (1.0 + p.norm()) {
        (0.0, p.clone())
    } else {
        if normal_inv_norm == 0.0 {
            return Err(Error::Contract(format!("degenerate projection normal at iteration {k}")));
        }
        let mu = psi / (normal_inv_norm * normal_inv_norm);
        (mu, &p - &v * (theta * mu))
    };
    Ok(IterRecord {
        k,
        x: p,
        x_hat: p_hat,
        x_next,
        mu,
        mu_hat: None,
        theta,
        residual_s,
        psi_at_x: psi,
        normal_inv_norm,
    })
}

/// Resolvent formulation: `p_hat = (Q_k + B)^{-1}(Q_k - K) p`, then an explicit
/// projection with `S = I`.
pub fn ps_resolvent_iterate(ps: &PsProblem, k: usize, p: &PdPoint, theta: f64) -> Result<(PdPoint, IterRecord)> {
    check_theta(theta)?;
    check_point(ps, p)?;
    let n = ps.n_ops();
    let tau: Vec<f64> = ps.taus.iter().map(|t| t.value(k)).collect();
    let tau_n = tau[n - 1];
    let x = &p.primal;
    let w_hat = (0..n - 1)
        .map(|i| moreau_dual_resolvent(&ps.a_ops[i], tau[i], &(&p.duals[i] * tau[i] + &ps.l_maps[i] * x)))
        .collect::<Result<Vec<_>>>()?;
    let x_hat = ps.a_ops[n - 1].resolvent(tau_n, &(x - adjoint_sum(ps, &p.duals) * tau_n))?;
    let dw: Vec<Point> = p.duals.iter().zip(&w_hat).map(|(w, wh)| w - wh).collect();
    let dx = x - &x_hat;
    let mut normal_duals = Vec::with_capacity(n - 1);
    let mut psi = dx.norm_squared() / tau_n;
    for i in 0..n - 1 {
        normal_duals.push(&dw[i] * tau[i] + &ps.l_maps[i] * &dx);
        psi += tau[i] * dw[i].norm_squared();
    }
    let normal = PdPoint {
        duals: normal_duals,
        primal: &dx / tau_n - adjoint_sum(ps, &dw),
    };
    let p_hat = PdPoint {
        duals: w_hat,
        primal: x_hat,
    };
    let rec = ps_record(k, p.stack(), p_hat.stack(), normal.stack(), psi, theta)?;
    let next = PdPoint::unstack(ps, &rec.x_next)?;
    Ok((next, rec))
}

/// Explicit formulation through the primal resolvents `J_{tau_i A_i}` only.
///
/// Each `(v_hat_i, w_hat_i)` is checked against the graph of `A_i` when the
/// operator has a graph-distance oracle.
pub fn ps_explicit_iterate(ps: &PsProblem, k: usize, p: &PdPoint, theta: f64) -> Result<(PdPoint, IterRecord)> {
    check_theta(theta)?;
    check_point(ps, p)?;
    let n = ps.n_ops();
    let tau: Vec<f64> = ps.taus.iter().map(|t| t.value(k)).collect();
    let tau_n = tau[n - 1];
    let x = &p.primal;
    let lw = adjoint_sum(ps, &p.duals);
    let x_hat = ps.a_ops[n - 1].resolvent(tau_n, &(x - &lw * tau_n))?;
    let y_hat = (x / tau_n - &lw) - &x_hat / tau_n;
    let mut v_hat = Vec::with_capacity(n - 1);
    let mut w_hat = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let lx = &ps.l_maps[i] * x;
        let v = ps.a_ops[i].resolvent(tau[i], &(&lx + &p.duals[i] * tau[i]))?;
        let w = &p.duals[i] + (&lx - &v) / tau[i];
        if let Some(dist) = ps.a_ops[i].distance_to_image(&v, &w) {
            if dist > GRAPH_TOL * (1.0 + v.norm() + w.norm()) {
                return Err(Error::Contract(format!(
                    "block {i}: (v_hat, w_hat) leaves the graph of A_i by {dist:e}"
                )));
            }
        }
        v_hat.push(v);
        w_hat.push(w);
    }
    let t_star = &y_hat + adjoint_sum(ps, &w_hat);
    let t: Vec<Point> = (0..n - 1).map(|i| &v_hat[i] - &ps.l_maps[i] * &x_hat).collect();
    // Σ(<t_i, w_i> - <v_i, w_hat_i>) + <t*, x> - <y, x_hat> regrouped as <t, p - p_hat>;
    // the expanded sum cancels to nothing once p is close to p_hat.
    let mut num = t_star.dot(&(x - &x_hat));
    for i in 0..n - 1 {
        num += t[i].dot(&(&p.duals[i] - &w_hat[i]));
    }
    let normal = PdPoint {
        duals: t,
        primal: t_star,
    };
    let p_hat = PdPoint {
        duals: w_hat,
        primal: x_hat,
    };
    let rec = ps_record(k, p.stack(), p_hat.stack(), normal.stack(), num, theta)?;
    let next = PdPoint::unstack(ps, &rec.x_next)?;
    Ok((next, rec))
}

/// Which projective-splitting formulation to run on stacked points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsForm {
    Resolvent,
    Explicit,
}

/// Projective splitting as an [`Iteration`] on stacked vectors.
#[derive(Debug, Clone)]
pub struct PsIteration {
    pub problem: PsProblem,
    pub form: PsForm,
}

impl Iteration for PsIteration {
    fn step(&self, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
        let p = PdPoint::unstack(&self.problem, x)?;
        let (_, rec) = match self.form {
            PsForm::Resolvent => ps_resolvent_iterate(&self.problem, k, &p, theta)?,
            PsForm::Explicit => ps_explicit_iterate(&self.problem, k, &p, theta)?,
        };
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::four_op::four_op_iterate;
    use crate::operators::check_skew;
    use crate::rng::SeededRng;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn ps(a: Vec<ProxOperator>, l: Vec<DMatrix<f64>>, tau: f64) -> PsProblem {
        let n = a.len();
        PsProblem::new(a, l, vec![Schedule::Constant(tau); n]).unwrap()
    }

    fn lasso_saddle(seed: u64) -> (PsProblem, PdPoint) {
        let mut rng = SeededRng::new(seed);
        let l = rng.matrix(4, 3);
        let a1 = ProxOperator::Quadratic {
            hessian: DMatrix::identity(4, 4),
            linear: rng.vector(4),
        };
        let a2 = ProxOperator::L1 { weight: 0.2 };
        let prob = PsProblem::new(vec![a1, a2], vec![l], vec![Schedule::Constant(0.7), Schedule::Constant(1.3)]).unwrap();
        let p0 = PdPoint {
            duals: vec![rng.vector(4)],
            primal: rng.vector(3),
        };
        (prob, p0)
    }

    #[test]
    fn stacking_examples() {
        let zero = ps(vec![ProxOperator::Zero, ProxOperator::Zero], vec![DMatrix::zeros(2, 2)], 1.0);
        let (b, k) = stack_primal_dual(&zero).unwrap();
        assert!(k.is_zero());
        assert_eq!(b.block_dims(), Some(vec![2, 2]));
        let id = ps(vec![ProxOperator::Zero, ProxOperator::Zero], vec![DMatrix::identity(2, 2)], 1.0);
        let (_, k) = stack_primal_dual(&id).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        want.view_mut((0, 2), (2, 2)).fill_diagonal(-1.0);
        want.view_mut((2, 0), (2, 2)).fill_diagonal(1.0);
        assert_eq!(k.matrix(), &want);
        assert!(check_skew(k.matrix(), 100, 1) <= 1e-15);
    }

    #[test]
    fn stacking_three_blocks_entrywise() {
        let mut rng = SeededRng::new(8);
        let l1 = rng.matrix(2, 3);
        let l2 = rng.matrix(4, 3);
        let prob = ps(
            vec![ProxOperator::Zero, ProxOperator::L1 { weight: 1.0 }, ProxOperator::Zero],
            vec![l1.clone(), l2.clone()],
            1.0,
        );
        let (b, k) = stack_primal_dual(&prob).unwrap();
        assert_eq!(b.block_dims(), Some(vec![2, 4, 3]));
        let km = k.matrix();
        for r in 0..9 {
            for c in 0..9 {
                let want = match (r, c) {
                    (r, c) if r < 2 && c >= 6 => -l1[(r, c - 6)],
                    (r, c) if (2..6).contains(&r) && c >= 6 => -l2[(r - 2, c - 6)],
                    (r, c) if r >= 6 && c < 2 => l1[(c, r - 6)],
                    (r, c) if r >= 6 && (2..6).contains(&c) => l2[(c - 2, r - 6)],
                    _ => 0.0,
                };
                assert_eq!(km[(r, c)], want, "entry ({r}, {c})");
            }
        }
        assert!(check_skew(km, 1000, 2) <= 1e-12);
    }

    #[test]
    fn moreau_examples() {
        let z = p(&[3.0, -0.4]);
        assert_eq!(moreau_dual_resolvent(&ProxOperator::Zero, 2.0, &z).unwrap(), p(&[0.0, 0.0]));
        let l1 = ProxOperator::L1 { weight: 1.0 };
        assert_eq!(moreau_dual_resolvent(&l1, 1.0, &p(&[3.0])).unwrap(), p(&[1.0]));
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            let tau = rng.range(0.1, 5.0);
            let z = rng.vector(5) * 4.0;
            let dual = moreau_dual_resolvent(&l1, tau, &z).unwrap();
            let recon = l1.resolvent(tau, &z).unwrap() + dual * tau;
            assert!((recon - &z).amax() <= 1e-12);
        }
        assert!(moreau_dual_resolvent(&l1, 0.0, &z).is_err());
    }

    #[test]
    fn zero_problem_is_stationary() {
        let prob = ps(vec![ProxOperator::Zero, ProxOperator::Zero], vec![DMatrix::zeros(2, 3)], 1.0);
        // A_1 = 0 pins the dual to 0, so only w = 0 is stationary
        let pt = PdPoint {
            duals: vec![p(&[0.0, 0.0])],
            primal: p(&[0.5, 0.0, 3.0]),
        };
        let (next, rec) = ps_resolvent_iterate(&prob, 0, &pt, 1.0).unwrap();
        assert_eq!(next, pt);
        assert_eq!(rec.mu, 0.0);
        let (next, _) = ps_explicit_iterate(&prob, 0, &pt, 1.0).unwrap();
        assert_eq!(next, pt);
    }

    #[test]
    fn resolvent_step_matches_dense_solve() {
        let mut rng = SeededRng::new(4);
        let l = rng.matrix(2, 2);
        let prob = ps(vec![ProxOperator::Zero, ProxOperator::Zero], vec![l], 1.0);
        let (_, k) = stack_primal_dual(&prob).unwrap();
        let pt = PdPoint {
            duals: vec![rng.vector(2)],
            primal: rng.vector(2),
        };
        let stacked = pt.stack();
        // A_1 = 0 makes A_1^{-1} the normal cone of {0}: the dual block of p_hat is 0
        let mut want = &stacked - k.matrix() * &stacked;
        want.rows_mut(0, 2).fill(0.0);
        let (_, rec) = ps_resolvent_iterate(&prob, 0, &pt, 1.0).unwrap();
        assert!((&rec.x_hat - &want).amax() <= 1e-14);
        let both_zero = ps(vec![ProxOperator::Zero, ProxOperator::Zero], vec![DMatrix::identity(2, 2)], 1.0);
        let (_, rec) = ps_explicit_iterate(&both_zero, 0, &pt, 1.0).unwrap();
        let (_, rec2) = ps_resolvent_iterate(&both_zero, 0, &pt, 1.0).unwrap();
        assert!((&rec.x_next - &rec2.x_next).amax() <= 1e-14);
        assert_eq!(rec.x_hat.rows(0, 2).amax(), 0.0);
    }

    #[test]
    fn formulations_agree_and_match_four_op() {
        let (prob, p0) = lasso_saddle(11);
        let solver = prob.solver().unwrap();
        let (mut pa, mut pb) = (p0.clone(), p0.clone());
        let mut pc = p0.stack();
        for k in 0..200 {
            let (na, ra) = ps_resolvent_iterate(&prob, k, &pa, 1.0).unwrap();
            let (nb, rb) = ps_explicit_iterate(&prob, k, &pb, 1.0).unwrap();
            let rc = four_op_iterate(&solver, k, &pc, 1.0).unwrap();
            assert!((&ra.x_next - &rb.x_next).amax() <= 1e-10, "iteration {k}");
            assert!((&ra.x_next - &rc.x_next).amax() <= 1e-12, "iteration {k}");
            let scale = 1.0 + ra.psi_at_x.abs();
            assert!((ra.psi_at_x - rb.psi_at_x).abs() <= 1e-9 * scale);
            let den = ra.normal_inv_norm.powi(2);
            assert!((den - rb.normal_inv_norm.powi(2)).abs() <= 1e-9 * (1.0 + den));
            pa = na;
            pb = nb;
            pc = rc.x_next;
        }
    }

    #[test]
    fn solution_is_fixed_for_explicit_form() {
        let (prob, p0) = lasso_saddle(5);
        let it = PsIteration {
            problem: prob.clone(),
            form: PsForm::Resolvent,
        };
        let traj = crate::nofob::run(&it, &p0.stack(), &Schedule::Constant(1.0), 1e-13, 20_000).unwrap();
        assert_eq!(traj.status, crate::nofob::Status::Converged);
        let star = PdPoint::unstack(&prob, &traj.final_x).unwrap();
        let (next, rec) = ps_explicit_iterate(&prob, 0, &star, 1.0).unwrap();
        assert!((next.stack() - star.stack()).amax() <= 1e-11);
        assert!(rec.normal_inv_norm <= 1e-11);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(PsProblem::new(vec![ProxOperator::Zero], vec![], vec![Schedule::Constant(1.0)]).is_err());
        assert!(PsProblem::new(
            vec![ProxOperator::Zero, ProxOperator::Zero],
            vec![DMatrix::zeros(2, 2)],
            vec![Schedule::Constant(1.0), Schedule::Constant(0.0)]
        )
        .is_err());
        let prob = ps(vec![ProxOperator::Zero, ProxOperator::Zero], vec![DMatrix::zeros(2, 3)], 1.0);
        let bad = PdPoint {
            duals: vec![p(&[1.0])],
            primal: p(&[0.0, 0.0, 0.0]),
        };
        assert!(ps_resolvent_iterate(&prob, 0, &bad, 1.0).is_err());
        assert!(ps_explicit_iterate(&prob, 0, &PdPoint::zeros(&prob), 2.0).is_err());
    }
}
