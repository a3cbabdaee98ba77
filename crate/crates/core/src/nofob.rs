//! The generic NOFOB loop: a nonlinear forward-backward step followed by a
//! relaxed projection onto the separating halfspace it defines.
//!
//! For `x_hat = (M + A)^{-1}(M - C) x` the affine function
//! `psi_x(z) = <M x - M x_hat, z - x_hat> - (beta/4) ||x - x_hat||_P^2`
//! is nonpositive on `zer(A + C)` and, unless `x` solves the inclusion,
//! positive at `x`.

use std::fmt;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::{project_halfspace, Halfspace, Point, SpdMetric};

/// Relative tolerance below which `x` and `x_hat` are treated as equal.
pub const COINCIDENCE_TOL: f64 = 1e-14;
/// Default stopping tolerance on `||x_k - x_hat_k||_S`.
pub const DEFAULT_STOP_TOL: f64 = 1e-10;
/// Default margin keeping relaxation parameters inside `[eps, 2 - eps]`.
pub const DEFAULT_EPS_THETA: f64 = 0.05;

/// One instance of `0 ∈ A x + C x` together with the kernel `M_k` and metrics.
pub trait NofobProblem {
    fn dim(&self) -> usize;
    /// `x_hat = (M_k + A)^{-1} (M_k - C) x`.
    fn forward_backward(&self, k: usize, x: &Point) -> Result<Point>;
    /// `M_k x`.
    fn kernel(&self, k: usize, x: &Point) -> Point;
    /// `M_k x - M_k y`; linear kernels override this to avoid cancellation near `x = y`.
    fn kernel_difference(&self, k: usize, x: &Point, y: &Point) -> Point {
        self.kernel(k, x) - self.kernel(k, y)
    }
    /// Every `M_k` is 1-strongly monotone w.r.t. `||.||_P`.
    fn metric_p(&self) -> &SpdMetric;
    /// Projection metric.
    fn metric_s(&self) -> &SpdMetric;
    /// `C` is `1/beta`-cocoercive w.r.t. `||.||_P`, `beta ∈ [0, 4)`.
    fn beta(&self) -> f64;
    /// Uniform Lipschitz constant of the kernels.
    fn kernel_lipschitz(&self) -> f64;
}

/// A problem assembled from closures, mainly for tests and small experiments.
pub struct FnProblem<F, G> {
    dim: usize,
    fb: F,
    kernel: G,
    p: SpdMetric,
    s: SpdMetric,
    beta: f64,
    lipschitz: f64,
}

impl<F, G> FnProblem<F, G>
where
    F: Fn(usize, &Point) -> Result<Point>,
    G: Fn(usize, &Point) -> Point,
{
    pub fn new(fb: F, kernel: G, p: SpdMetric, s: SpdMetric, beta: f64, lipschitz: f64) -> Result<Self> {
        if !(0.0..4.0).contains(&beta) {
            return invalid(format!("beta must lie in [0, 4), got {beta}"));
        }
        if p.dim() != s.dim() {
            return invalid("P and S dimensions differ");
        }
        if !(lipschitz > 0.0) {
            return invalid("kernel Lipschitz constant must be positive");
        }
        Ok(FnProblem {
            dim: p.dim(),
            fb,
            kernel,
            p,
            s,
            beta,
            lipschitz,
        })
    }
}

impl<F, G> NofobProblem for FnProblem<F, G>
where
    F: Fn(usize, &Point) -> Result<Point>,
    G: Fn(usize, &Point) -> Point,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn forward_backward(&self, k: usize, x: &Point) -> Result<Point> {
        (self.fb)(k, x)
    }
    fn kernel(&self, k: usize, x: &Point) -> Point {
        (self.kernel)(k, x)
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

/// Quantities of one NOFOB iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub k: usize,
    pub x: Point,
    pub x_hat: Point,
    pub x_next: Point,
    /// Explicit projection step `mu_k`; 0 when `x = x_hat`.
    pub mu: f64,
    /// Conservative step actually used in place of `mu`, if any.
    pub mu_hat: Option<f64>,
    pub theta: f64,
    /// `||x - x_hat||_S`.
    pub residual_s: f64,
    /// `psi_x(x)`.
    pub psi_at_x: f64,
    /// `||M_k x - M_k x_hat||_{S^{-1}}`.
    pub normal_inv_norm: f64,
}

impl IterRecord {
    /// Relaxation of the projection onto `H_k` that the update realizes.
    pub fn effective_theta(&self) -> f64 {
        match self.mu_hat {
            Some(h) if self.mu > 0.0 => self.theta * h / self.mu,
            _ => self.theta,
        }
    }

    /// `||x - Π_{H_k} x||_S`.
    pub fn projection_gap(&self) -> f64 {
        self.mu * self.normal_inv_norm
    }
}

/// Relaxation (or step) parameter sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Schedule {
    Constant(f64),
    /// `a` on even iterations, `b` on odd ones.
    Alternating(f64, f64),
}

impl Schedule {
    pub fn value(&self, k: usize) -> f64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Alternating(a, b) => {
                if k % 2 == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }

    pub fn min(&self) -> f64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Alternating(a, b) => a.min(b),
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Alternating(a, b) => a.max(b),
        }
    }

    /// Accepts relaxation schedules inside `[eps_theta, 2 - eps_theta]`.
    pub fn check_relaxation(&self, eps_theta: f64) -> Result<()> {
        if !(eps_theta > 0.0 && eps_theta < 1.0) {
            return invalid(format!("eps_theta must lie in (0, 1), got {eps_theta}"));
        }
        if self.min() < eps_theta || self.max() > 2.0 - eps_theta || !self.min().is_finite() {
            return invalid(format!(
                "relaxation {self:?} leaves [{eps_theta}, {}]",
                2.0 - eps_theta
            ));
        }
        Ok(())
    }

    /// Accepts step schedules with finite positive values.
    pub fn check_positive(&self) -> Result<()> {
        if !(self.min() > 0.0) || !self.max().is_finite() {
            return invalid(format!("step schedule {self:?} must be finite and positive"));
        }
        Ok(())
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 2.0) {
        return invalid(format!("theta must lie in (0, 2), got {theta}"));
    }
    Ok(())
}

/// `mu_k` of the explicit projection. Errors when `M x = M x_hat`.
pub fn mu_explicit<P: NofobProblem + ?Sized>(prob: &P, k: usize, x: &Point, x_hat: &Point) -> Result<f64> {
    let d = x - x_hat;
    let v = prob.kernel_difference(k, x, x_hat);
    let denom = prob.metric_s().inv_norm_squared(&v);
    if denom == 0.0 {
        return Err(Error::Contract("mu is 0/0: x coincides with x_hat".into()));
    }
    let num = v.dot(&d) - 0.25 * prob.beta() * prob.metric_p().norm_squared(&d);
    Ok(num / denom)
}

/// `psi_x(z)`.
pub fn psi_value<P: NofobProblem + ?Sized>(prob: &P, k: usize, x: &Point, x_hat: &Point, z: &Point) -> f64 {
    let v = prob.kernel_difference(k, x, x_hat);
    let d = x - x_hat;
    v.dot(&(z - x_hat)) - 0.25 * prob.beta() * prob.metric_p().norm_squared(&d)
}

/// Builds the record for a known `x_hat`. `mu_hat` replaces `mu` in the update.
pub fn assemble_record<P: NofobProblem + ?Sized>(
    prob: &P,
    k: usize,
    x: &Point,
    x_hat: Point,
    theta: f64,
    mu_hat: Option<f64>,
) -> Result<IterRecord> {
    let s = prob.metric_s();
    let d = x - &x_hat;
    let residual_s = s.norm(&d);
    let v = prob.kernel_difference(k, x, &x_hat);
    let psi_at_x = v.dot(&d) - 0.25 * prob.beta() * prob.metric_p().norm_squared(&d);
    let normal_inv_norm = s.inv_norm(&v);
    let coincident = residual_s <= COINCIDENCE_TOL * (1.0 + s.norm(x));
    let (mu, x_next) = if coincident {
        (0.0, x.clone())
    } else {
        if normal_inv_norm == 0.0 {
            return Err(Error::Contract(format!(
                "kernel is not injective at iteration {k}: M x = M x_hat with x != x_hat"
            )));
        }
        let mu = psi_at_x / (normal_inv_norm * normal_inv_norm);
        let step = theta * mu_hat.unwrap_or(mu);
        (mu, x - s.solve(&v) * step)
    };
    Ok(IterRecord {
        k,
        x: x.clone(),
        x_hat,
        x_next,
        mu,
        mu_hat,
        theta,
        residual_s,
        psi_at_x,
        normal_inv_norm,
    })
}

/// Explicit-projection iteration: `x+ = x - theta mu S^{-1}(M x - M x_hat)`.
pub fn nofob_iterate<P: NofobProblem + ?Sized>(prob: &P, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
    check_theta(theta)?;
    let x_hat = prob.forward_backward(k, x)?;
    assemble_record(prob, k, x, x_hat, theta, None)
}

/// Halfspace form: the relaxed `S`-projection of `x` onto `H_k`.
pub fn nofob_halfspace_iterate<P: NofobProblem + ?Sized>(prob: &P, k: usize, x: &Point, theta: f64) -> Result<Point> {
    check_theta(theta)?;
    let x_hat = prob.forward_backward(k, x)?;
    let d = x - &x_hat;
    let normal = prob.kernel_difference(k, x, &x_hat);
    let rhs = 0.25 * prob.beta() * prob.metric_p().norm_squared(&d);
    let h = Halfspace::new(normal, x_hat, rhs);
    let proj = project_halfspace(prob.metric_s(), &h, x)?;
    Ok(x + (proj - x) * theta)
}

/// Conservative-step iteration: `x+ = x - theta mu_hat S^{-1}(M x - M x_hat)`.
pub fn nofob_conservative_iterate<P: NofobProblem + ?Sized>(
    prob: &P,
    k: usize,
    x: &Point,
    theta: f64,
    mu_hat: f64,
) -> Result<IterRecord> {
    check_theta(theta)?;
    if !(mu_hat > 0.0) || !mu_hat.is_finite() {
        return invalid(format!("mu_hat must be positive, got {mu_hat}"));
    }
    let x_hat = prob.forward_backward(k, x)?;
    assemble_record(prob, k, x, x_hat, theta, Some(mu_hat))
}

/// A single-step rule driven by `run`.
pub trait Iteration {
    fn step(&self, k: usize, x: &Point, theta: f64) -> Result<IterRecord>;
}

/// Explicit projection on a borrowed problem.
pub struct Explicit<'a, P: ?Sized>(pub &'a P);

impl<P: NofobProblem + ?Sized> Iteration for Explicit<'_, P> {
    fn step(&self, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
        nofob_iterate(self.0, k, x, theta)
    }
}

/// Conservative step on a borrowed problem.
pub struct Conservative<'a, P: ?Sized> {
    pub problem: &'a P,
    pub mu_hat: Schedule,
}

impl<P: NofobProblem + ?Sized> Iteration for Conservative<'_, P> {
    fn step(&self, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
        nofob_conservative_iterate(self.problem, k, x, theta, self.mu_hat.value(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    Error,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::Error => "error",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<IterRecord>,
    pub final_x: Point,
    pub status: Status,
    pub error: Option<Error>,
}

impl Trajectory {
    /// First iteration whose residual is at most `tol`.
    pub fn steps_to_tolerance(&self, tol: f64) -> Option<usize> {
        self.records.iter().position(|r| r.residual_s <= tol)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual_s).collect()
    }

    /// Iterate `x_{k+1}` following record `k`.
    pub fn next_iterate(&self, k: usize) -> &Point {
        match self.records.get(k + 1) {
            Some(r) => &r.x,
            None => &self.final_x,
        }
    }
}

/// Iterates until `||x_k - x_hat_k||_S <= tol` or `max_iter` records.
///
/// Each iteration is recorded before the stopping test, so a starting point
/// that already solves the problem yields one record.
pub fn run(alg: &dyn Iteration, x0: &Point, theta: &Schedule, tol: f64, max_iter: usize) -> Result<Trajectory> {
    if max_iter == 0 {
        return invalid("max_iter must be at least 1");
    }
    if !(tol > 0.0) {
        return invalid(format!("stopping tolerance must be positive, got {tol}"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return invalid("starting point is not finite");
    }
    let mut records = Vec::new();
    let mut x = x0.clone();
    for k in 0..max_iter {
        let rec = match alg.step(k, &x, theta.value(k)) {
            Ok(r) => r,
            Err(e) => return Ok(failed(records, x, e)),
        };
        if rec.x_next.iter().any(|v| !v.is_finite()) || !rec.residual_s.is_finite() {
            return Ok(failed(records, x, Error::NonFinite { iter: k }));
        }
        let done = rec.residual_s <= tol;
        x = rec.x_next.clone();
        records.push(rec);
        if done {
            return Ok(Trajectory {
                records,
                final_x: x,
                status: Status::Converged,
                error: None,
            });
        }
    }
    Ok(Trajectory {
        records,
        final_x: x,
        status: Status::MaxIter,
        error: None,
    })
}

fn failed(records: Vec<IterRecord>, x: Point, e: Error) -> Trajectory {
    log::warn!("run stopped after {} iterations: {e}", records.len());
    Trajectory {
        records,
        final_x: x,
        status: Status::Error,
        error: Some(e),
    }
}
