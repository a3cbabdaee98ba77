//! Invariant checks over finished trajectories.
//!
//! Violations are normalized as `max(0, excess) / (1 + magnitude)` so that one
//! absolute tolerance covers iterates of any size.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Point, SpdMetric};
use crate::nofob::{psi_value, NofobProblem, Trajectory};

/// Default tolerance for every check.
pub const CHECK_TOL: f64 = 1e-9;
/// Tolerance on `mu` bounds.
pub const MU_TOL: f64 = 1e-10;
/// Tolerance on elementwise trajectory agreement.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub max_violation: f64,
    pub first_violating_iter: Option<usize>,
    pub passed: bool,
    pub tolerance: f64,
}

/// Folds per-iteration violations into a report.
struct Tally {
    name: String,
    tol: f64,
    worst: f64,
    first: Option<usize>,
}

impl Tally {
    fn new(name: &str, tol: f64) -> Self {
        Tally {
            name: name.to_string(),
            tol,
            worst: 0.0,
            first: None,
        }
    }

    fn add(&mut self, k: usize, violation: f64) {
        // NaN counts as a violation
        let v = if violation.is_nan() { f64::INFINITY } else { violation.max(0.0) };
        self.worst = self.worst.max(v);
        if v > self.tol && self.first.is_none() {
            self.first = Some(k);
        }
    }

    fn finish(self) -> CheckReport {
        CheckReport {
            passed: self.worst <= self.tol,
            name: self.name,
            max_violation: self.worst,
            first_violating_iter: self.first,
            tolerance: self.tol,
        }
    }
}

fn nonempty(traj: &Trajectory) -> Result<()> {
    if traj.records.is_empty() {
        return Err(Error::InsufficientData("trajectory has no iteration records".into()));
    }
    Ok(())
}

/// `||x_{k+1} - z||_S^2 - ||x_k - z||_S^2 + theta_k (2 - theta_k) ||x_k - Π_{H_k} x_k||_S^2 <= 0`,
/// with the gap reconstructed as `mu_k ||M_k x_k - M_k x_hat_k||_{S^{-1}}` and `theta_k`
/// the relaxation the update realizes.
pub fn check_fejer(traj: &Trajectory, z_star: &Point, s: &SpdMetric) -> Result<CheckReport> {
    nonempty(traj)?;
    let mut tally = Tally::new("fejer", CHECK_TOL);
    for (k, rec) in traj.records.iter().enumerate() {
        let before = s.norm_squared(&(&rec.x - z_star));
        let after = s.norm_squared(&(traj.next_iterate(k) - z_star));
        let theta = rec.effective_theta();
        let gap = rec.projection_gap().max(0.0);
        let excess = after - before + theta * (2.0 - theta) * gap * gap;
        tally.add(k, excess / (1.0 + before));
    }
    Ok(tally.finish())
}

/// Per iteration: `psi_{x_k}(x_k) >= (1 - beta/4) ||x_k - x_hat_k||_P^2` and
/// `psi_{x_k}(z*) <= 0`, with the kernel re-evaluated through `prob`.
pub fn check_separation<P: NofobProblem + ?Sized>(traj: &Trajectory, prob: &P, z_star: &Point) -> Result<CheckReport> {
    nonempty(traj)?;
    let mut tally = Tally::new("separation", CHECK_TOL);
    let beta = prob.beta();
    for rec in &traj.records {
        let d = &rec.x - &rec.x_hat;
        let v_norm = prob.kernel_difference(rec.k, &rec.x, &rec.x_hat).norm();
        let floor = (1.0 - beta / 4.0) * prob.metric_p().norm_squared(&d);
        let at_x = psi_value(prob, rec.k, &rec.x, &rec.x_hat, &rec.x);
        let at_z = psi_value(prob, rec.k, &rec.x, &rec.x_hat, z_star);
        // the inner products are formed at scale ||v|| ||z - x_hat||
        tally.add(rec.k, (floor - at_x) / (1.0 + v_norm * d.norm()));
        tally.add(rec.k, at_z / (1.0 + v_norm * (z_star - &rec.x_hat).norm()));
    }
    Ok(tally.finish())
}

/// Interval that every explicit `mu_k` must lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuBounds {
    pub lower: f64,
    pub upper: f64,
}

impl MuBounds {
    /// `[(1 - beta/4) lambda_min(P) / (L_M^2 lambda_max(S^{-1})), lambda_max(S) / lambda_min(P)]`.
    pub fn from_view<P: NofobProblem + ?Sized>(prob: &P) -> Self {
        let p = prob.metric_p();
        let s = prob.metric_s();
        let l = prob.kernel_lipschitz();
        MuBounds {
            lower: (1.0 - prob.beta() / 4.0) * p.lambda_min() / (l * l * s.lambda_max_inv()),
            upper: s.lambda_max() / p.lambda_min(),
        }
    }
}

/// Every recorded `mu_k` with `x_k != x_hat_k` lies in `bounds`.
pub fn check_mu_bounds(traj: &Trajectory, bounds: &MuBounds) -> Result<CheckReport> {
    nonempty(traj)?;
    let mut tally = Tally::new("mu_bounds", MU_TOL);
    for rec in &traj.records {
        if rec.mu == 0.0 {
            // x_k = x_hat_k: no projection took place
            continue;
        }
        let below = (bounds.lower - rec.mu) / bounds.lower.abs().max(1.0);
        let above = (rec.mu - bounds.upper) / bounds.upper.abs().max(1.0);
        tally.add(rec.k, below.max(above));
    }
    Ok(tally.finish())
}

/// `mu_hat_k <= mu_k` on every conservative record.
pub fn check_short_step(traj: &Trajectory) -> Result<CheckReport> {
    nonempty(traj)?;
    let mut tally = Tally::new("short_step", 1e-12);
    for rec in &traj.records {
        if let Some(h) = rec.mu_hat {
            if rec.mu > 0.0 {
                tally.add(rec.k, h - rec.mu);
            }
        }
    }
    Ok(tally.finish())
}

/// Largest elementwise gap between the iterates of two runs over their common length.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory) -> Result<CheckReport> {
    nonempty(a)?;
    nonempty(b)?;
    let mut tally = Tally::new("equivalence", EQUIVALENCE_TOL);
    for (k, (ra, rb)) in a.records.iter().zip(&b.records).enumerate() {
        if ra.x_next.len() != rb.x_next.len() {
            return Err(Error::Incompatible("trajectories live in different spaces".into()));
        }
        tally.add(k, (&ra.x_next - &rb.x_next).amax());
    }
    Ok(tally.finish())
}

/// Least-squares slope of `ln(residual)` against `k` over the last `tail_fraction`
/// of the run, and its `r^2`. Non-positive residuals are dropped.
pub fn fit_rate(residuals: &[f64], tail_fraction: f64) -> Result<(f64, f64)> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let start = residuals.len() - ((residuals.len() as f64 * tail_fraction).ceil() as usize).min(residuals.len());
    let pts: Vec<(f64, f64)> = residuals[start..]
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0 && r.is_finite())
        .map(|(i, r)| ((start + i) as f64, r.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs 10 positive tail residuals, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let r2 = if syy <= f64::EPSILON * n * (1.0 + my * my) {
        1.0
    } else {
        1.0 - ss_res / syy
    };
    Ok((slope, r2))
}

/// Negative control: shifts iterate `iter` by `shift` in every coordinate and
/// rewires the neighbouring records so the trajectory stays consistent.
pub fn corrupt_trajectory(traj: &Trajectory, iter: usize, shift: f64) -> Result<Trajectory> {
    if iter == 0 || iter >= traj.records.len() {
        return Err(Error::InvalidParameter(format!(
            "corruption index {iter} must lie in 1..{}",
            traj.records.len()
        )));
    }
    let mut out = traj.clone();
    out.records[iter].x.add_scalar_mut(shift);
    let moved = out.records[iter].x.clone();
    out.records[iter - 1].x_next = moved;
    Ok(out)
}

/// A kernel with the sign flipped, for the separation negative control.
pub struct NegatedKernel<'a, P: ?Sized>(pub &'a P);

impl<P: NofobProblem + ?Sized> NofobProblem for NegatedKernel<'_, P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn forward_backward(&self, k: usize, x: &Point) -> Result<Point> {
        self.0.forward_backward(k, x)
    }

    fn kernel(&self, k: usize, x: &Point) -> Point {
        -self.0.kernel(k, x)
    }
    fn kernel_difference(&self, k: usize, x: &Point, y: &Point) -> Point {
        -self.0.kernel_difference(k, x, y)
    }

    fn metric_p(&self) -> &SpdMetric {
        self.0.metric_p()
    }

    fn metric_s(&self) -> &SpdMetric {
        self.0.metric_s()
    }

    fn beta(&self) -> f64 {
        self.0.beta()
    }

    fn kernel_lipschitz(&self) -> f64 {
        self.0.kernel_lipschitz()
    }
}

/// Fixed-width table of reports.
pub fn render_table(reports: &[CheckReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>6} {:>14} {:>10} {:>12}", "check", "result", "max_violation", "first_iter", "tolerance");
    for r in reports {
        let first = r.first_violating_iter.map_or("-".to_string(), |k| k.to_string());
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>14.6e} {:>10} {:>12.1e}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_violation,
            first,
            r.tolerance
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::four_op::{FourOpSolver, KernelSpec};
    use crate::nofob::{run, Explicit, Schedule, Status};
    use crate::problems::make_regularized_quadratic;
    use crate::problems::Split;

    fn regquad_run() -> (crate::problems::ProblemInstance, FourOpSolver, Trajectory) {
        let inst = make_regularized_quadratic(8, 0.1, 3, Split::Full).unwrap();
        let solver = FourOpSolver::new(inst.problem.clone(), KernelSpec::ScalarStep(Schedule::Constant(0.2))).unwrap();
        let traj = run(&Explicit(&solver), &inst.default_x0(), &Schedule::Constant(1.0), 1e-10, 5000).unwrap();
        assert_eq!(traj.status, Status::Converged);
        (inst, solver, traj)
    }

    #[test]
    fn stationary_trajectory_passes() {
        let (inst, solver, _) = regquad_run();
        let traj = run(&Explicit(&solver), &inst.oracle, &Schedule::Constant(1.0), 1e-8, 10).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert!(check_fejer(&traj, &inst.oracle, &SpdMetric::identity(8)).unwrap().passed);
        assert!(check_separation(&traj, &solver, &inst.oracle).unwrap().passed);
        assert!(check_mu_bounds(&traj, &MuBounds::from_view(&solver)).unwrap().passed);
    }

    #[test]
    fn convergent_run_passes_and_controls_fail() {
        let (inst, solver, traj) = regquad_run();
        assert!(traj.records.len() > 10);
        let s = SpdMetric::identity(8);
        let fejer = check_fejer(&traj, &inst.oracle, &s).unwrap();
        assert!(fejer.passed, "{fejer:?}");
        assert!(check_separation(&traj, &solver, &inst.oracle).unwrap().passed);
        assert!(check_mu_bounds(&traj, &MuBounds::from_view(&solver)).unwrap().passed);
        let bad = corrupt_trajectory(&traj, 5, 1.0).unwrap();
        let report = check_fejer(&bad, &inst.oracle, &s).unwrap();
        assert!(!report.passed);
        assert!(matches!(report.first_violating_iter, Some(4) | Some(5)));
        let negated = check_separation(&traj, &NegatedKernel(&solver), &inst.oracle).unwrap();
        assert!(!negated.passed);
        assert!(compare_trajectories(&traj, &traj).unwrap().passed);
    }

    #[test]
    fn identity_kernel_mu_bounds_are_tight() {
        let (inst, _, _) = regquad_run();
        let mut prob = inst.problem.clone();
        prob.d = crate::operators::LipschitzMap::zero(8);
        prob.e = crate::operators::CocoerciveMap::zero(8);
        prob.k = crate::operators::SkewMap::zero(8);
        let solver = FourOpSolver::new(prob, KernelSpec::ScalarStep(Schedule::Constant(1.0))).unwrap();
        let b = MuBounds::from_view(&solver);
        assert_eq!((b.lower, b.upper), (1.0, 1.0));
        let traj = run(&Explicit(&solver), &inst.default_x0(), &Schedule::Constant(1.0), 1e-12, 10).unwrap();
        assert!(traj.records.iter().all(|r| r.mu == 0.0 || (r.mu - 1.0).abs() < 1e-15));
        assert!(check_mu_bounds(&traj, &b).unwrap().passed);
    }

    #[test]
    fn fit_rate_examples() {
        let geo: Vec<f64> = (0..50).map(|k| 0.8_f64.powi(k)).collect();
        let (slope, r2) = fit_rate(&geo, 1.0).unwrap();
        assert!((slope - 0.8_f64.ln()).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let (slope, _) = fit_rate(&[3.0; 20], 1.0).unwrap();
        assert!(slope.abs() < 1e-15);
        assert!(matches!(fit_rate(&[1.0; 9], 1.0), Err(Error::InsufficientData(_))));
        let mut holes = vec![0.0; 5];
        holes.extend(geo.iter().take(12));
        assert!(fit_rate(&holes, 1.0).is_ok());
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let traj = Trajectory {
            records: vec![],
            final_x: Point::zeros(1),
            status: Status::Error,
            error: None,
        };
        assert!(check_fejer(&traj, &Point::zeros(1), &SpdMetric::identity(1)).is_err());
    }

    #[test]
    fn table_has_one_line_per_report() {
        let r = CheckReport {
            name: "fejer".into(),
            max_violation: 0.0,
            first_violating_iter: None,
            passed: true,
            tolerance: 1e-9,
        };
        assert_eq!(render_table(&[r.clone(), r]).lines().count(), 3);
    }
}
