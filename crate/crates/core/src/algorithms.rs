//! Named algorithms built on the four-operator and projective-splitting steps.
//!
//! Every [`Solver`] carries a step rule and a [`FourOpSolver`] view whose
//! kernel, metrics and constants describe the step for the diagnostics.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::four_op::{
    afba_fixed_step_check, chambolle_pock_metric, conservative_iterate, fbs_relaxed_iterate, fbs_theta,
    gamma_bound_conservative, gamma_bound_long, metric_cocoercivity, FourOpProblem, FourOpSolver, KernelSpec,
};
use crate::linalg::{spectral_norm, Point, SpdMetric};
use crate::nofob::{
    assemble_record, nofob_conservative_iterate, nofob_iterate, run, IterRecord, Iteration, NofobProblem, Schedule,
    Trajectory, DEFAULT_EPS_THETA,
};
use crate::operators::SkewMap;
use crate::problems::ProblemInstance;
use crate::projective::{PsForm, PsIteration, PsProblem};

/// Safety factor applied to step bounds when no step is configured.
const DEFAULT_STEP_FRACTION: f64 = 0.9;
/// `eps` in the step bounds when none is configured.
pub const DEFAULT_EPS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmKind {
    /// Conservative step with `E = 0`.
    Fbf,
    /// Conservative step.
    Fbhf,
    /// Explicit projection with `Q = I / gamma`, `E = 0`.
    FbfLong,
    /// Explicit projection with `Q = I / gamma`.
    FbhfLong,
    /// Explicit projection with the Chambolle-Pock kernel on a primal-dual problem.
    Afba,
    /// Fixed step `theta mu = 1` with the Chambolle-Pock kernel.
    AfbaFixed,
    /// Plain forward-backward step `x+ = x_hat`.
    Fbs,
    /// Relaxed forward-backward step in a metric, `D = K = 0`.
    FbsRelaxed,
    /// Explicit projection with the problem's natural kernel.
    FourOp,
    PsExplicit,
    PsResolvent,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 11] = [
        AlgorithmKind::Fbf,
        AlgorithmKind::Fbhf,
        AlgorithmKind::FbfLong,
        AlgorithmKind::FbhfLong,
        AlgorithmKind::Afba,
        AlgorithmKind::AfbaFixed,
        AlgorithmKind::Fbs,
        AlgorithmKind::FbsRelaxed,
        AlgorithmKind::FourOp,
        AlgorithmKind::PsExplicit,
        AlgorithmKind::PsResolvent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Fbf => "fbf",
            AlgorithmKind::Fbhf => "fbhf",
            AlgorithmKind::FbfLong => "fbf-long",
            AlgorithmKind::FbhfLong => "fbhf-long",
            AlgorithmKind::Afba => "afba",
            AlgorithmKind::AfbaFixed => "afba-fixed",
            AlgorithmKind::Fbs => "fbs",
            AlgorithmKind::FbsRelaxed => "fbs-relaxed",
            AlgorithmKind::FourOp => "four-op",
            AlgorithmKind::PsExplicit => "ps-explicit",
            AlgorithmKind::PsResolvent => "ps-resolvent",
        }
    }

    /// Whether the step is the conservative short step.
    pub fn is_conservative(self) -> bool {
        matches!(self, AlgorithmKind::Fbf | AlgorithmKind::Fbhf)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = AlgorithmKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidParameter(format!("unknown algorithm '{s}'; known: {}", names.join(", ")))
            })
    }
}

/// Algorithm parameters; unset fields take per-algorithm defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlgorithmConfig {
    /// Step `gamma_k` for scalar-step methods.
    pub gamma: Option<Schedule>,
    /// Block steps: `tau_1..tau_n` for projective splitting, `(sigma, tau)` for AFBA.
    pub tau: Option<Vec<f64>>,
    /// Relaxation `theta_k`.
    pub theta: Option<Schedule>,
    /// `eps` used in the step bounds.
    pub eps: Option<f64>,
    /// Metric `M` for `fbs-relaxed`; identity when unset.
    pub metric: Option<SpdMetric>,
}

/// A configured algorithm ready to run.
pub struct Solver {
    pub kind: AlgorithmKind,
    step: Box<dyn Iteration + Send + Sync>,
    /// Kernel, metrics and constants describing the step.
    pub view: FourOpSolver,
    pub theta: Schedule,
    /// Scalar step, for the methods that have one.
    pub gamma: Option<Schedule>,
}

impl Solver {
    pub fn run(&self, x0: &Point, tol: f64, max_iter: usize) -> Result<Trajectory> {
        run(self.step.as_ref(), x0, &self.theta, tol, max_iter)
    }

    pub fn step(&self, k: usize, x: &Point) -> Result<IterRecord> {
        self.step.step(k, x, self.theta.value(k))
    }

    pub fn metric_s(&self) -> &SpdMetric {
        self.view.metric_s()
    }
}

struct ExplicitStep(FourOpSolver);

impl Iteration for ExplicitStep {
    fn step(&self, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
        nofob_iterate(&self.0, k, x, theta)
    }
}

struct ConservativeStep {
    problem: FourOpProblem,
    gamma: Schedule,
}

impl Iteration for ConservativeStep {
    fn step(&self, k: usize, x: &Point, _theta: f64) -> Result<IterRecord> {
        conservative_iterate(&self.problem, self.gamma.value(k), k, x)
    }
}

/// `x+ = x_hat`, recorded as the short step `mu_hat = gamma` with `theta = 1`.
struct PlainFbsStep {
    view: FourOpSolver,
    gamma: Schedule,
}

impl Iteration for PlainFbsStep {
    fn step(&self, k: usize, x: &Point, _theta: f64) -> Result<IterRecord> {
        let x_hat = self.view.forward_backward(k, x)?;
        let mut rec = assemble_record(&self.view, k, x, x_hat, 1.0, Some(self.gamma.value(k)))?;
        rec.x_next = rec.x_hat.clone();
        Ok(rec)
    }
}

struct RelaxedFbsStep {
    view: FourOpSolver,
    metric: SpdMetric,
    gamma: Schedule,
}

impl Iteration for RelaxedFbsStep {
    fn step(&self, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
        let g = self.gamma.value(k);
        let p = self.view.problem();
        let x_next = fbs_relaxed_iterate(&p.b, &p.e, &self.metric, g, theta, x)?;
        let x_hat = self.view.forward_backward(k, x)?;
        let mut rec = assemble_record(&self.view, k, x, x_hat, theta, None)?;
        if rec.mu != 0.0 {
            rec.x_next = x_next;
        }
        Ok(rec)
    }
}

/// `theta_k mu_k = 1`: the conservative update with `mu_hat = 1`.
struct FixedStep(FourOpSolver);

impl Iteration for FixedStep {
    fn step(&self, k: usize, x: &Point, theta: f64) -> Result<IterRecord> {
        nofob_conservative_iterate(&self.0, k, x, theta, 1.0 / theta)
    }
}

fn scalar_gamma(cfg: &AlgorithmConfig, default: impl FnOnce() -> Result<f64>) -> Result<Schedule> {
    let g = match cfg.gamma {
        Some(g) => g,
        None => Schedule::Constant(default()?),
    };
    g.check_positive()?;
    Ok(g)
}

fn require_no_e(kind: AlgorithmKind, prob: &FourOpProblem) -> Result<()> {
    if !prob.e.is_zero() {
        return Err(Error::Incompatible(format!(
            "{kind} needs E = 0; use the half-forward variant for problems with a cocoercive part"
        )));
    }
    Ok(())
}

fn require_ps(kind: AlgorithmKind, inst: &ProblemInstance) -> Result<PsProblem> {
    inst.ps
        .clone()
        .ok_or_else(|| Error::Incompatible(format!("{kind} needs a primal-dual problem; '{}' has none", inst.name)))
}

/// Stacked coupling `[L_1; ...; L_{n-1}]`.
fn stacked_coupling(ps: &PsProblem) -> DMatrix<f64> {
    let rows: usize = ps.dual_dims().iter().sum();
    let mut l = DMatrix::zeros(rows, ps.primal_dim());
    let mut start = 0;
    for li in ps.l_maps() {
        l.view_mut((start, 0), li.shape()).copy_from(li);
        start += li.nrows();
    }
    l
}

/// Chambolle-Pock view `Q = P + K` on the stacked `(w, x)` space.
fn afba_view(inst: &ProblemInstance, ps: &PsProblem, cfg: &AlgorithmConfig) -> Result<FourOpSolver> {
    let l = stacked_coupling(ps);
    let norm = spectral_norm(&l);
    let (sigma, tau) = match cfg.tau.as_deref() {
        Some([s, t]) => (*s, *t),
        Some(other) => return invalid(format!("afba takes two steps (sigma, tau), got {}", other.len())),
        None if norm > 0.0 => (DEFAULT_STEP_FRACTION.sqrt() / norm, DEFAULT_STEP_FRACTION.sqrt() / norm),
        None => (1.0, 1.0),
    };
    if !(sigma * tau * norm * norm < 1.0) {
        return invalid(format!(
            "sigma tau ||L||^2 = {} must be below 1 for a positive definite metric",
            sigma * tau * norm * norm
        ));
    }
    let p = chambolle_pock_metric(&l, sigma, tau)?;
    let g = SkewMap::new(inst.problem.k.matrix().clone())?;
    FourOpSolver::new(inst.problem.clone(), KernelSpec::AffinePlusSkew { p, g })
}

/// Default step for the conservative variants.
pub fn default_conservative_gamma(prob: &FourOpProblem, eps: f64) -> Result<f64> {
    Ok(DEFAULT_STEP_FRACTION * gamma_bound_conservative(prob.beta_e(), prob.l_d(), prob.k_norm(), eps)?)
}

/// Default step for the long-step variants.
pub fn default_long_gamma(prob: &FourOpProblem, eps: f64) -> Result<f64> {
    Ok(DEFAULT_STEP_FRACTION * gamma_bound_long(prob.beta_e(), prob.l_d(), eps)?)
}

/// Builds `kind` for `inst`, validating compatibility and filling defaults.
pub fn build_solver(kind: AlgorithmKind, inst: &ProblemInstance, cfg: &AlgorithmConfig) -> Result<Solver> {
    let prob = &inst.problem;
    let eps = cfg.eps.unwrap_or(DEFAULT_EPS);
    let theta = cfg.theta.unwrap_or(Schedule::Constant(1.0));
    let mut gamma = None;
    let (step, view, theta): (Box<dyn Iteration + Send + Sync>, FourOpSolver, Schedule) = match kind {
        AlgorithmKind::Fbf | AlgorithmKind::Fbhf => {
            if kind == AlgorithmKind::Fbf {
                require_no_e(kind, prob)?;
            }
            let g = scalar_gamma(cfg, || default_conservative_gamma(prob, eps))?;
            let bound = gamma_bound_conservative(prob.beta_e(), prob.l_d(), prob.k_norm(), eps)?;
            if g.max() > bound {
                warn!("{kind}: gamma = {} exceeds the conservative bound {bound}", g.max());
            }
            gamma = Some(g);
            let view = FourOpSolver::new(prob.clone(), KernelSpec::ScalarStep(g))?;
            let step = ConservativeStep {
                problem: prob.clone(),
                gamma: g,
            };
            (Box::new(step), view, theta)
        }
        AlgorithmKind::FbfLong | AlgorithmKind::FbhfLong => {
            if kind == AlgorithmKind::FbfLong {
                require_no_e(kind, prob)?;
            }
            let g = scalar_gamma(cfg, || default_long_gamma(prob, eps))?;
            gamma = Some(g);
            let view = FourOpSolver::new(prob.clone(), KernelSpec::ScalarStep(g))?;
            (Box::new(ExplicitStep(view.clone())), view, theta)
        }
        AlgorithmKind::Fbs => {
            let beta_e = prob.beta_e();
            let g = scalar_gamma(cfg, || Ok(if beta_e > 0.0 { 1.0 / beta_e } else { 1.0 }))?;
            gamma = Some(g);
            let view = FourOpSolver::new(prob.clone(), KernelSpec::ScalarStep(g))?;
            let step = PlainFbsStep { view: view.clone(), gamma: g };
            (Box::new(step), view, Schedule::Constant(1.0))
        }
        AlgorithmKind::FbsRelaxed => {
            let metric = cfg.metric.clone().unwrap_or_else(|| SpdMetric::identity(prob.dim()));
            let beta_m = metric_cocoercivity(prob.beta_e(), &metric);
            let g = scalar_gamma(cfg, || {
                Ok(if beta_m > 0.0 {
                    DEFAULT_STEP_FRACTION * (4.0 - eps) / beta_m
                } else {
                    1.0
                })
            })?;
            gamma = Some(g);
            let spec = KernelSpec::ScaledMetric {
                gamma: g,
                metric: metric.clone(),
            };
            let view = FourOpSolver::new(prob.clone(), spec)?;
            let theta = cfg.theta.unwrap_or(Schedule::Constant(fbs_theta(beta_m, g.max(), DEFAULT_EPS_THETA)));
            let step = RelaxedFbsStep {
                view: view.clone(),
                metric,
                gamma: g,
            };
            (Box::new(step), view, theta)
        }
        AlgorithmKind::Afba | AlgorithmKind::AfbaFixed => {
            let ps = require_ps(kind, inst)?;
            let view = afba_view(inst, &ps, cfg)?;
            if kind == AlgorithmKind::Afba {
                (Box::new(ExplicitStep(view.clone())), view, theta)
            } else {
                let q = view.apply_q_matrix();
                if !afba_fixed_step_check(view.metric_p(), &q, &prob.k, view.metric_s(), view.beta(), DEFAULT_EPS_THETA) {
                    warn!("afba-fixed: the fixed step theta mu = 1 is outside the admissible range");
                }
                (Box::new(FixedStep(view.clone())), view, theta)
            }
        }
        AlgorithmKind::PsExplicit | AlgorithmKind::PsResolvent => {
            let mut ps = require_ps(kind, inst)?;
            if let Some(t) = &cfg.tau {
                let taus = match t.len() {
                    1 => vec![Schedule::Constant(t[0]); ps.n_ops()],
                    _ => t.iter().map(|v| Schedule::Constant(*v)).collect(),
                };
                ps = ps.with_taus(taus)?;
            }
            let view = ps.solver()?;
            let form = if kind == AlgorithmKind::PsExplicit {
                PsForm::Explicit
            } else {
                PsForm::Resolvent
            };
            (Box::new(PsIteration { problem: ps, form }), view, theta)
        }
        AlgorithmKind::FourOp => {
            let spec = if let Some(k) = &inst.kernel {
                KernelSpec::SeparableNonlinear(k.clone())
            } else if let Some(ps) = &inst.ps {
                ps.kernel_spec()
            } else {
                let g = scalar_gamma(cfg, || default_long_gamma(prob, eps))?;
                gamma = Some(g);
                KernelSpec::ScalarStep(g)
            };
            let view = FourOpSolver::new(prob.clone(), spec)?;
            (Box::new(ExplicitStep(view.clone())), view, theta)
        }
    };
    if !kind.is_conservative() && kind != AlgorithmKind::Fbs {
        theta.check_relaxation(f64::EPSILON.max(1e-12))?;
    }
    if view.beta() >= 4.0 {
        warn!("{kind}: beta = {} is at least 4", view.beta());
    }
    Ok(Solver {
        kind,
        step,
        view,
        theta,
        gamma,
    })
}
