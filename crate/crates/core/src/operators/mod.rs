//! Operator oracles: resolvents of set-valued parts, single-valued maps with
//! declared constants, and separable nonlinear kernels.

mod maps;
mod nonlinear;
mod prox;

pub use maps::{
    apply_skew, check_skew, sampled_cocoercivity_ratio, sampled_lipschitz_ratio, AffineMap, CocoerciveMap,
    LipschitzMap, SkewMap,
};
pub use nonlinear::{
    scalar_nonlinear_resolvent, separable_nonlinear_resolvent, NonlinearKernel, ScalarKernel, RESOLVENT_TOL,
};
pub use prox::{ProxBlock, ProxOperator, ScalarMonotone};
