//! Browser bindings: each export returns a JSON document the page plots.
//!
//! The `*_json` functions carry the logic and run natively under `cargo test`;
//! the exported wrappers only convert errors for JavaScript.

use nofob::algorithms::{build_solver, AlgorithmConfig, AlgorithmKind};
use nofob::diagnostics::fit_rate;
use nofob::four_op::fbs_theta;
use nofob::nofob::{Schedule, DEFAULT_EPS_THETA};
use nofob::problems::{make_nonlinear_kernel_demo, make_problem, make_rotation_vi, ProblemParams};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Iteration cap for every browser run.
const MAX_ITER: usize = 5_000;
const STOP_TOL: f64 = 1e-10;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn fitted(residuals: &[f64]) -> Option<f64> {
    fit_rate(residuals, 0.5).ok().map(|(slope, _)| slope)
}

/// Residual curves of plain FBS, conservative FBF and long-step FBF on the
/// 90-degree rotation at step `gamma`.
pub fn rotation_curves_json(gamma: f64, max_iter: usize) -> Result<String, String> {
    let inst = make_rotation_vi(90.0, 1.0, 2).map_err(err)?;
    let cfg = AlgorithmConfig {
        gamma: Some(Schedule::Constant(gamma)),
        ..Default::default()
    };
    let mut curves = serde_json::Map::new();
    for kind in [AlgorithmKind::Fbs, AlgorithmKind::Fbf, AlgorithmKind::FbfLong] {
        let t = build_solver(kind, &inst, &cfg)
            .and_then(|s| s.run(&inst.default_x0(), STOP_TOL, max_iter.clamp(1, MAX_ITER)))
            .map_err(err)?;
        let res = t.residuals();
        curves.insert(
            kind.name().to_string(),
            json!({ "residuals": res, "status": t.status.to_string(), "rate": fitted(&res) }),
        );
    }
    Ok(json!({ "gamma": gamma, "curves": curves }).to_string())
}

/// Relaxed FBS on the regularized quadratic over `points` steps up to `(4 - 0.1) / beta_E`.
pub fn fbs_sweep_json(seed: u32, points: usize) -> Result<String, String> {
    let inst = make_problem("regquad-fbs", &ProblemParams { seed: seed.into(), ..Default::default() }).map_err(err)?;
    let beta = inst.problem.beta_e();
    let points = points.clamp(2, 40);
    let top = (4.0 - 0.1) / beta;
    let mut rows = Vec::with_capacity(points);
    for i in 1..=points {
        let gamma = top * i as f64 / points as f64;
        let theta = fbs_theta(beta, gamma, DEFAULT_EPS_THETA);
        let cfg = AlgorithmConfig {
            gamma: Some(Schedule::Constant(gamma)),
            theta: Some(Schedule::Constant(theta)),
            ..Default::default()
        };
        let t = build_solver(AlgorithmKind::FbsRelaxed, &inst, &cfg)
            .and_then(|s| s.run(&inst.default_x0(), 1e-8, MAX_ITER))
            .map_err(err)?;
        rows.push(json!({
            "gamma": gamma,
            "theta": theta,
            "iterations": t.records.len(),
            "status": t.status.to_string(),
            "rate": fitted(&t.residuals()),
        }));
    }
    Ok(json!({ "beta": beta, "two_over_beta": 2.0 / beta, "rows": rows }).to_string())
}

/// Four-operator run with the arctan-perturbed kernel.
pub fn nonlinear_demo_json(n: usize, coupling: f64, seed: u32) -> Result<String, String> {
    let (inst, _) = make_nonlinear_kernel_demo(n.clamp(2, 100), 0.1, seed.into(), coupling).map_err(err)?;
    let s = build_solver(AlgorithmKind::FourOp, &inst, &AlgorithmConfig::default()).map_err(err)?;
    let t = s.run(&inst.default_x0(), STOP_TOL, MAX_ITER).map_err(err)?;
    let dist: Vec<f64> = t.records.iter().map(|r| (&r.x - &inst.oracle).norm()).collect();
    let mu: Vec<f64> = t.records.iter().map(|r| r.mu).collect();
    Ok(json!({
        "residuals": t.residuals(),
        "distance": dist,
        "mu": mu,
        "status": t.status.to_string(),
        "solution": inst.oracle.as_slice(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn rotation_curves(gamma: f64, max_iter: usize) -> Result<String, JsError> {
    rotation_curves_json(gamma, max_iter).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fbs_sweep(seed: u32, points: usize) -> Result<String, JsError> {
    fbs_sweep_json(seed, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn nonlinear_demo(n: usize, coupling: f64, seed: u32) -> Result<String, JsError> {
    nonlinear_demo_json(n, coupling, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn rotation_curves_show_divergence_and_contraction() {
        let v = parse(&rotation_curves_json(0.7, 300).unwrap());
        let c = &v["curves"];
        assert_eq!(c["fbs"]["status"], "max_iter");
        assert_eq!(c["fbf"]["status"], "converged");
        assert_eq!(c["fbf-long"]["status"], "converged");
        let growth = c["fbs"]["rate"].as_f64().unwrap();
        assert!((growth - 1.49f64.sqrt().ln()).abs() < 1e-6);
        let long = c["fbf-long"]["residuals"].as_array().unwrap().len();
        let short = c["fbf"]["residuals"].as_array().unwrap().len();
        assert!(long <= short);
    }

    #[test]
    fn fbs_sweep_converges_across_the_range() {
        let v = parse(&fbs_sweep_json(0, 6).unwrap());
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r["status"] == "converged" && r["rate"].as_f64().unwrap() < 0.0));
        assert!(rows.last().unwrap()["gamma"].as_f64().unwrap() > v["two_over_beta"].as_f64().unwrap());
    }

    #[test]
    fn nonlinear_demo_reaches_the_solution() {
        let v = parse(&nonlinear_demo_json(12, 0.5, 1).unwrap());
        assert_eq!(v["status"], "converged");
        let d = v["distance"].as_array().unwrap();
        assert!(d.last().unwrap().as_f64().unwrap() < 1e-8);
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(rotation_curves_json(-1.0, 10).is_err());
        assert!(nonlinear_demo_json(10, f64::NAN, 0).is_err());
    }
}
