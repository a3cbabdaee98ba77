//! Run configuration: flat `key = value` text, command-line overrides and `NOFOB_SEED`.
//!
//! Grammar, one setting per line:
//!
//! ```text
//! line    := blank | comment | setting
//! comment := '#' any*
//! setting := key ws* '=' ws* value
//! ```
//!
//! Keys are the long flag names (`problem`, `gamma`, `max-iter`, ...). Later
//! settings win; flags win over the file; `NOFOB_SEED` wins over both.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nofob::algorithms::{AlgorithmConfig, AlgorithmKind};
use nofob::nofob::{Schedule, DEFAULT_STOP_TOL};
use nofob::problems::{ProblemParams, REGISTRY};

pub const SEED_ENV: &str = "NOFOB_SEED";
pub const DEFAULT_MAX_ITER: usize = 10_000;

pub const KEYS: [&str; 20] = [
    "problem",
    "algorithm",
    "gamma",
    "tau",
    "theta",
    "eps",
    "tol",
    "max-iter",
    "seed",
    "csv",
    "report",
    "x0",
    "corrupt-iter",
    "n",
    "m",
    "lambda",
    "angle",
    "scale",
    "coupling",
    "csv-dir",
];

/// Malformed, unknown or unreadable settings.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

/// Ordered settings; each key holds its last assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("config line {}: expected key = value, got '{line}'", i + 1));
            };
            s.set(k.trim(), v.trim()).map_err(|UsageError(m)| UsageError(format!("config line {}: {m}", i + 1)))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Settings::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        if !KEYS.contains(&key) {
            return usage(format!("unknown key '{key}'; known: {}", KEYS.join(", ")));
        }
        if value.is_empty() {
            return usage(format!("key '{key}' has an empty value"));
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// `key=value` from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), UsageError> {
        match pair.split_once('=') {
            Some((k, v)) => self.set(k.trim(), v.trim()),
            None => usage(format!("expected key=value, got '{pair}'")),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| UsageError(format!("cannot parse {key} = '{v}'"))))
            .transpose()
    }

    /// Applies `NOFOB_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), UsageError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            if v.trim().parse::<u64>().is_err() {
                return usage(format!("{SEED_ENV} = '{v}' is not a non-negative integer"));
            }
            self.set("seed", v.trim())?;
        }
        Ok(())
    }
}

/// `v` for a constant schedule, `a:b` for one alternating between even and odd iterations.
pub fn parse_schedule(text: &str) -> Result<Schedule, UsageError> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| UsageError(format!("'{s}' is not a finite number")))
    };
    match text.split_once(':') {
        Some((a, b)) => Ok(Schedule::Alternating(num(a)?, num(b)?)),
        None => Ok(Schedule::Constant(num(text)?)),
    }
}

/// Where the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPoint {
    Ones,
    Zeros,
    Oracle,
}

impl FromStr for StartPoint {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "ones" => Ok(StartPoint::Ones),
            "zeros" => Ok(StartPoint::Zeros),
            "oracle" => Ok(StartPoint::Oracle),
            other => usage(format!("x0 must be ones, zeros or oracle, got '{other}'")),
        }
    }
}

/// One fully resolved problem x algorithm run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub params: ProblemParams,
    pub algorithm: AlgorithmKind,
    pub alg: AlgorithmConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub x0: StartPoint,
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub corrupt_iter: Option<usize>,
}

pub fn check_problem(name: &str) -> Result<(), UsageError> {
    if REGISTRY.contains(&name) {
        Ok(())
    } else {
        usage(format!("unknown problem '{name}'; known: {}", REGISTRY.join(", ")))
    }
}

pub fn parse_algorithm(name: &str) -> Result<AlgorithmKind, UsageError> {
    name.parse().map_err(|e: nofob::Error| UsageError(e.to_string()))
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, UsageError> {
        let problem = s.get("problem").ok_or(UsageError("missing problem".into()))?.to_string();
        check_problem(&problem)?;
        let algorithm = parse_algorithm(s.get("algorithm").ok_or(UsageError("missing algorithm".into()))?)?;
        let params = ProblemParams {
            n: s.parsed("n")?,
            m: s.parsed("m")?,
            lambda: s.parsed("lambda")?,
            seed: s.parsed("seed")?.unwrap_or(0),
            angle: s.parsed("angle")?,
            scale: s.parsed("scale")?,
            coupling: s.parsed("coupling")?,
        };
        let tau = s
            .get("tau")
            .map(|t| {
                t.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| UsageError(format!("bad tau entry '{v}'"))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        let alg = AlgorithmConfig {
            gamma: s.get("gamma").map(parse_schedule).transpose()?,
            tau,
            theta: s.get("theta").map(parse_schedule).transpose()?,
            eps: s.parsed("eps")?,
            metric: None,
        };
        let tol = s.parsed("tol")?.unwrap_or(DEFAULT_STOP_TOL);
        let max_iter = s.parsed("max-iter")?.unwrap_or(DEFAULT_MAX_ITER);
        if !(tol > 0.0) || max_iter == 0 {
            return usage("tol must be positive and max-iter at least 1");
        }
        Ok(RunConfig {
            problem,
            params,
            algorithm,
            alg,
            tol,
            max_iter,
            x0: s.parsed("x0")?.unwrap_or(StartPoint::Ones),
            csv: s.get("csv").map(PathBuf::from),
            report: s.get("report").map(PathBuf::from),
            corrupt_iter: s.parsed("corrupt-iter")?,
        })
    }
}

/// Comma-separated list under `key`, or `[default]` when absent.
pub fn list(s: &Settings, key: &str) -> Vec<String> {
    s.get(key)
        .map(|v| v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let s = Settings::parse("# run\nproblem = rotation\nalgorithm=fbf\n\ngamma = 0.7\ngamma = 0.5\n").unwrap();
        let c = RunConfig::from_settings(&s).unwrap();
        assert_eq!(c.problem, "rotation");
        assert_eq!(c.algorithm, AlgorithmKind::Fbf);
        assert_eq!(c.alg.gamma, Some(Schedule::Constant(0.5)));
        assert_eq!(c.max_iter, DEFAULT_MAX_ITER);
    }

    #[test]
    fn rejects_unknown_keys_and_names() {
        assert!(matches!(Settings::parse("colour = red"), Err(UsageError(_))));
        assert!(matches!(Settings::parse("problem"), Err(UsageError(_))));
        let s = Settings::parse("problem = lasso\nalgorithm = fbf").unwrap();
        assert!(matches!(RunConfig::from_settings(&s), Err(UsageError(_))));
        let s = Settings::parse("problem = rotation\nalgorithm = admm").unwrap();
        assert!(matches!(RunConfig::from_settings(&s), Err(UsageError(_))));
    }

    #[test]
    fn schedules() {
        assert_eq!(parse_schedule("0.25").unwrap(), Schedule::Constant(0.25));
        assert_eq!(parse_schedule("0.5:0.9").unwrap(), Schedule::Alternating(0.5, 0.9));
        assert!(parse_schedule("fast").is_err());
        assert!(parse_schedule("inf").is_err());
    }

    #[test]
    fn lists() {
        let s = Settings::parse("gamma = 0.1, 0.2,0.3").unwrap();
        assert_eq!(list(&s, "gamma"), ["0.1", "0.2", "0.3"]);
        assert!(list(&s, "problem").is_empty());
    }
}
