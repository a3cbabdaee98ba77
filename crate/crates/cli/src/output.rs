//! Trajectory CSVs and JSON run summaries.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nofob::diagnostics::CheckReport;
use nofob::nofob::Trajectory;
use nofob::{Point, SpdMetric};
use serde::Serialize;

pub const CSV_HEADER: [&str; 6] = ["iter", "residual_S", "dist_to_oracle_S", "mu", "theta", "psi_at_x"];

/// 17 significant digits: every finite double round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Opens `path` for writing before any work is done, so unwritable paths fail fast.
pub fn create(path: &Path) -> std::io::Result<File> {
    File::create(path)
}

/// One row per iteration. `theta` is the relaxation the update realizes, so
/// the step is `theta * mu` along `S^{-1}(M x - M x_hat)`.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory, oracle: &Point, s: &SpdMetric) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for rec in &traj.records {
        w.write_record([
            rec.k.to_string(),
            fmt_f64(rec.residual_s),
            fmt_f64(s.norm(&(&rec.x - oracle))),
            fmt_f64(rec.mu),
            fmt_f64(rec.effective_theta()),
            fmt_f64(rec.psi_at_x),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub algorithm: String,
    pub seed: u64,
    pub status: String,
    pub iterations: usize,
    pub final_residual: f64,
    pub dist_to_oracle: f64,
    pub fitted_rate: Option<f64>,
    pub checks: Vec<CheckReport>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)
}
