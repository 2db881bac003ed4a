//! CSV output for run metrics and oracle tables.
//!
//! The writer is deliberately hand-rolled: every cell is a plain number,
//! so there is nothing to quote, and building the full byte string before
//! writing keeps reruns bit-identical and partially written files out of
//! the run directory.

use std::path::Path;

use ben_core::trainer::RunMetrics;

use crate::oracle::OracleTable;
use crate::CliResult;

pub const METRICS_HEADER: &str =
    "seed,episode,t,action,reward,cum_return,victims_saved,hazards_hit,msbbe,elbo";

pub fn metrics_to_csv(metrics: &RunMetrics) -> String {
    let mut out = String::with_capacity(64 * (metrics.rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in &metrics.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.episode,
            r.t,
            r.action,
            r.reward,
            r.cum_return,
            r.victims_saved,
            r.hazards_hit,
            r.msbbe,
            r.elbo
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &RunMetrics) -> CliResult<()> {
    std::fs::write(path, metrics_to_csv(metrics))?;
    Ok(())
}

pub fn oracle_to_csv(table: &OracleTable) -> String {
    let mut out = String::from("quantity,value,method\n");
    for row in table.rows() {
        out.push_str(&format!("{},{},{}\n", row.quantity, row.value, row.method));
    }
    out
}

pub fn write_oracle_csv(path: &Path, table: &OracleTable) -> CliResult<()> {
    std::fs::write(path, oracle_to_csv(table))?;
    Ok(())
}
