//! The tiger oracle table: closed-form quantities next to the belief-grid
//! value-iteration optimum, each labelled with how it was computed.

use ben_core::envs::TigerConfig;
use ben_core::oracles::{belief_value_iteration, contextual_q_values, j_listen, qbrl_value};

use crate::CliResult;

const VI_RESOLUTION: usize = 2001;
const VI_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OracleRow {
    pub quantity: &'static str,
    pub value: f64,
    pub method: &'static str,
}

#[derive(Debug, Clone)]
pub struct OracleTable {
    rows: Vec<OracleRow>,
}

impl OracleTable {
    pub fn rows(&self) -> &[OracleRow] {
        &self.rows
    }

    pub fn value(&self, quantity: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.quantity == quantity)
            .map(|r| r.value)
    }

    /// Render the aligned text table that `ben oracle` prints.
    pub fn render(&self) -> String {
        let mut out = String::from("quantity   value                 method\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<21} {}\n",
                r.quantity, r.value, r.method
            ));
        }
        out
    }
}

/// Compute every oracle quantity for one tiger configuration. `v_half`
/// runs belief value iteration at resolution 2001 to tolerance 1e-8; the
/// rest are closed forms.
pub fn compute_oracle(cfg: &TigerConfig) -> CliResult<OracleTable> {
    let (q_correct, q_wrong) = contextual_q_values(cfg);
    let grid = belief_value_iteration(cfg, VI_RESOLUTION, VI_TOL)?;
    let rows = vec![
        OracleRow {
            quantity: "q_correct",
            value: q_correct,
            method: "analytic",
        },
        OracleRow {
            quantity: "q_wrong",
            value: q_wrong,
            method: "analytic",
        },
        OracleRow {
            quantity: "j_qbrl",
            value: qbrl_value(cfg, 0.5),
            method: "analytic",
        },
        OracleRow {
            quantity: "j_listen",
            value: j_listen(cfg),
            method: "analytic",
        },
        OracleRow {
            quantity: "v_half",
            value: grid.value(0.5),
            method: "value-iteration",
        },
    ];
    Ok(OracleTable { rows })
}
