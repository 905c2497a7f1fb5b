//! Exact communication-cost accounting.
//!
//! Costs are counted in scalars transferred, matching the arithmetic of the
//! published worked examples; a bytes view is derivable (x4 for 32-bit
//! floats) but not primary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generic distillation scheme cost:
/// `(hidden_features + logits_server + logits_client) * dataset_size * rounds * clients`.
pub fn cost_generic(
    hidden_features: u64,
    logits_server: u64,
    logits_client: u64,
    dataset_size: u64,
    rounds: u64,
    clients: u64,
) -> u64 {
    (hidden_features + logits_server + logits_client) * dataset_size * rounds * clients
}

/// FedAvg cost: `(model_params_server + model_params_client) * rounds * clients`.
/// Independent of dataset size.
pub fn cost_fedavg(params_server: u64, params_client: u64, rounds: u64, clients: u64) -> u64 {
    (params_server + params_client) * rounds * clients
}

/// DL-SH cost: `(x_dist * logit_width + conf_size) * clients`.
pub fn cost_dlsh(x_dist_size: u64, logit_width: u64, conf_size: u64, clients: u64) -> u64 {
    (x_dist_size * logit_width + conf_size) * clients
}

/// DL-MH cost: `(x_dist * logit_width + conf_size + mask_size) * clients`.
pub fn cost_dlmh(
    x_dist_size: u64,
    logit_width: u64,
    conf_size: u64,
    mask_size: u64,
    clients: u64,
) -> u64 {
    (x_dist_size * logit_width + conf_size + mask_size) * clients
}

/// Incremental I-DL-MH cost: the downlink logit package only. No confidence
/// matrix and no mask traffic.
pub fn cost_idlmh_incremental(x_dist_size: u64, client_logit_width: u64, clients: u64) -> u64 {
    x_dist_size * client_logit_width * clients
}

/// Operand breakdown a report's total is recomputed from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostOperands {
    pub model_params_server: u64,
    pub model_params_client: u64,
    pub x_dist_size: u64,
    pub logit_width: u64,
    pub conf_size: u64,
    pub mask_size: u64,
    pub hidden_features: u64,
    pub rounds: u64,
    pub n_clients: u64,
}

/// Per-protocol scalar cost with its operand breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCostReport {
    pub protocol: String,
    pub operands: CostOperands,
    pub total: u64,
}

impl CommCostReport {
    pub fn fedavg(params_server: u64, params_client: u64, rounds: u64, clients: u64) -> Self {
        let operands = CostOperands {
            model_params_server: params_server,
            model_params_client: params_client,
            rounds,
            n_clients: clients,
            ..Default::default()
        };
        Self {
            protocol: "fedavg".into(),
            total: cost_fedavg(params_server, params_client, rounds, clients),
            operands,
        }
    }

    pub fn dlsh(x_dist_size: u64, logit_width: u64, conf_size: u64, clients: u64) -> Self {
        let operands = CostOperands {
            x_dist_size,
            logit_width,
            conf_size,
            n_clients: clients,
            ..Default::default()
        };
        Self {
            protocol: "dlsh".into(),
            total: cost_dlsh(x_dist_size, logit_width, conf_size, clients),
            operands,
        }
    }

    pub fn dlmh(
        x_dist_size: u64,
        logit_width: u64,
        conf_size: u64,
        mask_size: u64,
        clients: u64,
    ) -> Self {
        let operands = CostOperands {
            x_dist_size,
            logit_width,
            conf_size,
            mask_size,
            n_clients: clients,
            ..Default::default()
        };
        Self {
            protocol: "dlmh".into(),
            total: cost_dlmh(x_dist_size, logit_width, conf_size, mask_size, clients),
            operands,
        }
    }

    pub fn idlmh_incremental(x_dist_size: u64, client_logit_width: u64, clients: u64) -> Self {
        let operands = CostOperands {
            x_dist_size,
            logit_width: client_logit_width,
            n_clients: clients,
            ..Default::default()
        };
        Self {
            protocol: "idlmh-incremental".into(),
            total: cost_idlmh_incremental(x_dist_size, client_logit_width, clients),
            operands,
        }
    }

    /// Recompute the total from the stored operands.
    pub fn recompute(&self) -> Result<u64> {
        let o = &self.operands;
        match self.protocol.as_str() {
            "fedavg" => Ok(cost_fedavg(
                o.model_params_server,
                o.model_params_client,
                o.rounds,
                o.n_clients,
            )),
            "dlsh" => Ok(cost_dlsh(o.x_dist_size, o.logit_width, o.conf_size, o.n_clients)),
            "dlmh" => Ok(cost_dlmh(
                o.x_dist_size,
                o.logit_width,
                o.conf_size,
                o.mask_size,
                o.n_clients,
            )),
            "idlmh-incremental" => Ok(cost_idlmh_incremental(
                o.x_dist_size,
                o.logit_width,
                o.n_clients,
            )),
            other => Err(Error::invalid(format!("unknown protocol {other}"))),
        }
    }
}

/// Fixed operands for a cost sweep over per-client class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepOperands {
    pub x_dist_size: u64,
    /// Full label-space width, used by DL-SH uploads.
    pub full_logit_width: u64,
    pub conf_size: u64,
    pub params_server: u64,
    pub params_client: u64,
    pub rounds: u64,
    pub n_clients: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub classes: u64,
    pub fedavg: u64,
    pub dlsh: u64,
    pub dlmh: u64,
}

/// Costs per per-client class count. FedAvg and DL-SH do not depend on the
/// class count; DL-MH grows with it (logit width and mask size both equal
/// the count).
pub fn cost_sweep(class_counts: &[u64], fixed: &SweepOperands) -> Result<Vec<SweepRow>> {
    if class_counts.is_empty() {
        return Err(Error::invalid("empty class-count list"));
    }
    Ok(class_counts
        .iter()
        .map(|&classes| SweepRow {
            classes,
            fedavg: cost_fedavg(
                fixed.params_server,
                fixed.params_client,
                fixed.rounds,
                fixed.n_clients,
            ),
            dlsh: cost_dlsh(
                fixed.x_dist_size,
                fixed.full_logit_width,
                fixed.conf_size,
                fixed.n_clients,
            ),
            dlmh: cost_dlmh(
                fixed.x_dist_size,
                classes,
                fixed.conf_size,
                classes,
                fixed.n_clients,
            ),
        })
        .collect())
}

/// CSV rendering of a sweep: header `classes,fedavg,dlsh,dlmh`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("classes,fedavg,dlsh,dlmh\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.classes, r.fedavg, r.dlsh, r.dlmh));
    }
    out
}
