//! I-DL-MH: the incentive path back to the clients.
//!
//! After global training the server reshapes its logits for every opted-in
//! client: each row's maximum is reassigned to the nearest class the client
//! actually holds, the row is zeroed elsewhere, and the result is remapped
//! into the client's local label space. The client then distills once from
//! `(X_dist, targets)` — the only new traffic is the logit package itself.

use crate::commcost::CommCostReport;
use crate::config::{ExperimentConfig, IncentiveSource, IncentiveTarget};
use crate::data::UnlabeledDataset;
use crate::dlmh::{run_dlmh_state, MaskDict};
use crate::error::{Error, Result, StageExt};
use crate::harness::{Direction, MetricsRecord, RunOutcome};
use crate::nn::{forward, soft_train, TrainConfig, TrainedModel};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// The per-client incentive payload, already in the client's local label
/// space. In soft mode rows carry one value-preserving nonzero; in hard mode
/// rows are one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentivePackage {
    pub client_index: usize,
    pub targets: Tensor,
    pub mode: IncentiveTarget,
}

impl IncentivePackage {
    pub fn scalar_count(&self) -> u64 {
        self.targets.len() as u64
    }
}

/// Reassign each row's maximum logit to the nearest class the client holds.
///
/// Per row: take the row maximum over all global classes, pick the held
/// class `j` minimizing `max - row[j]` (ties to the lowest class, since only
/// strict improvements replace the initial `d[0]`), zero the row and write
/// the maximum at the chosen class.
pub fn transform_logits_for_client(
    server_logits: &Tensor,
    client_classes: &[usize],
) -> Result<Tensor> {
    if client_classes.is_empty() {
        return Err(Error::invalid("client class list is empty"));
    }
    let width = server_logits.row_len();
    if let Some(&bad) = client_classes.iter().find(|&&c| c >= width) {
        return Err(Error::invalid(format!(
            "client class {bad} out of range for {width} global classes"
        )));
    }
    let n = server_logits.n_rows();
    let mut out = vec![0.0; n * width];
    for s in 0..n {
        let row = server_logits.row(s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut best = client_classes[0];
        let mut best_gap = max - row[best];
        for &j in &client_classes[1..] {
            let gap = max - row[j];
            if gap < best_gap {
                best_gap = gap;
                best = j;
            }
        }
        out[s * width + best] = max;
    }
    Tensor::new(vec![n, width], out)
}

/// Column-select transformed global rows into the client's local space.
///
/// Soft mode preserves the single nonzero value; hard mode emits a one-hot
/// row at its local position. The transform contract guarantees every
/// nonzero sits on a schema class; anything else is an internal error.
pub fn remap_to_client_space(
    transformed: &Tensor,
    schema: &MaskDict,
    client_index: usize,
    mode: IncentiveTarget,
) -> Result<IncentivePackage> {
    let k = schema.len();
    let n = transformed.n_rows();
    let mut out = vec![0.0; n * k];
    for s in 0..n {
        let row = transformed.row(s);
        let mut chosen: Option<usize> = None;
        for (g, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if schema.local_of(g).is_none() {
                return Err(Error::Internal(format!(
                    "transformed row {s} has value {v} at class {g}, outside the schema"
                )));
            }
            // Transformed rows carry at most one nonzero; keep the largest
            // magnitude in case a caller hands in a denser row.
            if chosen.is_none_or(|c| v.abs() > row[c].abs()) {
                chosen = Some(g);
            }
        }
        let dst = &mut out[s * k..(s + 1) * k];
        match mode {
            IncentiveTarget::Soft => {
                for local in 0..k {
                    dst[local] = row[schema.class_list()[local]];
                }
            }
            IncentiveTarget::Hard => {
                // One-hot at the class the transform chose; an all-zero row
                // falls back to the client's lowest class.
                let local = chosen.map(|g| schema.local_of(g).unwrap()).unwrap_or(0);
                dst[local] = 1.0;
            }
        }
    }
    Ok(IncentivePackage {
        client_index,
        targets: Tensor::new(vec![n, k], out)?,
        mode,
    })
}

/// One round of client-side distillation from the incentive package over the
/// X_dist the client already holds.
///
/// Soft packages carry logit-space rows and are softened with a softmax
/// before the cross-entropy fit; hard packages are one-hot distributions
/// used as-is.
pub fn client_incentive_distill(
    client_model: &TrainedModel,
    pkg: &IncentivePackage,
    x_dist: &UnlabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if pkg.targets.row_len() != client_model.output_dim() {
        return Err(Error::invalid(format!(
            "package width {} does not match client head {}",
            pkg.targets.row_len(),
            client_model.output_dim()
        )));
    }
    let targets = match pkg.mode {
        IncentiveTarget::Soft => crate::dlsh::softmax_rows(&pkg.targets)?,
        IncentiveTarget::Hard => pkg.targets.clone(),
    };
    soft_train(client_model, x_dist.features(), &targets, cfg).stage("incentive-distill")
}

/// Run DL-MH, then the incentive round for every opted-in client.
pub fn run_idlmh(config: &ExperimentConfig) -> Result<RunOutcome> {
    let mut state = run_dlmh_state(config, "idlmh")?;
    let n_classes = state.bundle.n_classes();
    let selected = config.train.incentive_clients.selected(state.clients.len());

    let server_logits = match config.train.incentive_source {
        IncentiveSource::Logits => {
            forward(&state.global, state.bundle.x_dist.features()).stage("incentive")?
        }
        IncentiveSource::Yagg => state.y_g.clone(),
    };
    debug_assert_eq!(server_logits.row_len(), n_classes);

    for &i in &selected {
        let client = &state.clients[i];
        let transformed =
            transform_logits_for_client(&server_logits, client.schema.class_list())
                .stage("incentive")?;
        let pkg = remap_to_client_space(
            &transformed,
            &client.schema,
            i,
            config.train.incentive_target,
        )
        .stage("incentive")?;
        state
            .transcript
            .record(Direction::Downlink, i, "incentive", pkg.scalar_count());
        let incentive_seed = derive_seed(config.master_seed, "incentive-distill", i as u64);
        let updated = client_incentive_distill(
            &client.model,
            &pkg,
            &state.bundle.x_dist,
            &TrainConfig {
                epochs: config.train.epochs,
                learning_rate: config.train.learning_rate,
                batch_size: config.train.batch_size,
                seed: incentive_seed,
            },
        )?;

        let pre_full =
            crate::harness::accuracy_via_schema(&client.model, &state.bundle.test, &client.schema)
                .stage("evaluate")?;
        let post_full =
            crate::harness::accuracy_via_schema(&updated, &state.bundle.test, &client.schema)
                .stage("evaluate")?;
        let mut rows = vec![
            ("accuracy_full_pre_incentive", pre_full),
            ("accuracy_full_post_incentive", post_full),
        ];
        let own_subset = state
            .bundle
            .test
            .filter_by_classes(&client.data_classes)
            .stage("evaluate")?;
        if !own_subset.is_empty() {
            rows.push((
                "accuracy_own_pre_incentive",
                crate::harness::accuracy_via_schema(&client.model, &own_subset, &client.schema)
                    .stage("evaluate")?,
            ));
            rows.push((
                "accuracy_own_post_incentive",
                crate::harness::accuracy_via_schema(&updated, &own_subset, &client.schema)
                    .stage("evaluate")?,
            ));
        }
        for (name, value) in rows {
            state.metrics.push(MetricsRecord {
                run_id: state.run_id.clone(),
                protocol: "idlmh".into(),
                stage: "evaluate".into(),
                entity: format!("client-{i}"),
                metric: name.into(),
                value,
                seed: incentive_seed,
            });
        }
        state.costs.push(CommCostReport::idlmh_incremental(
            state.bundle.x_dist.len() as u64,
            client.schema.len() as u64,
            1,
        ));
        state.clients[i].model = updated;
    }

    let incremental: u64 = state
        .costs
        .iter()
        .filter(|c| c.protocol == "idlmh-incremental")
        .map(|c| c.total)
        .sum();
    state.metrics.push(MetricsRecord {
        run_id: state.run_id.clone(),
        protocol: "idlmh".into(),
        stage: "cost".into(),
        entity: "global".into(),
        metric: "comm_cost_incremental".into(),
        value: incremental as f64,
        seed: config.master_seed,
    });

    Ok(RunOutcome {
        metrics: state.metrics,
        transcript: state.transcript,
        costs: state.costs,
        y_g: Some(state.y_g),
    })
}

#[cfg(test)]
mod tests;
